//! Minimal differentiable feed-forward kernel: ReLU networks with optional
//! layer norm and inverted dropout, hand-written backward passes, a scalar
//! tape for loss heads, Adam, checkpoints and finite-difference checks.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
mod network;
mod params;
pub mod tape;

pub use adam::Adam;
pub use loss::{
    bce_from_logit, binary_cross_entropy, multi_output_mean_bce, sigmoid, softmax,
    softmax_cross_entropy, softplus, EPS_CLIP,
};
pub use network::{ForwardCache, Layer, LayerNorm, Mode, Network, NetworkParams, NetworkSpec};
pub use params::ParamStore;
pub(crate) use params::{prefixed, prefixed_mut};
pub use tape::{stop_gradient, Tape, Var};
