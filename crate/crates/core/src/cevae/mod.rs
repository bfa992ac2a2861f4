//! Causal-effect VAE over sparse binary features with a discrete sensitive
//! attribute, plus abduction-action-prediction counterfactual sampling.

mod bundle;
pub mod mmd;
mod model;
mod train;

pub use bundle::{
    sample_counterfactual_bundle, sample_counterfactual_bundles, CounterfactualBundle,
    CounterfactualSample,
};
pub use mmd::{median_pairwise_distance, mmd_sq, mmd_sq_with_grad, rbf_kernel, Bandwidth};
pub use model::{
    gaussian_kl, sample_latent, Cevae, CevaeArchitecture, CevaeGradients, CevaeLoss, CevaeSpec,
    GaussianPosterior, LossWeights,
};
pub use train::{
    load_cevae, save_cevae, train_cevae, validation_loss, CevaeTrainConfig, CevaeTrainOutcome,
    EpochRecord,
};
