//! Fair clinical-style risk prediction under individual equalized
//! counterfactual odds.
//!
//! The pipeline: a causal-effect VAE ([`cevae`]) approximates the data
//! generating process and supplies counterfactual samples; a predictor is
//! trained with counterfactual logit pairing ([`fair`]); and [`metrics`]
//! measures performance, group fairness and counterfactual prediction gaps.
//! [`data`] provides a synthetic structural equation model with known
//! counterfactuals for validation.

// `!(x > 0.0)` is how validation rejects NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cevae;
pub mod data;
pub mod diffnet;
mod error;
pub mod fair;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
