//! Baseline and counterfactual-logit-pairing predictors: the pairing loss,
//! grid training, model selection and scoring of evaluation bundles.

mod loss;
mod predictor;
mod train;

use std::path::{Path, PathBuf};

pub use loss::{
    batch_fair_loss, clp_term, fair_loss, fair_loss_and_gradients, FairLoss, FairWeights,
    LatentChoice,
};
pub use predictor::{
    class_one_probability, HiddenLayers, InputMode, PredictorCache, PredictorGradients,
    PredictorHandle, PredictorInput, PredictorSpec,
};
pub use train::{
    evaluation_bundles, fair_predictor_spec, select_models, train_baseline, train_fair_predictor,
    BaselineCandidate, BaselineConfig, BaselineOutcome, BaselineSearchSpace, FairCandidate,
    FairTrainConfig, GridPoint, ResamplePolicy, ValidationScores,
};

use crate::cevae::CounterfactualBundle;
use crate::diffnet::checkpoint::{load_into, read_manifest, save_checkpoint};
use crate::error::{Error, Result};
use crate::metrics::{ScoredCounterfactual, ScoredSample};

/// Eval-mode factual and counterfactual predictions. Latent-input models
/// read the posterior mean; feature-input models read the factual features
/// and the sampled counterfactual features.
pub fn score_bundles(
    predictor: &PredictorHandle,
    bundles: &[CounterfactualBundle],
) -> Result<Vec<ScoredSample>> {
    let k = predictor.spec.group_count;
    let mut rows = Vec::with_capacity(bundles.len() * k);
    for b in bundles {
        loss::check_counterfactuals(b, k)?;
        match predictor.spec.input_mode {
            InputMode::Latent => {
                rows.push((PredictorInput::Latent(&b.posterior.mu), b.sample.a));
                for c in &b.counterfactuals {
                    rows.push((PredictorInput::Latent(&b.posterior.mu), c.a));
                }
            }
            InputMode::Features => {
                rows.push((PredictorInput::Features(&b.sample.x), b.sample.a));
                for c in &b.counterfactuals {
                    let x_cf = c.x_cf.as_deref().ok_or_else(|| {
                        Error::Validation(format!(
                            "sample {}: bundle lacks counterfactual features",
                            b.sample.id
                        ))
                    })?;
                    rows.push((PredictorInput::Features(x_cf), c.a));
                }
            }
        }
    }
    let logits = predictor.logits(&rows)?;
    // rows come back in the order they were pushed: factual, then each counterfactual
    let mut pairs = logits.rows().into_iter().map(|l| [l[0], l[1]]);
    let mut next = || pairs.next().expect("one logit row per input row");
    let mut out = Vec::with_capacity(bundles.len());
    for b in bundles {
        let logits_f = next();
        let counterfactuals = b
            .counterfactuals
            .iter()
            .map(|c| {
                let logits_cf = next();
                ScoredCounterfactual {
                    a: c.a,
                    y_cf: c.y_cf,
                    p_cf: class_one_probability(logits_cf),
                    logits_cf,
                }
            })
            .collect();
        out.push(ScoredSample {
            id: b.sample.id,
            a: b.sample.a,
            y: b.sample.y,
            p_f: class_one_probability(logits_f),
            logits_f,
            counterfactuals,
        });
    }
    Ok(out)
}

pub fn save_predictor(
    predictor: &PredictorHandle,
    path: impl AsRef<Path>,
    seed: u64,
    step: u64,
) -> Result<Vec<PathBuf>> {
    save_checkpoint(path, &predictor.spec, seed, step, predictor)
}

pub fn load_predictor(path: impl AsRef<Path>) -> Result<PredictorHandle> {
    let path = path.as_ref();
    let manifest = read_manifest::<PredictorSpec>(path)?;
    let mut predictor = PredictorHandle::new(manifest.spec.clone(), 0)?;
    load_into(path, &manifest, &mut predictor)?;
    Ok(predictor)
}
