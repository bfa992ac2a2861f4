use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{Cevae, CevaeLoss, CevaeSpec};
use crate::data::LabeledSample;
use crate::diffnet::checkpoint::{load_into, read_manifest, save_checkpoint};
use crate::diffnet::Adam;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CevaeTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for CevaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-4,
            batch_size: 512,
        }
    }
}

impl CevaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("cevae batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(
                "cevae learning_rate must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub validation: CevaeLoss,
}

#[derive(Debug, Clone)]
pub struct CevaeTrainOutcome {
    pub model: Cevae,
    pub initial_validation: CevaeLoss,
    pub trace: Vec<EpochRecord>,
    /// 0 when no epoch beat the initial parameters.
    pub best_epoch: usize,
}

/// Size-weighted mean of the eval-mode loss over fixed-order batches.
pub fn validation_loss(
    model: &Cevae,
    samples: &[LabeledSample],
    batch_size: usize,
    seed: u64,
) -> Result<CevaeLoss> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("cevae validation set"));
    }
    let refs: Vec<&LabeledSample> = samples.iter().collect();
    let mut acc = CevaeLoss::default();
    for (b, chunk) in refs.chunks(batch_size.max(1)).enumerate() {
        let l = model.loss(
            chunk,
            rng::derive_seed(seed, "validation-batch", b as u64),
            false,
        )?;
        let w = chunk.len() as f64 / samples.len() as f64;
        acc.total += w * l.total;
        acc.recon_x += w * l.recon_x;
        acc.recon_y += w * l.recon_y;
        acc.mmd += w * l.mmd;
        acc.mmd_per_group += w * l.mmd_per_group;
    }
    Ok(acc)
}

/// Minibatch Adam on the weighted loss; keeps the parameters with the lowest
/// validation total seen, starting from the initialization.
pub fn train_cevae(
    spec: &CevaeSpec,
    train: &[LabeledSample],
    validation: &[LabeledSample],
    config: &CevaeTrainConfig,
    seed: u64,
) -> Result<CevaeTrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("cevae training set"));
    }
    let mut model = Cevae::new(spec.clone(), rng::derive_seed(seed, "init", 0))?;
    let val_seed = rng::derive_seed(seed, "validation", 0);
    let initial_validation = validation_loss(&model, validation, config.batch_size, val_seed)?;
    if !initial_validation.is_finite() {
        return Err(Error::Divergence(
            "initial validation loss is not finite".into(),
        ));
    }
    let mut best = (initial_validation.total, model.clone(), 0);
    let mut optimizer = Adam::new(config.learning_rate);
    let mut order: Vec<&LabeledSample> = train.iter().collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng::stream(seed, "shuffle", epoch as u64));
        let epoch_seed = rng::derive_seed(seed, "epoch", epoch as u64);
        let mut train_total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grads) =
                model.loss_and_gradients(batch, rng::derive_seed(epoch_seed, "batch", b as u64))?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite training loss at epoch {epoch}, batch {b}: {loss:?}"
                )));
            }
            train_total += loss.total * batch.len() as f64 / train.len() as f64;
            optimizer.step(&mut model, &grads)?;
        }
        let val = validation_loss(&model, validation, config.batch_size, val_seed)?;
        if !val.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite validation loss at epoch {epoch}: {val:?}"
            )));
        }
        if val.total < best.0 {
            best = (val.total, model.clone(), epoch);
        }
        trace.push(EpochRecord {
            epoch,
            train_total,
            validation: val,
        });
    }
    Ok(CevaeTrainOutcome {
        model: best.1,
        initial_validation,
        trace,
        best_epoch: best.2,
    })
}

pub fn save_cevae(
    model: &Cevae,
    path: impl AsRef<Path>,
    seed: u64,
    step: u64,
) -> Result<Vec<PathBuf>> {
    save_checkpoint(path, &model.spec, seed, step, model)
}

pub fn load_cevae(path: impl AsRef<Path>) -> Result<Cevae> {
    let path = path.as_ref();
    let manifest = read_manifest::<CevaeSpec>(path)?;
    let mut model = Cevae::new(manifest.spec.clone(), 0)?;
    load_into(path, &manifest, &mut model)?;
    Ok(model)
}
