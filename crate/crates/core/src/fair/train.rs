use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{
    batch_fair_loss, cross_entropy_and_gradients, fair_loss_and_gradients, FairWeights,
    LatentChoice,
};
use super::predictor::{HiddenLayers, PredictorHandle, PredictorInput, PredictorSpec};
use crate::cevae::{sample_counterfactual_bundles, Cevae, CounterfactualBundle};
use crate::data::LabeledSample;
use crate::diffnet::{Adam, Mode, ParamStore};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplePolicy {
    /// Fresh training bundles every epoch.
    EveryEpoch,
    /// One set of training bundles for the whole run.
    Once,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FairTrainConfig {
    pub lambda_clp_grid: Vec<f64>,
    pub lambda_cf_grid: Vec<f64>,
    pub cf_gradients_grid: Vec<bool>,
    pub learning_rate_grid: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many validation evaluations without improvement.
    pub patience: usize,
    pub resample: ResamplePolicy,
}

impl Default for FairTrainConfig {
    fn default() -> Self {
        Self {
            lambda_clp_grid: vec![0.0, 0.01, 0.1, 1.0, 10.0],
            lambda_cf_grid: vec![0.0, 0.1, 1.0, 10.0],
            cf_gradients_grid: vec![true, false],
            learning_rate_grid: vec![1e-4, 1e-3, 1e-2],
            epochs: 50,
            batch_size: 512,
            patience: 10,
            resample: ResamplePolicy::EveryEpoch,
        }
    }
}

fn check_weights(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config(format!("{name} must not be empty")));
    }
    if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config(format!("{name} entries must be nonnegative")));
    }
    Ok(())
}

impl FairTrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_weights("lambda_clp_grid", &self.lambda_clp_grid)?;
        check_weights("lambda_cf_grid", &self.lambda_cf_grid)?;
        check_weights("learning_rate_grid", &self.learning_rate_grid)?;
        if self.cf_gradients_grid.is_empty() {
            return Err(Error::Config("cf_gradients_grid must not be empty".into()));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size and patience must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Grid points ordered by lambda_clp, lambda_cf, cf_gradients, then
    /// learning rate, each in the order listed.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &lambda_clp in &self.lambda_clp_grid {
            for &lambda_cf in &self.lambda_cf_grid {
                for &cf_gradients in &self.cf_gradients_grid {
                    for &learning_rate in &self.learning_rate_grid {
                        out.push(GridPoint {
                            lambda_clp,
                            lambda_cf,
                            cf_gradients,
                            learning_rate,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda_clp: f64,
    pub lambda_cf: f64,
    pub cf_gradients: bool,
    pub learning_rate: f64,
}

impl GridPoint {
    pub fn weights(&self) -> FairWeights {
        FairWeights {
            lambda_cf: self.lambda_cf,
            lambda_clp: self.lambda_clp,
            cf_gradients: self.cf_gradients,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScores {
    /// Mean per factual sample of the unweighted pairing term.
    pub clp: f64,
    /// Mean factual cross-entropy.
    pub ce: f64,
    /// Mean weighted objective.
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FairCandidate {
    /// Position in grid order.
    pub index: usize,
    pub point: GridPoint,
    /// `None` when training failed.
    pub predictor: Option<PredictorHandle>,
    pub validation: Option<ValidationScores>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub failure: Option<String>,
}

impl FairCandidate {
    pub fn is_failed(&self) -> bool {
        self.predictor.is_none()
    }
}

/// Tracks the best parameters seen and early stopping for one model.
struct Fitter {
    predictor: PredictorHandle,
    optimizer: Adam,
    best: PredictorHandle,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
    epochs_run: usize,
    done: bool,
    failure: Option<String>,
}

impl Fitter {
    fn new(predictor: PredictorHandle, learning_rate: f64, initial_loss: f64) -> Self {
        let mut fitter = Self {
            best: predictor.clone(),
            predictor,
            optimizer: Adam::new(learning_rate),
            best_loss: initial_loss,
            best_epoch: 0,
            stale: 0,
            epochs_run: 0,
            done: false,
            failure: None,
        };
        if !initial_loss.is_finite() {
            fitter.fail("initial validation loss is not finite".into());
        }
        fitter
    }

    fn fail(&mut self, reason: String) {
        self.failure = Some(reason);
        self.done = true;
    }

    fn step<G: ParamStore>(
        &mut self,
        loss: f64,
        grads: &G,
        epoch: usize,
        batch: usize,
    ) -> Result<()> {
        if !loss.is_finite() {
            self.fail(format!(
                "non-finite training loss at epoch {epoch}, batch {batch}"
            ));
            return Ok(());
        }
        self.optimizer.step(&mut self.predictor, grads)
    }

    fn record(&mut self, validation_loss: f64, epoch: usize, patience: usize) {
        self.epochs_run = epoch;
        if !validation_loss.is_finite() {
            self.fail(format!("non-finite validation loss at epoch {epoch}"));
            return;
        }
        if validation_loss < self.best_loss {
            self.best_loss = validation_loss;
            self.best = self.predictor.clone();
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= patience {
                self.done = true;
            }
        }
    }
}

fn batch_seed(model_seed: u64, epoch: usize, batch: usize) -> u64 {
    rng::derive_seed(
        rng::derive_seed(model_seed, "epoch", epoch as u64),
        "batch",
        batch as u64,
    )
}

fn validation_scores(
    predictor: &PredictorHandle,
    bundles: &[&CounterfactualBundle],
    weights: FairWeights,
) -> Result<ValidationScores> {
    let loss = batch_fair_loss(
        predictor,
        bundles,
        weights,
        LatentChoice::PosteriorMean,
        Mode::Eval,
    )?;
    Ok(ValidationScores {
        clp: loss.clp,
        ce: loss.factual_ce,
        total: loss.total,
    })
}

/// Predictor architecture matching the outcome decoder of `cevae`.
pub fn fair_predictor_spec(cevae: &Cevae) -> Result<PredictorSpec> {
    let dec = &cevae.spec.decoder_y;
    let hidden = HiddenLayers {
        hidden_dim: dec.hidden_dim,
        num_hidden_layers: dec.num_hidden_layers,
        dropout_prob: dec.dropout_prob,
        layer_norm: dec.layer_norm,
    };
    PredictorSpec::latent(
        cevae.spec.latent_dim,
        cevae.spec.group_count,
        cevae.spec.group_embedding_dim,
        &hidden,
    )
}

/// Bundles used for every evaluation of fair predictors on `samples`.
pub fn evaluation_bundles(
    cevae: &Cevae,
    samples: &[LabeledSample],
    seed: u64,
    with_features: bool,
) -> Result<Vec<CounterfactualBundle>> {
    let refs: Vec<&LabeledSample> = samples.iter().collect();
    sample_counterfactual_bundles(
        cevae,
        &refs,
        rng::derive_seed(seed, "evaluation-bundles", 0),
        with_features,
    )
}

/// Trains one latent-input predictor per grid point. All candidates advance
/// epoch by epoch over a shared set of training bundles; results are in grid
/// order whatever the degree of parallelism.
pub fn train_fair_predictor(
    config: &FairTrainConfig,
    cevae: &Cevae,
    train: &[LabeledSample],
    validation: &[LabeledSample],
    seed: u64,
) -> Result<Vec<FairCandidate>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("fair training set"));
    }
    if validation.is_empty() {
        return Err(Error::EmptyInput("fair validation set"));
    }
    let spec = fair_predictor_spec(cevae)?;
    let val_bundles = evaluation_bundles(cevae, validation, seed, false)?;
    let val_refs: Vec<&CounterfactualBundle> = val_bundles.iter().collect();
    let train_refs: Vec<&LabeledSample> = train.iter().collect();
    let grid = config.grid();
    // Candidates differing only in lambda_clp share initialization, batch
    // order and dropout masks, so the sweep over lambda_clp is paired.
    let inner = grid.len() / config.lambda_clp_grid.len();
    let stream_index = |i: usize| (i % inner) as u64;

    let mut fitters = grid
        .iter()
        .enumerate()
        .map(|(i, point)| {
            let predictor = PredictorHandle::new(
                spec.clone(),
                rng::derive_seed(seed, "candidate-init", stream_index(i)),
            )?;
            let initial = validation_scores(&predictor, &val_refs, point.weights())?;
            Ok(Fitter::new(predictor, point.learning_rate, initial.total))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut bundles: Vec<CounterfactualBundle> = Vec::new();
    for epoch in 1..=config.epochs {
        if fitters.iter().all(|f| f.done) {
            break;
        }
        if epoch == 1 || config.resample == ResamplePolicy::EveryEpoch {
            let draw = match config.resample {
                ResamplePolicy::EveryEpoch => epoch as u64,
                ResamplePolicy::Once => 0,
            };
            bundles = sample_counterfactual_bundles(
                cevae,
                &train_refs,
                rng::derive_seed(seed, "train-bundles", draw),
                false,
            )?;
        }
        let bundles = &bundles;
        let val_refs = &val_refs;
        fitters
            .par_iter_mut()
            .enumerate()
            .filter(|(_, f)| !f.done)
            .try_for_each(|(i, fitter)| -> Result<()> {
                let point = grid[i];
                let model_seed = rng::derive_seed(seed, "candidate", stream_index(i));
                let mut order: Vec<&CounterfactualBundle> = bundles.iter().collect();
                order.shuffle(&mut rng::stream(model_seed, "shuffle", epoch as u64));
                for (b, batch) in order.chunks(config.batch_size).enumerate() {
                    let mode = Mode::Train {
                        seed: batch_seed(model_seed, epoch, b),
                    };
                    let (loss, grads) = fair_loss_and_gradients(
                        &fitter.predictor,
                        batch,
                        point.weights(),
                        LatentChoice::Draw,
                        mode,
                    )?;
                    fitter.step(loss.total, &grads, epoch, b)?;
                    if fitter.done {
                        return Ok(());
                    }
                }
                let scores = validation_scores(&fitter.predictor, val_refs, point.weights())?;
                fitter.record(scores.total, epoch, config.patience);
                Ok(())
            })?;
    }

    grid.iter()
        .zip(fitters)
        .enumerate()
        .map(|(index, (point, fitter))| {
            if let Some(reason) = fitter.failure {
                return Ok(FairCandidate {
                    index,
                    point: *point,
                    predictor: None,
                    validation: None,
                    epochs_run: fitter.epochs_run,
                    best_epoch: fitter.best_epoch,
                    failure: Some(reason),
                });
            }
            let scores = validation_scores(&fitter.best, &val_refs, point.weights())?;
            Ok(FairCandidate {
                index,
                point: *point,
                predictor: Some(fitter.best),
                validation: Some(scores),
                epochs_run: fitter.epochs_run,
                best_epoch: fitter.best_epoch,
                failure: None,
            })
        })
        .collect()
}

/// One candidate per distinct `lambda_clp`, in order of first appearance:
/// the successful candidate with the smallest validation pairing term,
/// earliest grid position on ties.
pub fn select_models(candidates: &[FairCandidate]) -> Result<Vec<FairCandidate>> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("candidate list"));
    }
    let mut lambdas: Vec<f64> = Vec::new();
    for c in candidates {
        if !lambdas
            .iter()
            .any(|l| l.to_bits() == c.point.lambda_clp.to_bits())
        {
            lambdas.push(c.point.lambda_clp);
        }
    }
    lambdas
        .into_iter()
        .map(|lambda| {
            let mut best: Option<&FairCandidate> = None;
            for c in candidates
                .iter()
                .filter(|c| c.point.lambda_clp.to_bits() == lambda.to_bits())
            {
                let Some(v) = c.validation.filter(|_| !c.is_failed()) else {
                    continue;
                };
                let better = match best {
                    None => true,
                    Some(b) => {
                        let bv = b.validation.expect("selected candidates have scores").clp;
                        v.clp < bv || (v.clp == bv && c.index < b.index)
                    }
                };
                if better {
                    best = Some(c);
                }
            }
            best.cloned().ok_or_else(|| {
                Error::Validation(format!("no successful candidate for lambda_clp {lambda}"))
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Baseline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSearchSpace {
    pub num_hidden_layers: Vec<usize>,
    pub hidden_dim: Vec<usize>,
    pub dropout_prob: Vec<f64>,
    pub layer_norm: Vec<bool>,
    pub learning_rate: Vec<f64>,
}

impl Default for BaselineSearchSpace {
    fn default() -> Self {
        Self {
            num_hidden_layers: vec![1, 2, 3],
            hidden_dim: vec![64, 128, 256],
            dropout_prob: vec![0.0, 0.25, 0.5, 0.75],
            layer_norm: vec![true, false],
            learning_rate: vec![1e-5, 1e-4, 1e-3, 1e-2],
        }
    }
}

impl BaselineSearchSpace {
    pub fn size(&self) -> usize {
        self.num_hidden_layers.len()
            * self.hidden_dim.len()
            * self.dropout_prob.len()
            * self.layer_norm.len()
            * self.learning_rate.len()
    }

    /// Mixed-radix decoding of a configuration index.
    pub fn configuration(&self, mut i: usize) -> (HiddenLayers, f64) {
        let mut digit = |len: usize| {
            let d = i % len;
            i /= len;
            d
        };
        let lr = self.learning_rate[digit(self.learning_rate.len())];
        let layer_norm = self.layer_norm[digit(self.layer_norm.len())];
        let dropout_prob = self.dropout_prob[digit(self.dropout_prob.len())];
        let hidden_dim = self.hidden_dim[digit(self.hidden_dim.len())];
        let num_hidden_layers = self.num_hidden_layers[digit(self.num_hidden_layers.len())];
        (
            HiddenLayers {
                hidden_dim,
                num_hidden_layers,
                dropout_prob,
                layer_norm,
            },
            lr,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub space: BaselineSearchSpace,
    pub iterations: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            space: BaselineSearchSpace::default(),
            iterations: 20,
            epochs: 50,
            batch_size: 512,
            patience: 10,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.space.size() == 0 {
            return Err(Error::Config(
                "baseline search space has an empty dimension".into(),
            ));
        }
        check_weights("baseline learning_rate", &self.space.learning_rate)?;
        if self.iterations == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "baseline iterations, batch_size and patience must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCandidate {
    /// Index into the search space.
    pub configuration: usize,
    pub hidden: HiddenLayers,
    pub learning_rate: f64,
    pub val_ce: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub predictor: PredictorHandle,
    /// Position of the winner in `candidates`.
    pub selected: usize,
    pub candidates: Vec<BaselineCandidate>,
}

fn rows_for<'s>(samples: &[&'s LabeledSample]) -> (Vec<(PredictorInput<'s>, usize)>, Vec<u8>) {
    (
        samples
            .iter()
            .map(|s| (PredictorInput::Features(&s.x), s.a))
            .collect(),
        samples.iter().map(|s| s.y).collect(),
    )
}

fn mean_cross_entropy(predictor: &PredictorHandle, samples: &[&LabeledSample]) -> Result<f64> {
    let (rows, labels) = rows_for(samples);
    Ok(cross_entropy_and_gradients(predictor, &rows, &labels, Mode::Eval, false)?.0)
}

/// Random search over feature-input predictors, selecting by validation
/// cross-entropy. When `iterations` covers the space it is enumerated.
pub fn train_baseline(
    config: &BaselineConfig,
    feature_dim: usize,
    group_count: usize,
    train: &[LabeledSample],
    validation: &[LabeledSample],
    seed: u64,
) -> Result<BaselineOutcome> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyInput("baseline training or validation set"));
    }
    let size = config.space.size();
    let mut picks: Vec<usize> = if config.iterations >= size {
        (0..size).collect()
    } else {
        index::sample(
            &mut rng::stream(seed, "baseline-search", 0),
            size,
            config.iterations,
        )
        .into_vec()
    };
    picks.sort_unstable();

    let train_refs: Vec<&LabeledSample> = train.iter().collect();
    let val_refs: Vec<&LabeledSample> = validation.iter().collect();

    let results: Vec<(BaselineCandidate, Option<PredictorHandle>)> = picks
        .par_iter()
        .map(|&configuration| -> Result<_> {
            let (hidden, learning_rate) = config.space.configuration(configuration);
            let spec = PredictorSpec::features(feature_dim, group_count, &hidden)?;
            let model_seed = rng::derive_seed(seed, "baseline", configuration as u64);
            let predictor = PredictorHandle::new(spec, rng::derive_seed(model_seed, "init", 0))?;
            let initial = mean_cross_entropy(&predictor, &val_refs)?;
            let mut fitter = Fitter::new(predictor, learning_rate, initial);
            let mut order = train_refs.clone();
            for epoch in 1..=config.epochs {
                if fitter.done {
                    break;
                }
                order.shuffle(&mut rng::stream(model_seed, "shuffle", epoch as u64));
                for (b, batch) in order.chunks(config.batch_size).enumerate() {
                    let (rows, labels) = rows_for(batch);
                    let mode = Mode::Train {
                        seed: batch_seed(model_seed, epoch, b),
                    };
                    let (loss, grads) =
                        cross_entropy_and_gradients(&fitter.predictor, &rows, &labels, mode, true)?;
                    fitter.step(loss, &grads.expect("gradients requested"), epoch, b)?;
                    if fitter.done {
                        break;
                    }
                }
                if !fitter.done {
                    let val = mean_cross_entropy(&fitter.predictor, &val_refs)?;
                    fitter.record(val, epoch, config.patience);
                }
            }
            let candidate = BaselineCandidate {
                configuration,
                hidden,
                learning_rate,
                val_ce: fitter.failure.is_none().then_some(fitter.best_loss),
                failure: fitter.failure.clone(),
            };
            let model = fitter.failure.is_none().then_some(fitter.best);
            Ok((candidate, model))
        })
        .collect::<Result<_>>()?;

    let mut selected: Option<usize> = None;
    for (i, (c, _)) in results.iter().enumerate() {
        if let Some(v) = c.val_ce {
            if selected.is_none_or(|s| {
                v < results[s].0.val_ce.expect("selected has a loss")
            }) {
                selected = Some(i);
            }
        }
    }
    let selected =
        selected.ok_or_else(|| Error::Divergence("every baseline candidate failed".into()))?;
    let mut candidates = Vec::with_capacity(results.len());
    let mut predictor = None;
    for (i, (c, model)) in results.into_iter().enumerate() {
        if i == selected {
            predictor = model;
        }
        candidates.push(c);
    }
    Ok(BaselineOutcome {
        predictor: predictor.expect("selected candidate has a model"),
        selected,
        candidates,
    })
}
