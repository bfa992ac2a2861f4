//! Pipeline stages. Each reads its inputs from the output directory, writes
//! its artifacts there and returns the paths it wrote.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use cfodds_core::cevae::{load_cevae, save_cevae, train_cevae, Cevae};
use cfodds_core::data::{
    generate_sem_dataset, read_dataset, read_ground_truth, split_dataset, write_dataset,
    write_ground_truth, Dataset, DatasetSplit, GroundTruth, LabeledSample,
};
use cfodds_core::fair::{
    evaluation_bundles, load_predictor, save_predictor, score_bundles, select_models,
    train_baseline, train_fair_predictor, FairCandidate, GridPoint, PredictorHandle,
    ValidationScores,
};
use cfodds_core::metrics::{build_report, write_report, ModelEvaluation};
use cfodds_core::rng::derive_seed;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSource, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::manifest::{Layout, EVAL_SPLITS};

pub const GROUND_TRUTH_SHIFT_JSON: &str = "ground_truth_shift.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::MalformedArtifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::MalformedArtifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn load_dataset(layout: &Layout) -> Result<Dataset> {
    Ok(read_dataset(layout.require(layout.dataset(), "generate")?)?)
}

fn load_split(layout: &Layout) -> Result<DatasetSplit> {
    read_json(&layout.require(layout.split(), "split")?)
}

fn load_vae(layout: &Layout) -> Result<Cevae> {
    let path = layout.require(layout.vae(), "train-vae")?;
    layout.require(
        cfodds_core::diffnet::checkpoint::sidecar_path(&path),
        "train-vae",
    )?;
    Ok(load_cevae(path)?)
}

struct Partitions {
    train: Vec<LabeledSample>,
    validation: Vec<LabeledSample>,
    test: Vec<LabeledSample>,
}

impl Partitions {
    fn load(layout: &Layout) -> Result<(Dataset, Self)> {
        let dataset = load_dataset(layout)?;
        let split = load_split(layout)?;
        let parts = Self {
            train: dataset.subset(&split.train)?,
            validation: dataset.subset(&split.validation)?,
            test: dataset.subset(&split.test)?,
        };
        Ok((dataset, parts))
    }

    fn named(&self, split: &str) -> &[LabeledSample] {
        match split {
            "train" => &self.train,
            "validation" => &self.validation,
            _ => &self.test,
        }
    }
}

/// Core IO errors carry no path; user-supplied inputs need one.
fn input_error(path: &Path, e: cfodds_core::Error) -> CliError {
    match e {
        cfodds_core::Error::Io(source) => CliError::io(path, source),
        other => CliError::MalformedArtifact {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

pub fn generate(config: &ExperimentConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let (dataset, truth, sem) = match &config.dataset {
        DatasetSource::Synthetic(s) => {
            let sem = s.recipe(derive_seed(config.seed, "generate", 0)).build()?;
            let (dataset, truth) = generate_sem_dataset(&sem, s.n)?;
            (dataset, Some(truth), Some(sem))
        }
        DatasetSource::File(f) => {
            let dataset = read_dataset(&f.dataset).map_err(|e| input_error(&f.dataset, e))?;
            let truth = match &f.ground_truth {
                Some(p) => Some(read_ground_truth(p).map_err(|e| input_error(p, e))?),
                None => None,
            };
            (dataset, truth, None)
        }
    };
    let mut written = Vec::new();
    let path = layout.dataset();
    create_parent(&path)?;
    write_dataset(&dataset, &path)?;
    written.push(path);

    let gt = layout.ground_truth();
    match truth {
        Some(truth) => {
            if truth.records.len() != dataset.len() {
                return Err(CliError::InvalidConfig(format!(
                    "ground truth has {} records for {} samples",
                    truth.records.len(),
                    dataset.len()
                )));
            }
            write_ground_truth(&truth, &gt)?;
            written.push(gt);
        }
        None if gt.exists() => fs::remove_file(&gt).map_err(|e| CliError::io(&gt, e))?,
        None => {}
    }
    let sem_path = layout.root.join("data/sem.json");
    match sem {
        Some(sem) => {
            write_json(&sem_path, &sem)?;
            written.push(sem_path);
        }
        None if sem_path.exists() => {
            fs::remove_file(&sem_path).map_err(|e| CliError::io(&sem_path, e))?
        }
        None => {}
    }
    Ok(written)
}

pub fn split(config: &ExperimentConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let dataset = load_dataset(layout)?;
    let split = split_dataset(
        &dataset.samples,
        config.split.fractions,
        derive_seed(config.seed, "split", 0),
    )?;
    let path = layout.split();
    write_json(&path, &split)?;
    Ok(vec![path])
}

#[derive(Serialize)]
struct TraceRow {
    epoch: usize,
    train_total: Option<f64>,
    val_total: f64,
    val_recon_x: f64,
    val_recon_y: f64,
    val_mmd: f64,
    val_mmd_per_group: f64,
}

pub fn train_vae(config: &ExperimentConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let (dataset, parts) = Partitions::load(layout)?;
    let spec = config
        .cevae
        .spec(dataset.feature_dim, dataset.group_count)?;
    let seed = derive_seed(config.seed, "train-vae", 0);
    let outcome = train_cevae(
        &spec,
        &parts.train,
        &parts.validation,
        &config.cevae.training,
        seed,
    )?;

    let path = layout.vae();
    create_parent(&path)?;
    let mut written = save_cevae(&outcome.model, &path, seed, outcome.best_epoch as u64)?;

    let row = |epoch, train_total, v: &cfodds_core::cevae::CevaeLoss| TraceRow {
        epoch,
        train_total,
        val_total: v.total,
        val_recon_x: v.recon_x,
        val_recon_y: v.recon_y,
        val_mmd: v.mmd,
        val_mmd_per_group: v.mmd_per_group,
    };
    let mut rows = vec![row(0, None, &outcome.initial_validation)];
    rows.extend(
        outcome
            .trace
            .iter()
            .map(|r| row(r.epoch, Some(r.train_total), &r.validation)),
    );
    let trace = layout.vae_trace();
    write_csv(&trace, &rows)?;
    written.push(trace);
    Ok(written)
}

/// One row of the candidate ledger. Failed candidates leave the score and
/// checkpoint columns empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub lambda_clp: f64,
    pub lambda_cf: f64,
    pub cf_gradients: bool,
    pub learning_rate: f64,
    pub val_clp: Option<f64>,
    pub val_ce: Option<f64>,
    pub checkpoint_path: String,
    pub val_total: Option<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub failure: String,
}

#[derive(Serialize)]
struct BaselineRow {
    configuration: usize,
    num_hidden_layers: usize,
    hidden_dim: usize,
    dropout_prob: f64,
    layer_norm: bool,
    learning_rate: f64,
    val_ce: Option<f64>,
    selected: bool,
    failure: String,
}

pub fn train_fair(config: &ExperimentConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let (dataset, parts) = Partitions::load(layout)?;
    let vae = load_vae(layout)?;
    let seed = derive_seed(config.seed, "train-fair", 0);
    let candidates =
        train_fair_predictor(&config.fair, &vae, &parts.train, &parts.validation, seed)?;

    let dir = layout.candidate_dir();
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut written = Vec::new();
    let mut rows = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let checkpoint_path = match &c.predictor {
            Some(p) => {
                let path = layout.candidate(c.index);
                written.extend(save_predictor(p, &path, seed, c.best_epoch as u64)?);
                layout.relative(&path)
            }
            None => String::new(),
        };
        rows.push(LedgerRow {
            lambda_clp: c.point.lambda_clp,
            lambda_cf: c.point.lambda_cf,
            cf_gradients: c.point.cf_gradients,
            learning_rate: c.point.learning_rate,
            val_clp: c.validation.map(|v| v.clp),
            val_ce: c.validation.map(|v| v.ce),
            checkpoint_path,
            val_total: c.validation.map(|v| v.total),
            epochs_run: c.epochs_run,
            best_epoch: c.best_epoch,
            failure: c.failure.clone().unwrap_or_default(),
        });
    }
    let ledger = layout.ledger();
    write_csv(&ledger, &rows)?;
    written.push(ledger);

    let baseline_seed = derive_seed(config.seed, "train-baseline", 0);
    let baseline = train_baseline(
        &config.baseline,
        dataset.feature_dim,
        dataset.group_count,
        &parts.train,
        &parts.validation,
        baseline_seed,
    )?;
    let path = layout.baseline();
    create_parent(&path)?;
    written.extend(save_predictor(
        &baseline.predictor,
        &path,
        baseline_seed,
        0,
    )?);
    let rows: Vec<BaselineRow> = baseline
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| BaselineRow {
            configuration: c.configuration,
            num_hidden_layers: c.hidden.num_hidden_layers,
            hidden_dim: c.hidden.hidden_dim,
            dropout_prob: c.hidden.dropout_prob,
            layer_norm: c.hidden.layer_norm,
            learning_rate: c.learning_rate,
            val_ce: c.val_ce,
            selected: i == baseline.selected,
            failure: c.failure.clone().unwrap_or_default(),
        })
        .collect();
    let search = layout.baseline_ledger();
    write_csv(&search, &rows)?;
    written.push(search);
    Ok(written)
}

/// Reads the candidate ledger back into candidates, loading the checkpoint
/// of every successful row.
pub fn read_ledger(layout: &Layout) -> Result<Vec<FairCandidate>> {
    let path = layout.require(layout.ledger(), "train-fair")?;
    let rows: Vec<LedgerRow> = read_csv(&path)?;
    rows.into_iter()
        .enumerate()
        .map(|(index, r)| {
            let validation = match (r.val_clp, r.val_ce, r.val_total) {
                (Some(clp), Some(ce), Some(total)) => Some(ValidationScores { clp, ce, total }),
                _ => None,
            };
            let predictor = match (&validation, r.checkpoint_path.is_empty()) {
                (Some(_), false) => {
                    let ckpt =
                        layout.require(layout.root.join(&r.checkpoint_path), "train-fair")?;
                    Some(load_predictor(ckpt)?)
                }
                _ => None,
            };
            Ok(FairCandidate {
                index,
                point: GridPoint {
                    lambda_clp: r.lambda_clp,
                    lambda_cf: r.lambda_cf,
                    cf_gradients: r.cf_gradients,
                    learning_rate: r.learning_rate,
                },
                validation: predictor.as_ref().and(validation),
                predictor,
                epochs_run: r.epochs_run,
                best_epoch: r.best_epoch,
                failure: (!r.failure.is_empty()).then_some(r.failure),
            })
        })
        .collect()
}

/// Scored predictions of every reported model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub split: String,
    /// Ledger indices of the selected fair models, in report order.
    pub selected: Vec<usize>,
    /// Baseline first, then one model per distinct lambda_clp.
    pub models: Vec<ModelEvaluation>,
}

pub fn evaluate(config: &ExperimentConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let (_, parts) = Partitions::load(layout)?;
    let vae = load_vae(layout)?;
    let selected = select_models(&read_ledger(layout)?)?;
    let baseline_path = layout.require(layout.baseline(), "train-fair")?;
    let baseline: PredictorHandle = load_predictor(baseline_path)?;

    let mut written = Vec::new();
    for (i, name) in EVAL_SPLITS.iter().enumerate() {
        let samples = parts.named(name);
        let bundles = evaluation_bundles(
            &vae,
            samples,
            derive_seed(config.seed, "evaluate", i as u64),
            true,
        )?;
        let mut models = vec![ModelEvaluation {
            lambda_clp: None,
            scored: score_bundles(&baseline, &bundles)?,
        }];
        for c in &selected {
            let predictor = c
                .predictor
                .as_ref()
                .expect("selected candidates are trained");
            models.push(ModelEvaluation {
                lambda_clp: Some(c.point.lambda_clp),
                scored: score_bundles(predictor, &bundles)?,
            });
        }
        let path = layout.evaluation(name);
        create_parent(&path)?;
        write_json(
            &path,
            &EvaluationFile {
                split: name.to_string(),
                selected: selected.iter().map(|c| c.index).collect(),
                models,
            },
        )?;
        written.push(path);
    }
    Ok(written)
}

/// `cells[a][b]`: mean over split samples with `A = a` of the true
/// counterfactual outcome under `A <- b` minus the factual outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthShift {
    pub group_labels: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

fn ground_truth_shift(
    truth: &GroundTruth,
    samples: &[LabeledSample],
    labels: Vec<String>,
) -> Result<GroundTruthShift> {
    let by_id: HashMap<u64, usize> = truth
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id, i))
        .collect();
    let k = labels.len();
    let mut aligned = Vec::with_capacity(samples.len());
    for s in samples {
        let &i = by_id.get(&s.id).ok_or_else(|| {
            CliError::InvalidConfig(format!("ground truth has no record for sample {}", s.id))
        })?;
        aligned.push(truth.records[i].clone());
    }
    let truth = GroundTruth { records: aligned };
    let cells = (0..k)
        .map(|a| (0..k).map(|b| truth.outcome_shift(samples, a, b)).collect())
        .collect();
    Ok(GroundTruthShift {
        group_labels: labels,
        cells,
    })
}

pub fn report(config: &ExperimentConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let mut inputs = Vec::new();
    for name in EVAL_SPLITS {
        let path = layout.require(layout.evaluation(name), "evaluate")?;
        inputs.push(read_json::<EvaluationFile>(&path)?);
    }
    // group count comes from the data, not the config
    let dataset = load_dataset(layout)?;
    let labels = config.group_labels(dataset.group_count);
    let truth = if layout.ground_truth().is_file() {
        Some((
            read_ground_truth(layout.ground_truth())?,
            Partitions::load(layout)?.1,
        ))
    } else {
        None
    };

    let mut written = Vec::new();
    for eval in &inputs {
        let report = build_report(&eval.split, labels.clone(), &eval.models, &config.utility)?;
        let dir = layout.report_dir(&eval.split);
        written.extend(write_report(&report, &dir)?);
        if let Some((truth, parts)) = &truth {
            let shift = ground_truth_shift(truth, parts.named(&eval.split), labels.clone())?;
            let path = dir.join(GROUND_TRUTH_SHIFT_JSON);
            write_json(&path, &shift)?;
            written.push(path);
        }
    }
    Ok(written)
}
