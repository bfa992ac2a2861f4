//! Datasets of sparse binary records, the synthetic structural equation model
//! with ground-truth counterfactuals, deterministic splitting and JSONL I/O.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One observation: active feature indices, binary outcome, group index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: u64,
    pub a: usize,
    pub y: u8,
    pub x: Vec<usize>,
}

impl LabeledSample {
    pub fn validate(&self, feature_dim: usize, group_count: usize) -> Result<()> {
        if self.a >= group_count {
            return Err(Error::Validation(format!(
                "sample {}: attribute {} out of range for {} groups",
                self.id, self.a, group_count
            )));
        }
        if self.y > 1 {
            return Err(Error::Validation(format!(
                "sample {}: outcome {} is not binary",
                self.id, self.y
            )));
        }
        for (pos, &j) in self.x.iter().enumerate() {
            if j >= feature_dim {
                return Err(Error::Validation(format!(
                    "sample {}: feature index {} out of range for dimension {}",
                    self.id, j, feature_dim
                )));
            }
            if pos > 0 && self.x[pos - 1] >= j {
                return Err(Error::Validation(format!(
                    "sample {}: feature indices not strictly increasing at position {}",
                    self.id, pos
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_dim: usize,
    pub group_count: usize,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(
        feature_dim: usize,
        group_count: usize,
        samples: Vec<LabeledSample>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            s.validate(feature_dim, group_count)?;
            if !seen.insert(s.id) {
                return Err(Error::Validation(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self {
            feature_dim,
            group_count,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples whose ids are listed, in the listed order.
    pub fn subset(&self, ids: &[u64]) -> Result<Vec<LabeledSample>> {
        let index: std::collections::HashMap<u64, &LabeledSample> =
            self.samples.iter().map(|s| (s.id, s)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id)
                    .map(|s| (*s).clone())
                    .ok_or_else(|| Error::Validation(format!("split references unknown id {id}")))
            })
            .collect()
    }
}

/// Empirical group frequencies; the categorical marginal used downstream.
pub fn group_marginals(samples: &[LabeledSample], group_count: usize) -> Vec<f64> {
    let mut counts = vec![0usize; group_count];
    for s in samples {
        counts[s.a] += 1;
    }
    let n = samples.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

// ---------------------------------------------------------------------------
// Synthetic structural equation model
// ---------------------------------------------------------------------------

/// Structural equations:
///
/// ```text
/// u ~ N(0, I_d)
/// a ~ Categorical(pi)
/// x_j = 1[xi_j < sigmoid(u_to_x[j] . u + a_to_x[j][a] + x_bias[j])]
/// y   = 1[zeta < sigmoid(u_to_y . u + a_to_y[a] + y_bias)]
/// ```
///
/// with `xi_j, zeta ~ U(0, 1)` shared between the factual world and every
/// counterfactual world of the same sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemConfig {
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub group_count: usize,
    pub group_marginals: Vec<f64>,
    /// `feature_dim` rows of `latent_dim` coefficients.
    pub u_to_x: Vec<Vec<f64>>,
    /// `feature_dim` rows of `group_count` coefficients.
    pub a_to_x: Vec<Vec<f64>>,
    pub x_bias: Vec<f64>,
    pub u_to_y: Vec<f64>,
    pub a_to_y: Vec<f64>,
    pub y_bias: f64,
    pub seed: u64,
}

impl SemConfig {
    pub fn validate(&self) -> Result<()> {
        let (d, m, k) = (self.latent_dim, self.feature_dim, self.group_count);
        if d == 0 || m == 0 || k == 0 {
            return Err(Error::Config(
                "latent_dim, feature_dim and group_count must be positive".into(),
            ));
        }
        if self.group_marginals.len() != k {
            return Err(Error::Config(format!(
                "group_marginals has length {}, expected group_count {}",
                self.group_marginals.len(),
                k
            )));
        }
        if self
            .group_marginals
            .iter()
            .any(|&p| !(p >= 0.0) || !p.is_finite())
        {
            return Err(Error::Config(
                "group_marginals entries must be nonnegative".into(),
            ));
        }
        let total: f64 = self.group_marginals.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "group_marginals sum to {total}, expected 1"
            )));
        }
        let block = |name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize| -> Result<()> {
            if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
                return Err(Error::Config(format!(
                    "{name} must have shape {nrows}x{ncols}"
                )));
            }
            Ok(())
        };
        block("u_to_x", &self.u_to_x, m, d)?;
        block("a_to_x", &self.a_to_x, m, k)?;
        if self.x_bias.len() != m {
            return Err(Error::Config(format!("x_bias must have length {m}")));
        }
        if self.u_to_y.len() != d {
            return Err(Error::Config(format!("u_to_y must have length {d}")));
        }
        if self.a_to_y.len() != k {
            return Err(Error::Config(format!("a_to_y must have length {k}")));
        }
        Ok(())
    }

    pub fn feature_probability(&self, j: usize, u: &[f64], a: usize) -> f64 {
        let z = dot(&self.u_to_x[j], u) + self.a_to_x[j][a] + self.x_bias[j];
        sigmoid(z)
    }

    pub fn outcome_probability(&self, u: &[f64], a: usize) -> f64 {
        sigmoid(dot(&self.u_to_y, u) + self.a_to_y[a] + self.y_bias)
    }
}

/// Compact description from which a full [`SemConfig`] is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemRecipe {
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub group_count: usize,
    pub group_marginals: Vec<f64>,
    /// Std of the U -> X coefficients.
    #[serde(default = "default_u_to_x_scale")]
    pub u_to_x_scale: f64,
    /// Std of the A -> X coefficients.
    #[serde(default = "default_a_to_x_scale")]
    pub a_to_x_scale: f64,
    #[serde(default = "default_x_bias")]
    pub x_bias: f64,
    /// Std of the U -> Y coefficients.
    #[serde(default = "default_u_to_y_scale")]
    pub u_to_y_scale: f64,
    /// Per-group A -> Y effects, taken verbatim.
    pub a_to_y: Vec<f64>,
    #[serde(default)]
    pub y_bias: f64,
    pub seed: u64,
}

fn default_u_to_x_scale() -> f64 {
    1.0
}
fn default_a_to_x_scale() -> f64 {
    0.5
}
fn default_x_bias() -> f64 {
    -1.0
}
fn default_u_to_y_scale() -> f64 {
    1.0
}

impl SemRecipe {
    /// Desk-scale defaults: m = 200 features, two groups.
    pub fn desk_default(seed: u64) -> Self {
        Self {
            latent_dim: 8,
            feature_dim: 200,
            group_count: 2,
            group_marginals: vec![0.6, 0.4],
            u_to_x_scale: default_u_to_x_scale(),
            a_to_x_scale: default_a_to_x_scale(),
            x_bias: default_x_bias(),
            u_to_y_scale: default_u_to_y_scale(),
            a_to_y: vec![0.0, 2.0],
            y_bias: -1.0,
            seed,
        }
    }

    pub fn build(&self) -> Result<SemConfig> {
        let mut rng = rng::stream(self.seed, "sem-weights", 0);
        let (d, m, k) = (self.latent_dim, self.feature_dim, self.group_count);
        let mut normal = |scale: f64| -> f64 { scale * rng.sample::<f64, _>(StandardNormal) };
        let u_to_x = (0..m)
            .map(|_| (0..d).map(|_| normal(self.u_to_x_scale)).collect())
            .collect();
        let a_to_x = (0..m)
            .map(|_| (0..k).map(|_| normal(self.a_to_x_scale)).collect())
            .collect();
        let u_to_y = (0..d).map(|_| normal(self.u_to_y_scale)).collect();
        let config = SemConfig {
            latent_dim: d,
            feature_dim: m,
            group_count: k,
            group_marginals: self.group_marginals.clone(),
            u_to_x,
            a_to_x,
            x_bias: vec![self.x_bias; m],
            u_to_y,
            a_to_y: self.a_to_y.clone(),
            y_bias: self.y_bias,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Latent draw and counterfactual outcomes of one generated sample.
///
/// `y_cf` and `x_cf` are indexed by attribute value and include the factual
/// value, which equals the observed record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub id: u64,
    pub u: Vec<f64>,
    pub y_cf: Vec<u8>,
    pub x_cf: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub records: Vec<GroundTruthRecord>,
}

impl GroundTruth {
    /// Mean of `y_cf[to] - y` over samples whose factual group is `from`.
    pub fn outcome_shift(&self, samples: &[LabeledSample], from: usize, to: usize) -> Option<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (s, r) in samples.iter().zip(&self.records) {
            if s.a == from {
                total += r.y_cf[to] as f64 - s.y as f64;
                count += 1;
            }
        }
        (count > 0).then(|| total / count as f64)
    }
}

pub fn generate_sem_dataset(config: &SemConfig, n: usize) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let (d, m, k) = (config.latent_dim, config.feature_dim, config.group_count);
    let mut rng = rng::stream(config.seed, "sem-samples", 0);
    let mut samples = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    let mut feature_noise = vec![0.0f64; m];

    for i in 0..n {
        let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let a = draw_categorical(&config.group_marginals, rng.gen::<f64>());
        for noise in feature_noise.iter_mut() {
            *noise = rng.gen::<f64>();
        }
        let outcome_noise: f64 = rng.gen();

        let world = |group: usize| -> (Vec<usize>, u8) {
            let x = (0..m)
                .filter(|&j| feature_noise[j] < config.feature_probability(j, &u, group))
                .collect();
            let y = (outcome_noise < config.outcome_probability(&u, group)) as u8;
            (x, y)
        };
        let worlds: Vec<(Vec<usize>, u8)> = (0..k).map(world).collect();
        let (x, y) = worlds[a].clone();
        let id = i as u64;
        samples.push(LabeledSample { id, a, y, x });
        records.push(GroundTruthRecord {
            id,
            u,
            y_cf: worlds.iter().map(|w| w.1).collect(),
            x_cf: worlds.into_iter().map(|w| w.0).collect(),
        });
    }
    let dataset = Dataset {
        feature_dim: m,
        group_count: k,
        samples,
    };
    Ok((dataset, GroundTruth { records }))
}

fn draw_categorical(probs: &[f64], uniform: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cumulative += p;
        if uniform < cumulative {
            return i;
        }
    }
    // Rounding in the cumulative sum; fall back to the last group with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub test: Vec<u64>,
}

/// Seeded permutation split. Validation and test receive `floor(n * f)`
/// samples; the remainder goes to train.
pub fn split_dataset(
    samples: &[LabeledSample],
    fractions: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit> {
    if fractions.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) {
        return Err(Error::Config("split fractions must be nonnegative".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }
    let n = samples.len();
    let take = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
    let n_val = take(fractions[1]);
    let n_test = take(fractions[2]);
    let n_train = n - n_val - n_test;

    let mut ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
    ids.shuffle(&mut rng::stream(seed, "split", 0));

    let mut train = ids[..n_train].to_vec();
    let mut validation = ids[n_train..n_train + n_val].to_vec();
    let mut test = ids[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        train,
        validation,
        test,
    })
}

// ---------------------------------------------------------------------------
// JSONL I/O
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Meta {
    m: usize,
    #[serde(rename = "K")]
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Meta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: u64,
    a: usize,
    y: u8,
    x: Vec<usize>,
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        meta: Meta {
            m: dataset.feature_dim,
            k: dataset.group_count,
        },
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for s in &dataset.samples {
        let record = Record {
            id: s.id,
            a: s.a,
            y: s.y,
            x: s.x.clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset. An empty file yields an empty dataset with zero
/// dimensions.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut meta: Option<Meta> = None;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(ref header) = meta else {
            let header: Header = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: format!("expected header {{\"meta\": {{\"m\", \"K\"}}}}: {e}"),
            })?;
            meta = Some(header.meta);
            continue;
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let sample = LabeledSample {
            id: record.id,
            a: record.a,
            y: record.y,
            x: record.x,
        };
        sample.validate(header.m, header.k)?;
        if !seen.insert(sample.id) {
            return Err(Error::Validation(format!(
                "duplicate sample id {}",
                sample.id
            )));
        }
        samples.push(sample);
    }
    let (feature_dim, group_count) = meta.map(|m| (m.m, m.k)).unwrap_or((0, 0));
    Ok(Dataset {
        feature_dim,
        group_count,
        samples,
    })
}

pub fn write_ground_truth(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in &truth.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(GroundTruth { records })
}
