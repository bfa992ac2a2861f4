//! Experiment configuration: one JSON document with a versioned schema.

use std::fs;
use std::path::{Path, PathBuf};

use cfodds_core::cevae::{Bandwidth, CevaeArchitecture, CevaeSpec, CevaeTrainConfig, LossWeights};
use cfodds_core::data::SemRecipe;
use cfodds_core::fair::{BaselineConfig, FairTrainConfig};
use cfodds_core::metrics::UtilitySpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Master seed; every stage derives its own streams from it.
    #[serde(default)]
    pub seed: u64,
    /// Used when `--out` is not given. Relative paths resolve against the
    /// directory holding the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub cevae: CevaeConfig,
    #[serde(default)]
    pub fair: FairTrainConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub utility: UtilitySpec,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSource),
    File(FileSource),
}

/// A synthetic structural equation model. Weights and samples are seeded
/// from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSource {
    pub n: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub group_count: usize,
    pub group_marginals: Vec<f64>,
    pub u_to_x_scale: f64,
    pub a_to_x_scale: f64,
    pub x_bias: f64,
    pub u_to_y_scale: f64,
    pub a_to_y: Vec<f64>,
    pub y_bias: f64,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        let r = SemRecipe::desk_default(0);
        Self {
            n: 2000,
            latent_dim: r.latent_dim,
            feature_dim: 50,
            group_count: r.group_count,
            group_marginals: r.group_marginals,
            u_to_x_scale: r.u_to_x_scale,
            a_to_x_scale: r.a_to_x_scale,
            x_bias: r.x_bias,
            u_to_y_scale: r.u_to_y_scale,
            a_to_y: r.a_to_y,
            y_bias: r.y_bias,
        }
    }
}

impl SyntheticSource {
    pub fn recipe(&self, seed: u64) -> SemRecipe {
        SemRecipe {
            latent_dim: self.latent_dim,
            feature_dim: self.feature_dim,
            group_count: self.group_count,
            group_marginals: self.group_marginals.clone(),
            u_to_x_scale: self.u_to_x_scale,
            a_to_x_scale: self.a_to_x_scale,
            x_bias: self.x_bias,
            u_to_y_scale: self.u_to_y_scale,
            a_to_y: self.a_to_y.clone(),
            y_bias: self.y_bias,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    /// Dataset JSONL; relative paths resolve against the config directory.
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Train, validation and test shares.
    pub fractions: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CevaeConfig {
    pub architecture: CevaeArchitecture,
    pub loss_weights: LossWeights,
    pub bandwidth: Bandwidth,
    pub training: CevaeTrainConfig,
}

impl Default for CevaeConfig {
    fn default() -> Self {
        Self {
            architecture: CevaeArchitecture::default(),
            loss_weights: LossWeights::default(),
            bandwidth: Bandwidth::Median,
            training: CevaeTrainConfig::default(),
        }
    }
}

impl CevaeConfig {
    pub fn spec(&self, feature_dim: usize, group_count: usize) -> cfodds_core::Result<CevaeSpec> {
        CevaeSpec::new(
            feature_dim,
            group_count,
            &self.architecture,
            self.loss_weights,
            self.bandwidth,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Display names of the attribute values; `a=<k>` when absent.
    pub group_labels: Option<Vec<String>>,
}

impl ExperimentConfig {
    /// Reads, parses and validates a config file. Relative paths inside it
    /// are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::parse(&text).map_err(|(key, message)| CliError::ConfigParse {
            path: path.to_path_buf(),
            key,
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    /// Parses without validating. On failure returns the dotted path of the
    /// offending key (the unknown key itself when one is present) and a
    /// message naming it.
    pub fn parse(text: &str) -> std::result::Result<Self, (Option<String>, String)> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner().to_string();
            let parent = e.path().to_string();
            let unknown = unknown_key(&inner);
            // the path already ends in the unknown key for struct fields
            let key = match (unknown, parent.as_str()) {
                (Some(k), "." | "") => Some(k),
                (Some(k), p) if p == k || p.ends_with(&format!(".{k}")) => Some(p.to_string()),
                (Some(k), p) => Some(format!("{p}.{k}")),
                (None, "." | "") => None,
                (None, p) => Some(p.to_string()),
            };
            let message = match (&key, unknown_key(&inner)) {
                (Some(k), Some(_)) => format!("unknown config key `{k}`: {inner}"),
                (Some(k), None) => format!("config key `{k}`: {inner}"),
                (None, _) => inner,
            };
            (key, message)
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(out) = self.output_dir.as_mut() {
            resolve(out);
        }
        if let DatasetSource::File(f) = &mut self.dataset {
            resolve(&mut f.dataset);
            if let Some(g) = f.ground_truth.as_mut() {
                resolve(g);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(CliError::InvalidConfig(m));
        if self.schema_version != SCHEMA_VERSION {
            return invalid(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let core =
            |r: cfodds_core::Result<()>| r.map_err(|e| CliError::InvalidConfig(e.to_string()));
        let fr = self.split.fractions;
        if fr.iter().any(|f| !(*f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid(format!(
                "split.fractions must be positive and sum to 1, got {fr:?}"
            ));
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            if s.n < 3 {
                return invalid("dataset.synthetic.n must be at least 3".into());
            }
            core(self.cevae.spec(s.feature_dim, s.group_count).map(|_| ()))?;
            core(s.recipe(0).build().map(|_| ()))?;
            if let Some(labels) = &self.report.group_labels {
                if labels.len() != s.group_count {
                    return invalid(format!(
                        "report.group_labels has {} entries for {} groups",
                        labels.len(),
                        s.group_count
                    ));
                }
            }
        }
        core(self.cevae.training.validate())?;
        core(self.fair.validate())?;
        core(self.baseline.validate())?;
        core(self.utility.validate())?;
        Ok(())
    }

    /// Hash of the canonical JSON form, excluding the output directory.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        format!("{:x}", Sha256::digest(bytes))
    }

    pub fn group_labels(&self, group_count: usize) -> Vec<String> {
        match &self.report.group_labels {
            Some(labels) if labels.len() == group_count => labels.clone(),
            _ => (0..group_count).map(|k| format!("a={k}")).collect(),
        }
    }
}

/// Extracts `foo` from serde's "unknown field `foo`, expected ..." message.
fn unknown_key(message: &str) -> Option<String> {
    let rest = message
        .strip_prefix("unknown field `")
        .or_else(|| message.strip_prefix("unknown variant `"))?;
    rest.split('`').next().map(str::to_string)
}
