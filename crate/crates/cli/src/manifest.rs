//! Output directory layout and the artifact manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Stage names, in pipeline order.
pub const STAGES: [&str; 6] = [
    "generate",
    "split",
    "train-vae",
    "train-fair",
    "evaluate",
    "report",
];

/// Splits scored and reported.
pub const EVAL_SPLITS: [&str; 2] = ["validation", "test"];

/// Paths of every artifact under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("data/dataset.jsonl")
    }
    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("data/ground_truth.jsonl")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("data/split.json")
    }
    pub fn vae(&self) -> PathBuf {
        self.root.join("vae/cevae.json")
    }
    pub fn vae_trace(&self) -> PathBuf {
        self.root.join("vae/training_trace.csv")
    }
    pub fn ledger(&self) -> PathBuf {
        self.root.join("fair/candidates.csv")
    }
    pub fn candidate_dir(&self) -> PathBuf {
        self.root.join("fair/checkpoints")
    }
    pub fn candidate(&self, index: usize) -> PathBuf {
        self.candidate_dir()
            .join(format!("candidate_{index:03}.json"))
    }
    pub fn baseline(&self) -> PathBuf {
        self.root.join("baseline/baseline.json")
    }
    pub fn baseline_ledger(&self) -> PathBuf {
        self.root.join("baseline/search.csv")
    }
    pub fn evaluation(&self, split: &str) -> PathBuf {
        self.root.join(format!("evaluation/{split}.json"))
    }
    pub fn report_dir(&self, split: &str) -> PathBuf {
        self.root.join("report").join(split)
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    /// `path` relative to the root, with forward slashes.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Errors with the expected path when an upstream artifact is absent.
    pub fn require(&self, path: PathBuf, stage: &'static str) -> Result<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact { path, stage })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory.
    pub path: String,
    pub stage: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    /// Sorted by path.
    pub artifacts: Vec<ArtifactRecord>,
    pub failure: Option<FailureRecord>,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok((bytes.len() as u64, format!("{:x}", Sha256::digest(&bytes))))
}

impl Manifest {
    /// The manifest on disk, or an empty one.
    pub fn load_or_new(layout: &Layout, seed: u64, config_sha256: &str) -> Result<Self> {
        let path = layout.manifest();
        let mut manifest = if path.is_file() {
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::MalformedArtifact {
                path: path.clone(),
                message: e.to_string(),
            })?
        } else {
            Manifest {
                schema_version: crate::config::SCHEMA_VERSION,
                seed,
                config_sha256: String::new(),
                artifacts: Vec::new(),
                failure: None,
            }
        };
        manifest.seed = seed;
        manifest.config_sha256 = config_sha256.to_string();
        Ok(manifest)
    }

    /// Replaces every entry of `stage` with the given files.
    pub fn record_stage(&mut self, layout: &Layout, stage: &str, files: &[PathBuf]) -> Result<()> {
        self.artifacts.retain(|a| a.stage != stage);
        for f in files {
            let path = layout.relative(f);
            let (bytes, sha256) = sha256_file(f)?;
            self.artifacts.retain(|a| a.path != path);
            self.artifacts.push(ArtifactRecord {
                path,
                stage: stage.to_string(),
                bytes,
                sha256,
            });
        }
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(())
    }

    pub fn write(&self, layout: &Layout) -> Result<()> {
        let path = layout.manifest();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
