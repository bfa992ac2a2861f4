//! Experiment pipeline: generate, split, train the VAE, train predictors,
//! evaluate and report, each stage reading and writing one output directory.

// `!(x > 0.0)` is how validation rejects NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

use std::fs;
use std::path::PathBuf;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use manifest::{Layout, Manifest};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "CFODDS_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Split,
    TrainVae,
    TrainFair,
    Evaluate,
    Report,
    /// Every stage in order.
    Run,
}

impl Command {
    pub fn stages(self) -> &'static [&'static str] {
        let all = &manifest::STAGES;
        match self {
            Self::Generate => &all[0..1],
            Self::Split => &all[1..2],
            Self::TrainVae => &all[2..3],
            Self::TrainFair => &all[3..4],
            Self::Evaluate => &all[4..5],
            Self::Report => &all[5..6],
            Self::Run => all,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

type StageFn = fn(&ExperimentConfig, &Layout) -> Result<Vec<PathBuf>>;

fn stage_fn(name: &str) -> StageFn {
    match name {
        "generate" => stages::generate,
        "split" => stages::split,
        "train-vae" => stages::train_vae,
        "train-fair" => stages::train_fair,
        "evaluate" => stages::evaluate,
        "report" => stages::report,
        other => unreachable!("unknown stage {other}"),
    }
}

/// Loads the config with command-line overrides applied. Nothing is written.
pub fn resolve(invocation: &Invocation) -> Result<(ExperimentConfig, Layout)> {
    let mut config = ExperimentConfig::load(&invocation.config)?;
    if let Some(seed) = invocation.seed {
        config.seed = seed;
    }
    let root = invocation
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| {
            CliError::InvalidConfig("no output directory: pass --out or set output_dir".into())
        })?;
    Ok((config, Layout::new(root)))
}

/// Runs the stages of `invocation.command`, updating the manifest after each.
/// On failure the manifest keeps the artifacts of completed stages and a
/// failure record.
pub fn execute(invocation: &Invocation) -> Result<Manifest> {
    let (config, layout) = resolve(invocation)?;
    fs::create_dir_all(&layout.root).map_err(|e| CliError::io(&layout.root, e))?;
    let mut manifest = Manifest::load_or_new(&layout, config.seed, &config.fingerprint())?;
    manifest.failure = None;

    let config_path = layout.config();
    let mut text = serde_json::to_string_pretty(&config).expect("config serializes");
    text.push('\n');
    fs::write(&config_path, text).map_err(|e| CliError::io(&config_path, e))?;
    manifest.record_stage(&layout, "config", &[config_path])?;
    manifest.write(&layout)?;

    for &stage in invocation.command.stages() {
        match stage_fn(stage)(&config, &layout) {
            Ok(files) => {
                manifest.record_stage(&layout, stage, &files)?;
                manifest.write(&layout)?;
            }
            Err(e) => {
                manifest.failure = Some(manifest::FailureRecord {
                    stage: stage.to_string(),
                    message: e.to_string(),
                });
                manifest.write(&layout)?;
                return Err(CliError::Stage {
                    stage,
                    source: Box::new(e),
                });
            }
        }
    }
    Ok(manifest)
}

/// Sizes the global worker pool from `CFODDS_THREADS` when set. Returns the
/// requested count.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::InvalidConfig(format!(
            "{THREADS_ENV} must be a positive integer, got `{raw}`"
        ))
    })?;
    // a pool built earlier in the process keeps its size
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(Some(n))
}
