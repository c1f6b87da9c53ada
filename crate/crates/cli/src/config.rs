//! The run configuration: one JSON document covering training knobs, model
//! architecture, the synthesis plan, and default paths, plus the flag
//! overrides layered on top of it. Precedence, lowest to highest: built-in
//! defaults, config file, `--profile`, individual flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weakheight_core::ensemble::ModelConfig;
use weakheight_core::presets::{
    benchmark_model_config, benchmark_synth_spec, smoke_synth_spec, BENCH_BATCH_SIZE, BENCH_EPOCHS,
    BENCH_LEARNING_RATE,
};
use weakheight_core::synthcity::SynthSpec;
use weakheight_core::trainer::{ConstraintType, TrainConfig};

use crate::cli_error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything one experiment needs, serializable as a single JSON document.
/// Unknown keys anywhere in the document are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "benchmark_model_config")]
    pub model: ModelConfig,
    /// Synthesis plan; when omitted, the four benchmark cities seeded from
    /// `train.seed`.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub paths: RunPaths,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

/// Default locations, each overridable by the corresponding flag.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            train: TrainConfig::default(),
            model: benchmark_model_config(),
            synth: None,
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                path.display(),
                config.schema_version
            )));
        }
        Ok(config)
    }

    /// The synthesis plan this run refers to, materializing the default.
    pub fn resolved_synth(&self) -> SynthSpec {
        self.synth
            .clone()
            .unwrap_or_else(|| benchmark_synth_spec(self.train.seed))
    }
}

pub fn write_run_config(config: &RunConfig, path: &Path) -> Result<(), CliError> {
    let io_err = |e| CliError::Data(format!("cannot write {}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let text = serde_json::to_string_pretty(config).expect("run config always serializes");
    std::fs::write(path, text).map_err(io_err)
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Four-city mixed-quality benchmark (minutes on one CPU core).
    Bench,
    /// One tiny city, two epochs; a pipeline plumbing check.
    Smoke,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Drop the label-quality classifier loss.
    NoClassifier,
    /// Drop the ordinal pair penalty.
    NoOrdinal,
    /// Drop the annealed label refinement.
    NoAugmentation,
    /// Supervise every branch with plain L1 on raw labels.
    NoSoft,
    /// All of the above plus a single decoder branch.
    Naive,
}

/// Flags shared by `synth` and `train`; every one of them overrides the
/// matching config-file key.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run-configuration file; omitted sections use the defaults
    /// listed at the bottom of `--help`.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Canned settings applied over the config file.
    #[arg(long, value_enum, value_name = "NAME")]
    pub profile: Option<Profile>,

    /// Master seed; also reseeds the synthesis plan.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Optimizer passes over the training split.
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,

    /// Patches per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Threads for per-sample forward/backward fan-out (1 = sequential).
    #[arg(long)]
    pub workers: Option<usize>,

    /// Ordinal pair scheme: "(H+M)C+L", "H+M", "(H+M)C", "H+M+L", or
    /// "random-sampling".
    #[arg(long, value_name = "SCHEME", value_parser = parse_constraint)]
    pub constraint_type: Option<ConstraintType>,

    /// Switch one training ingredient off; repeatable.
    #[arg(long, value_enum, value_name = "PART")]
    pub ablate: Vec<Ablation>,

    /// Decoder branch count (1 collapses the ensemble to a single head).
    #[arg(long)]
    pub branches: Option<usize>,

    /// Deal each batch across label qualities round-robin.
    #[arg(long)]
    pub stratified: bool,
}

fn parse_constraint(s: &str) -> Result<ConstraintType, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        format!(
            "unknown scheme `{s}` (expected \"(H+M)C+L\", \"H+M\", \"(H+M)C\", \
             \"H+M+L\", or \"random-sampling\")"
        )
    })
}

/// Builds the effective configuration: file, then profile, then flags.
pub fn resolve(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut rc = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };

    match args.profile {
        Some(Profile::Bench) => {
            rc.train.epochs = BENCH_EPOCHS;
            rc.train.batch_size = BENCH_BATCH_SIZE;
            rc.train.learning_rate = BENCH_LEARNING_RATE;
            rc.model = benchmark_model_config();
            rc.synth = Some(benchmark_synth_spec(rc.train.seed));
        }
        Some(Profile::Smoke) => {
            rc.train.epochs = 2;
            rc.train.batch_size = 4;
            rc.train.learning_rate = 1e-3;
            rc.synth = Some(smoke_synth_spec(rc.train.seed));
        }
        None => {}
    }

    if let Some(seed) = args.seed {
        rc.train.seed = seed;
        if let Some(spec) = &mut rc.synth {
            spec.seed = seed;
        }
    }
    if let Some(epochs) = args.epochs {
        rc.train.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        rc.train.learning_rate = lr;
    }
    if let Some(batch) = args.batch_size {
        rc.train.batch_size = batch;
    }
    if let Some(workers) = args.workers {
        rc.train.workers = workers;
    }
    if let Some(kind) = args.constraint_type {
        rc.train.constraint_type = kind;
    }
    if args.stratified {
        rc.train.stratified_batches = true;
    }
    for ablation in &args.ablate {
        match ablation {
            Ablation::NoClassifier => rc.train.classifier_loss = false,
            Ablation::NoOrdinal => rc.train.ordinal_loss = false,
            Ablation::NoAugmentation => rc.train.augmentation = false,
            Ablation::NoSoft => rc.train.balanced_soft_loss = false,
            Ablation::Naive => {
                rc.train.classifier_loss = false;
                rc.train.ordinal_loss = false;
                rc.train.augmentation = false;
                rc.train.balanced_soft_loss = false;
                rc.model.n_branches = 1;
            }
        }
    }
    if let Some(branches) = args.branches {
        rc.model.n_branches = branches;
    }

    rc.train.validate().map_err(CliError::from)?;
    rc.model.validate().map_err(CliError::from)?;
    Ok(rc)
}

/// Dataset cache root from `WEAKHEIGHT_CACHE`, if set.
pub fn cache_root() -> Option<PathBuf> {
    std::env::var_os("WEAKHEIGHT_CACHE").map(PathBuf::from)
}

/// Where a run's dataset lives when no explicit directory is given: the
/// configured `paths.data_dir`, else `$WEAKHEIGHT_CACHE/synth-seed-<seed>`.
pub fn default_data_dir(rc: &RunConfig) -> Option<PathBuf> {
    rc.paths.data_dir.clone().or_else(|| {
        cache_root().map(|c| c.join(format!("synth-seed-{}", rc.resolved_synth().seed)))
    })
}
