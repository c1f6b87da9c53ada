//! `weakheight`: synthesize mixed-quality height datasets, train the
//! branch-per-quality ensemble, evaluate building-wise RMSE, predict, and
//! render reports. One JSON config document drives everything; flags
//! override file keys; every command is deterministic under a fixed seed
//! when run single-threaded.

mod cli_error;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use weakheight_core::manifest::Split;

use config::ConfigArgs;

const CONFIG_KEY_HELP: &str = "\
CONFIG FILE (--config, JSON):
  One document, unknown keys rejected. All sections optional.

  schema_version               1        document format version

  train.epochs                 200      optimizer passes over the train split
  train.batch_size             8        patches per optimizer step
  train.learning_rate          1e-4     Adam step size
  train.seed                   0        master seed for every random draw
  train.workers                1        forward/backward fan-out threads
  train.stratified_batches     false    deal batches across label qualities
  train.classifier_loss        true     label-quality classifier term
  train.ordinal_loss           true     pairwise ordering term
  train.balanced_soft_loss     true     buffered loss on mid/low labels
                                        (false = plain L1 on raw labels)
  train.augmentation           true     annealed label refinement
  train.lambda_tau_mid         0.3      buffer width fraction, mid labels
  train.lambda_tau_low         0.5      buffer width fraction, low labels
  train.sample_fraction        0.10     pixels drawn per balanced sample
  train.h_min                  1.0      lowest binned height (m)
  train.h_max                  150.0    highest binned height (m)
  train.bin_classes            20       geometric height bins
  train.pair_budget            null     ordinal pairs per evaluation
                                        (null = patch pixel count)
  train.constraint_type        \"(H+M)C+L\"  pair scheme; one of
                               \"(H+M)C+L\", \"H+M\", \"(H+M)C\", \"H+M+L\",
                               \"random-sampling\"
  train.eta0                   1.0      initial label weight in refinement
  train.eta_decay              0.99     per-epoch decay toward the 0.5 floor
  train.omega_rel              0.1      agreement window fraction
  train.aug_dropout            0.3      chance to skip refining a patch

  model.input_channels         3        image channels
  model.n_branches             3        decoders (one per label quality)
  model.encoder_widths         [6,12,18,24]   stem + stride-2 stages
  model.decoder_widths         [18,12,6]      upsampling stages
  model.classifier.conv_blocks 2        quality-classifier depth
  model.classifier.width       16       quality-classifier channels
  model.classifier.hidden      16       quality-classifier FC width
  model.output_scale           10.0     meters per unit of head output

  synth                        four-city benchmark seeded by train.seed;
                               set to a plan object to override: seed,
                               patch_height, patch_width, cities[] each
                               with style {name, seed, buildings_per_patch,
                               footprint_size, height_lognormal,
                               sun_azimuth, albedo_palette, noise_std,
                               floor_height, shadow_scale, trees_per_patch},
                               role (high|mid|low), train_patches,
                               val_patches, test_patches,
                               assumed_floor_height

  paths.data_dir               null     dataset directory
  paths.out_dir                null     output directory
  paths.checkpoint             null     model checkpoint

ENVIRONMENT:
  WEAKHEIGHT_CACHE   fallback parent for dataset directories
                     (<cache>/synth-seed-<seed>)

EXIT CODES:
  0 success, 2 configuration error, 3 data error, 4 numeric failure
";

#[derive(Parser)]
#[command(
    name = "weakheight",
    version,
    about = "Pixel-wise height estimation from mixed-quality labels",
    after_long_help = CONFIG_KEY_HELP,
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic mixed-quality dataset plus its manifest.
    Synth(SynthArgs),
    /// Train on a dataset directory; write checkpoint and JSON-lines log.
    Train(TrainArgs),
    /// Score a checkpoint on one split; write metrics.csv and report.json.
    Eval(EvalArgs),
    /// Blend branch predictions for patch files; write heights and PNGs.
    Predict(PredictArgs),
    /// Write metric reports plus rendered prediction/truth/error maps.
    Report(ReportArgs),
}

#[derive(clap::Args)]
struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset output directory (default: paths.out_dir, then
    /// $WEAKHEIGHT_CACHE/synth-seed-<seed>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset directory (default: paths.data_dir, then
    /// $WEAKHEIGHT_CACHE/synth-seed-<seed>).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Where the checkpoint, log, and resolved config are written.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Trained model checkpoint (.wkhc).
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Where metrics.csv and report.json are written.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Which split to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Threads for the forward passes (1 = sequential).
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(clap::Args)]
struct PredictArgs {
    /// Trained model checkpoint (.wkhc).
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Output directory for height CSVs and PNG renderings.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Use one branch's head instead of the probability blend.
    #[arg(long, value_name = "INDEX")]
    branch: Option<usize>,
    /// Patch container files (.wkh1), processed in the given order.
    #[arg(required = true, value_name = "PATCH")]
    patches: Vec<PathBuf>,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Trained model checkpoint (.wkhc).
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Where metrics, report JSON, and rendered maps are written.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Which split to score and render.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Patches rendered per evaluation set.
    #[arg(long, default_value_t = 2, value_name = "N")]
    per_set: usize,
    /// Threads for the forward passes (1 = sequential).
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Predict(args) => commands::predict(args),
        Command::Report(args) => commands::report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
