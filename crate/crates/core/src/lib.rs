//! Training and evaluation toolkit for pixel-wise monocular height
//! estimation from mixed-quality labels.
//!
//! The pipeline trains a shared-encoder ensemble with one decoder per
//! label-quality class plus a quality classifier, blends branch outputs by
//! the predicted quality probabilities at inference, and supervises noisy
//! labels through buffer-softened balanced losses, pairwise ordinal
//! constraints over space-increasing height bins, and annealed label
//! refinement. A deterministic synthetic-city generator provides an
//! end-to-end benchmark with controllable label degradations.
//!
//! | module       | contents                                              |
//! |--------------|-------------------------------------------------------|
//! | `patch`      | data model and validation                             |
//! | `container`  | binary patch file format                              |
//! | `manifest`   | dataset index and integrity checks                    |
//! | `dataset`    | in-memory split views                                 |
//! | `synthcity`  | synthetic city rendering and label degradations       |
//! | `heightbins` | height discretization and balanced samplers           |
//! | `losses`     | loss kernels and gradients                            |
//! | `gtaug`      | ground-truth refinement schedule                      |
//! | `nn`         | minimal CNN layers with explicit backprop             |
//! | `ensemble`   | the multi-branch model and checkpoints                |
//! | `trainer`    | training loop, loss routing, logs                     |
//! | `evalsuite`  | building-wise metrics, reports, and map rendering     |
//! | `presets`    | canned benchmark cities and per-arm configurations    |
//! | `seeds`      | named deterministic RNG stream derivation             |
//! | `stats`      | instance medians and rank statistics                  |

#![warn(clippy::all)]

pub mod container;
pub mod dataset;
pub mod ensemble;
pub mod evalsuite;
pub mod gtaug;
pub mod heightbins;
pub mod losses;
pub mod manifest;
pub mod nn;
pub mod patch;
pub mod presets;
pub mod seeds;
pub mod stats;
pub mod synthcity;
pub mod trainer;

pub use container::{load_patch, save_patch, ContainerError};
pub use dataset::{load_dataset, save_dataset, Dataset};
pub use ensemble::{
    blend, blend_one, branch_prediction, load_checkpoint, save_checkpoint, CheckpointError,
    ClassifierSpec, EnsembleModel, EnsembleOutput, Gradients, ModelConfig, ModelError,
};
pub use evalsuite::{
    building_medians, building_records, building_rmse, grouped_report, render_height_png,
    render_maps, BuildingRecord, DomainGroup, EvalError, MetricsReport, SetResult,
};
pub use gtaug::{augment_ground_truth, AugmentationState};
pub use heightbins::{
    balanced_pair_sample, balanced_pixel_sample, random_pair_sample, sid_thresholds, PixelPair,
    PixelPairSet, SidBins,
};
pub use losses::{
    balanced_soft_height_loss, domain_classification_loss, hard_height_loss,
    ordinal_constraint_loss, soft_height_residual, LossBreakdown, LossError,
};
pub use manifest::{
    load_manifest, save_manifest, validate_dataset, DatasetManifest, ManifestEntry, Split,
};
pub use patch::{validate_patch, Patch, QualityClass, Violation};
pub use presets::{
    arm_dataset, arm_model_config, arm_train_config, benchmark_model_config, benchmark_synth_spec,
    naive_model_config, smoke_synth_spec, smoke_train_config, BenchmarkArm, BENCH_SEEDS,
};
pub use synthcity::{
    degrade_to_low, degrade_to_mid, generate_city, generate_city_with_stats, synthesize, CityPlan,
    CityRole, CityStyle, GenerationError, SynthSpec,
};
pub use trainer::{
    batch_gradients, evaluate_blended, fit, select_best, train_step, ConstraintType, FitOutcome,
    LogRecord, StepRecord, TrainConfig, TrainError, TrainingLog, ValRecord,
};
