//! Canned experiment definitions: the synthetic benchmark's four cities,
//! the model sizes, and one training configuration per benchmark arm (the
//! full method, its two ablations, and two baselines). Everything here is a
//! plain value constructor so the CLI and the acceptance suite share one
//! source of truth.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::ensemble::{ClassifierSpec, ModelConfig};
use crate::manifest::Split;
use crate::patch::QualityClass;
use crate::synthcity::{CityPlan, CityRole, CityStyle, SynthSpec};
use crate::trainer::TrainConfig;

/// Epochs of the benchmark runs; sized so all arms and seeds finish within
/// the advertised wall-clock budget on one CPU core.
pub const BENCH_EPOCHS: usize = 10;
/// Learning rate of the benchmark runs; the short schedule needs a larger
/// step than the long-run default.
pub const BENCH_LEARNING_RATE: f64 = 1e-3;
pub const BENCH_BATCH_SIZE: usize = 8;
/// End-to-end repetition seeds: each derives its own dataset and model
/// initialization.
pub const BENCH_SEEDS: [u64; 3] = [101, 202, 303];

/// The five benchmark arms compared by the end-to-end gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkArm {
    /// Ensemble with classifier, ordinal constraints, label refinement.
    Full,
    /// Single branch, plain pixel-wise L1 on all labels regardless of
    /// quality.
    Naive,
    /// Single branch trained on high-quality labels only.
    HighOnly,
    /// Full method minus the label-quality classifier loss.
    NoClassifier,
    /// Full method minus the ordinal pair penalty.
    NoOrdinal,
}

impl BenchmarkArm {
    pub const ALL: [BenchmarkArm; 5] = [
        BenchmarkArm::Full,
        BenchmarkArm::Naive,
        BenchmarkArm::HighOnly,
        BenchmarkArm::NoClassifier,
        BenchmarkArm::NoOrdinal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkArm::Full => "full",
            BenchmarkArm::Naive => "naive",
            BenchmarkArm::HighOnly => "high-only",
            BenchmarkArm::NoClassifier => "no-classifier",
            BenchmarkArm::NoOrdinal => "no-ordinal",
        }
    }
}

/// Three-branch model used by the full method and its ablations. Widths are
/// deliberately small: the synthetic scenes are simple and the benchmark
/// budget is minutes, not hours.
pub fn benchmark_model_config() -> ModelConfig {
    ModelConfig {
        input_channels: 3,
        n_branches: 3,
        encoder_widths: vec![6, 12, 18, 24],
        decoder_widths: vec![18, 12, 6],
        classifier: ClassifierSpec {
            conv_blocks: 2,
            width: 16,
            hidden: 16,
        },
        output_scale: 10.0,
    }
}

/// Degenerate single-branch variant for the naive and high-only baselines.
pub fn naive_model_config() -> ModelConfig {
    ModelConfig {
        n_branches: 1,
        ..benchmark_model_config()
    }
}

pub fn arm_model_config(arm: BenchmarkArm) -> ModelConfig {
    match arm {
        BenchmarkArm::Full | BenchmarkArm::NoClassifier | BenchmarkArm::NoOrdinal => {
            benchmark_model_config()
        }
        BenchmarkArm::Naive | BenchmarkArm::HighOnly => naive_model_config(),
    }
}

/// Training configuration of one benchmark arm. All arms share the
/// optimization budget; they differ only in which loss terms are active.
pub fn arm_train_config(arm: BenchmarkArm, seed: u64) -> TrainConfig {
    let base = TrainConfig {
        epochs: BENCH_EPOCHS,
        batch_size: BENCH_BATCH_SIZE,
        learning_rate: BENCH_LEARNING_RATE,
        seed,
        ..TrainConfig::default()
    };
    match arm {
        BenchmarkArm::Full => base,
        BenchmarkArm::Naive | BenchmarkArm::HighOnly => TrainConfig {
            classifier_loss: false,
            ordinal_loss: false,
            balanced_soft_loss: false,
            augmentation: false,
            ..base
        },
        BenchmarkArm::NoClassifier => TrainConfig {
            classifier_loss: false,
            ..base
        },
        BenchmarkArm::NoOrdinal => TrainConfig {
            ordinal_loss: false,
            ..base
        },
    }
}

/// The view of the dataset an arm trains on. The high-only baseline keeps
/// only high-quality training patches and validates on the cities those
/// cover; every other arm trains on everything. Test patches pass through
/// untouched so all arms are judged on identical data.
pub fn arm_dataset(arm: BenchmarkArm, dataset: &Dataset) -> Dataset {
    if arm != BenchmarkArm::HighOnly {
        return dataset.clone();
    }
    let mut out = Dataset::default();
    for patch in &dataset.train {
        if patch.quality == QualityClass::High {
            out.push(Split::Train, patch.clone());
        }
    }
    let tags = out.in_domain_tags();
    for patch in &dataset.val {
        if tags.contains(&patch.domain_tag) {
            out.push(Split::Val, patch.clone());
        }
    }
    for patch in &dataset.test {
        out.push(Split::Test, patch.clone());
    }
    out
}

/// The benchmark's four cities. One in-domain city with trustworthy labels,
/// one labeled by per-building medians, one labeled by biased floor counts
/// (true floor height 2.6 m, assumed 3.05 m), and one high-quality city
/// held out entirely for out-of-domain evaluation.
pub fn benchmark_synth_spec(seed: u64) -> SynthSpec {
    let city = |name: &str,
                style_seed: u64,
                azimuth: f64,
                shadow_scale: f64,
                palette: Vec<f32>,
                noise: f32,
                floor: f64,
                buildings: (u32, u32),
                footprint: (u32, u32),
                log_mu: f64,
                log_sigma: f64,
                trees: (u32, u32)| CityStyle {
        name: name.to_string(),
        seed: style_seed,
        buildings_per_patch: buildings,
        footprint_size: footprint,
        height_lognormal: (log_mu, log_sigma),
        sun_azimuth: azimuth,
        albedo_palette: palette,
        noise_std: noise,
        floor_height: floor,
        shadow_scale,
        trees_per_patch: trees,
    };
    SynthSpec {
        seed,
        patch_height: 64,
        patch_width: 64,
        cities: vec![
            CityPlan {
                style: city(
                    "alpha",
                    1,
                    135.0,
                    2.0,
                    vec![0.55, 0.62, 0.70, 0.78],
                    0.02,
                    3.0,
                    (3, 6),
                    (6, 14),
                    13.0f64.ln(),
                    0.50,
                    (0, 2),
                ),
                role: CityRole::High,
                train_patches: 120,
                val_patches: 30,
                test_patches: 350,
                assumed_floor_height: None,
            },
            CityPlan {
                style: city(
                    "beta",
                    2,
                    225.0,
                    2.9,
                    vec![0.48, 0.58, 0.66, 0.82, 0.90],
                    0.03,
                    3.2,
                    (2, 5),
                    (8, 16),
                    16.0f64.ln(),
                    0.50,
                    (0, 3),
                ),
                role: CityRole::Mid,
                train_patches: 120,
                val_patches: 30,
                test_patches: 350,
                assumed_floor_height: None,
            },
            CityPlan {
                style: city(
                    "gamma",
                    3,
                    90.0,
                    1.45,
                    vec![0.40, 0.50, 0.60, 0.68],
                    0.025,
                    2.6,
                    (3, 7),
                    (5, 12),
                    10.0f64.ln(),
                    0.50,
                    (0, 1),
                ),
                role: CityRole::Low,
                train_patches: 120,
                val_patches: 30,
                test_patches: 350,
                assumed_floor_height: Some(3.05),
            },
            CityPlan {
                style: city(
                    "delta",
                    4,
                    180.0,
                    2.4,
                    vec![0.45, 0.56, 0.64, 0.74, 0.86],
                    0.02,
                    3.0,
                    (3, 6),
                    (6, 14),
                    12.0f64.ln(),
                    0.45,
                    (0, 2),
                ),
                role: CityRole::High,
                train_patches: 0,
                val_patches: 0,
                test_patches: 350,
                assumed_floor_height: None,
            },
        ],
    }
}

/// Minutes-scale pipeline exercise: one tiny city, a handful of patches.
pub fn smoke_synth_spec(seed: u64) -> SynthSpec {
    let mut spec = benchmark_synth_spec(seed);
    spec.patch_height = 32;
    spec.patch_width = 32;
    spec.cities.truncate(1);
    let city = &mut spec.cities[0];
    city.train_patches = 6;
    city.val_patches = 2;
    city.test_patches = 2;
    // Lighter scenes: the quarter-size patches cannot host the benchmark's
    // building load.
    city.style.buildings_per_patch = (1, 3);
    city.style.footprint_size = (4, 8);
    city.style.trees_per_patch = (0, 1);
    spec
}

/// Two quick epochs over the smoke dataset.
pub fn smoke_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        learning_rate: 1e-3,
        seed,
        ..TrainConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_spec_is_valid_and_sized_for_the_budget() {
        let spec = benchmark_synth_spec(7);
        assert_eq!(spec.cities.len(), 4);
        let total: usize = spec
            .cities
            .iter()
            .map(|c| c.train_patches + c.val_patches + c.test_patches)
            .sum();
        assert_eq!(total, 1850);
        for city in &spec.cities {
            city.style.validate().unwrap();
        }
        // Exactly one city trains with low-quality labels and carries the
        // biased floor assumption.
        let lows: Vec<_> = spec
            .cities
            .iter()
            .filter(|c| c.role == CityRole::Low)
            .collect();
        assert_eq!(lows.len(), 1);
        let assumed = lows[0].assumed_floor_height.unwrap();
        assert!(
            assumed > lows[0].style.floor_height,
            "labels carry an upward bias"
        );
        assert!(lows[0].style.floor_height < 2.8);
        // One city is evaluation-only.
        assert!(spec
            .cities
            .iter()
            .any(|c| c.train_patches == 0 && c.test_patches > 0));
    }

    #[test]
    fn arm_configs_toggle_the_right_losses() {
        for arm in BenchmarkArm::ALL {
            let config = arm_train_config(arm, 1);
            config.validate().unwrap();
            assert_eq!(config.epochs, BENCH_EPOCHS);
            assert_eq!(config.seed, 1);
            let model = arm_model_config(arm);
            model.validate().unwrap();
            match arm {
                BenchmarkArm::Full => {
                    assert!(config.classifier_loss && config.ordinal_loss);
                    assert!(config.balanced_soft_loss && config.augmentation);
                    assert_eq!(model.n_branches, 3);
                }
                BenchmarkArm::Naive | BenchmarkArm::HighOnly => {
                    assert!(!config.classifier_loss && !config.ordinal_loss);
                    assert!(!config.balanced_soft_loss && !config.augmentation);
                    assert_eq!(model.n_branches, 1);
                }
                BenchmarkArm::NoClassifier => {
                    assert!(!config.classifier_loss);
                    assert!(config.ordinal_loss && config.balanced_soft_loss);
                }
                BenchmarkArm::NoOrdinal => {
                    assert!(!config.ordinal_loss);
                    assert!(config.classifier_loss && config.balanced_soft_loss);
                }
            }
        }
    }

    #[test]
    fn high_only_view_filters_train_and_val() {
        use crate::manifest::Split;
        use crate::patch::Patch;
        use ndarray::{Array2, Array3};

        let patch = |quality: QualityClass, tag: &str| {
            let mut p = Patch {
                image: Array3::from_elem((3, 8, 8), 0.5),
                height: Array2::zeros((8, 8)),
                instances: Array2::zeros((8, 8)),
                floors: None,
                quality: QualityClass::High,
                domain_tag: tag.to_string(),
                assumed_floor_height: None,
            };
            match quality {
                QualityClass::High => {}
                QualityClass::Mid => p.quality = QualityClass::Mid,
                QualityClass::Low => {
                    p.quality = QualityClass::Low;
                    p.floors = Some(Array2::zeros((8, 8)).mapv(|_: u16| 0));
                    p.assumed_floor_height = Some(3.0);
                }
            }
            p
        };
        let mut d = Dataset::default();
        d.push(Split::Train, patch(QualityClass::High, "a"));
        d.push(Split::Train, patch(QualityClass::Mid, "b"));
        d.push(Split::Train, patch(QualityClass::Low, "c"));
        d.push(Split::Val, patch(QualityClass::High, "a"));
        d.push(Split::Val, patch(QualityClass::High, "b"));
        d.push(Split::Test, patch(QualityClass::High, "c"));

        let filtered = arm_dataset(BenchmarkArm::HighOnly, &d);
        assert_eq!(filtered.train.len(), 1);
        assert_eq!(filtered.val.len(), 1);
        assert_eq!(filtered.val[0].domain_tag, "a");
        assert_eq!(filtered.test.len(), 1, "test passes through untouched");

        let full = arm_dataset(BenchmarkArm::Full, &d);
        assert_eq!(full.train.len(), 3);
        assert_eq!(full.val.len(), 2);
    }

    #[test]
    fn smoke_preset_is_tiny() {
        let spec = smoke_synth_spec(1);
        assert_eq!(spec.cities.len(), 1);
        assert_eq!((spec.patch_height, spec.patch_width), (32, 32));
        let total: usize = spec
            .cities
            .iter()
            .map(|c| c.train_patches + c.val_patches + c.test_patches)
            .sum();
        assert!(total <= 10);
        smoke_train_config(3).validate().unwrap();
    }
}
