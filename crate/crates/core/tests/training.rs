//! Library-level pipeline check on a tiny three-city dataset carrying all
//! three label qualities: training reduces the loss, the best checkpoint
//! reloads to identical predictions, and blended evaluation groups sets
//! into in- and out-domain averages.

use weakheight_core::ensemble::{load_checkpoint, ClassifierSpec, ModelConfig};
use weakheight_core::manifest::Split;
use weakheight_core::synthcity::{synthesize, CityPlan, CityRole, CityStyle, SynthSpec};
use weakheight_core::trainer::{evaluate_blended, fit, TrainConfig};

fn tiny_city(name: &str, seed: u64, role: CityRole) -> CityPlan {
    CityPlan {
        style: CityStyle {
            name: name.to_string(),
            seed,
            buildings_per_patch: (1, 3),
            footprint_size: (4, 8),
            height_lognormal: (12.0f64.ln(), 0.4),
            sun_azimuth: 135.0,
            albedo_palette: vec![0.35, 0.55, 0.75],
            noise_std: 0.02,
            floor_height: 2.8,
            shadow_scale: 2.0,
            trees_per_patch: (0, 1),
        },
        role,
        train_patches: 4,
        val_patches: 2,
        test_patches: 2,
        assumed_floor_height: (role == CityRole::Low).then_some(3.1),
    }
}

fn tiny_spec() -> SynthSpec {
    SynthSpec {
        seed: 97,
        patch_height: 32,
        patch_width: 32,
        cities: vec![
            tiny_city("hightown", 1, CityRole::High),
            tiny_city("midville", 2, CityRole::Mid),
            tiny_city("lowburg", 3, CityRole::Low),
        ],
    }
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        input_channels: 3,
        n_branches: 3,
        encoder_widths: vec![4, 6],
        decoder_widths: vec![4],
        classifier: ClassifierSpec {
            conv_blocks: 1,
            width: 4,
            hidden: 8,
        },
        output_scale: 10.0,
    }
}

#[test]
fn training_on_mixed_qualities_reduces_loss_and_reloads() {
    let dataset = synthesize(&tiny_spec()).unwrap();
    assert_eq!(dataset.train.len(), 12);
    assert_eq!(dataset.val.len(), 6);
    assert_eq!(dataset.test.len(), 6);

    let config = TrainConfig {
        epochs: 4,
        batch_size: 4,
        learning_rate: 1e-3,
        seed: 97,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let checkpoint = dir.path().join("model.wkhc");
    let outcome = fit(&dataset, &tiny_model(), &config, Some(&checkpoint)).unwrap();

    // The optimizer makes progress: the mean total loss over the last
    // epoch's steps is below the first epoch's.
    let epoch_mean = |epoch: usize| {
        let totals: Vec<f64> = outcome
            .log
            .step_records()
            .filter(|s| s.epoch == epoch)
            .map(|s| s.total)
            .collect();
        assert!(!totals.is_empty(), "epoch {epoch} logged no steps");
        totals.iter().sum::<f64>() / totals.len() as f64
    };
    let first = epoch_mean(0);
    let last = epoch_mean(config.epochs - 1);
    assert!(
        last < first,
        "mean step loss should drop across training: first {first}, last {last}"
    );

    assert_eq!(outcome.log.val_records().count(), config.epochs);
    assert!(outcome.best_epoch < config.epochs);
    assert!(outcome.best_val_rmse.is_finite() && outcome.best_val_rmse > 0.0);

    // Scoring the test split groups the high-quality city as in-domain and
    // the degraded cities as out-domain.
    let sets = dataset.sets_of(Split::Test);
    let in_domain = dataset.in_domain_tags();
    assert!(in_domain.contains("hightown"));
    assert!(!in_domain.contains("midville") && !in_domain.contains("lowburg"));
    let (report, _) = evaluate_blended(&outcome.model, &sets, &in_domain, 1).unwrap();
    assert_eq!(report.per_set_rmse.len(), 3);
    assert!(report.combined_avg.is_finite() && report.combined_avg > 0.0);
    assert!(report.in_domain_avg.is_some());
    assert!(report.out_domain_avg.is_some());

    // The checkpoint on disk is the best-epoch model: reloading it must
    // reproduce the returned model's predictions exactly.
    let reloaded = load_checkpoint(&checkpoint).unwrap();
    let (re_report, _) = evaluate_blended(&reloaded, &sets, &in_domain, 1).unwrap();
    assert_eq!(re_report.combined_avg, report.combined_avg);
    assert_eq!(re_report.per_set_rmse, report.per_set_rmse);
}
