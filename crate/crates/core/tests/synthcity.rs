//! Statistical and round-trip properties of the synthetic city generator.

use tempfile::tempdir;
use weakheight_core::patch::validate_patch;
use weakheight_core::stats::spearman;
use weakheight_core::synthcity::{
    degrade_to_low, degrade_to_mid, generate_city_with_stats, synthesize, CityPlan, CityRole,
    CityStyle, SynthSpec,
};
use weakheight_core::{load_dataset, save_dataset, validate_dataset};

fn base_style(name: &str, seed: u64) -> CityStyle {
    CityStyle {
        name: name.into(),
        seed,
        buildings_per_patch: (2, 4),
        footprint_size: (4, 8),
        height_lognormal: (10.0f64.ln(), 0.5),
        sun_azimuth: 135.0,
        albedo_palette: vec![0.5, 0.65, 0.8],
        noise_std: 0.02,
        floor_height: 3.0,
        shadow_scale: 2.0,
        trees_per_patch: (0, 2),
    }
}

#[test]
fn lognormal_heights_hit_the_closed_form_median() {
    // mu = ln(10) puts the distribution median at exactly 10 m; a 10k-sample
    // Monte-Carlo median must land within +-1 m.
    let style = base_style("mc", 97);
    let (_, stats) = generate_city_with_stats(&style, 3500, 64, 64).unwrap();
    let mut heights: Vec<f64> = stats.into_iter().map(|s| s.height).collect();
    assert!(
        heights.len() >= 10_000,
        "only {} buildings drawn",
        heights.len()
    );
    heights.sort_unstable_by(|a, b| a.total_cmp(b));
    let median = heights[heights.len() / 2];
    assert!(
        (median - 10.0).abs() <= 1.0,
        "sample median {median} strays from 10"
    );
}

#[test]
fn shadow_length_ranks_track_true_heights() {
    // The rendered shadow band must be a faithful monotone cue: Spearman
    // rank correlation between building height and measured band length
    // >= 0.95 across everything the generator draws, clipping included.
    let style = base_style("cue", 31);
    let (_, stats) = generate_city_with_stats(&style, 300, 64, 64).unwrap();
    assert!(
        stats.len() > 500,
        "expected a dense sample, got {}",
        stats.len()
    );
    let hs: Vec<f64> = stats.iter().map(|s| s.height).collect();
    let ls: Vec<f64> = stats.iter().map(|s| s.shadow_len).collect();
    let rho = spearman(&hs, &ls).expect("non-constant samples");
    assert!(rho >= 0.95, "rank correlation {rho} below 0.95");
}

#[test]
fn every_degradation_output_validates_clean() {
    let style = base_style("clean", 7);
    let (patches, _) = generate_city_with_stats(&style, 20, 48, 48).unwrap();
    for p in &patches {
        let mid = degrade_to_mid(p).unwrap();
        assert!(
            validate_patch(&mid).is_empty(),
            "{:?}",
            validate_patch(&mid)
        );
        let low = degrade_to_low(p, style.floor_height, 3.1).unwrap();
        assert!(
            validate_patch(&low).is_empty(),
            "{:?}",
            validate_patch(&low)
        );
    }
}

#[test]
fn synthesized_dataset_survives_a_disk_round_trip() {
    let spec = SynthSpec {
        seed: 404,
        patch_height: 32,
        patch_width: 32,
        cities: vec![
            CityPlan {
                style: base_style("alpha", 1),
                role: CityRole::High,
                train_patches: 2,
                val_patches: 1,
                test_patches: 1,
                assumed_floor_height: None,
            },
            CityPlan {
                style: base_style("charlie", 2),
                role: CityRole::Low,
                train_patches: 2,
                val_patches: 0,
                test_patches: 1,
                assumed_floor_height: Some(3.0),
            },
        ],
    };
    let ds = synthesize(&spec).unwrap();
    let dir = tempdir().unwrap();
    let manifest = save_dataset(&ds, dir.path()).unwrap();
    assert_eq!(manifest.entries.len(), 7);
    validate_dataset(dir.path(), &manifest).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.train.len(), ds.train.len());
    for (a, b) in back.train.iter().zip(&ds.train) {
        assert_eq!(a.height, b.height);
        assert_eq!(a.image, b.image);
        assert_eq!(a.quality, b.quality);
        assert_eq!(a.floors, b.floors);
    }
}
