//! Shared fixture for the criterion benchmarks: one deterministic city
//! patch at the benchmark geometry (64x64, a handful of mid-rise blocks).

use weakheight_core::patch::Patch;
use weakheight_core::synthcity::{generate_city, CityStyle};

pub fn fixture_patch() -> Patch {
    let style = CityStyle {
        name: "benchville".to_string(),
        seed: 7,
        buildings_per_patch: (3, 6),
        footprint_size: (6, 14),
        height_lognormal: (13.0f64.ln(), 0.5),
        sun_azimuth: 135.0,
        albedo_palette: vec![0.35, 0.5, 0.65, 0.8],
        noise_std: 0.02,
        floor_height: 3.0,
        shadow_scale: 2.0,
        trees_per_patch: (0, 2),
    };
    generate_city(&style, 1, 64, 64)
        .expect("fixture generation is infallible")
        .into_iter()
        .next()
        .expect("one patch requested")
}
