//! Procedural generator of desk-scale raster "cities" with ground-truth
//! height maps, plus degradation operators that manufacture mid- and
//! low-quality labels from high-quality ones.
//!
//! Rendered images carry two height-predictive cues: a cast-shadow band on
//! the sun-away side whose pixel length is `round(height / shadow_scale)`,
//! and roof brightness drawn from a per-city palette. Styles that differ in
//! shadow scale, palette, and floor height create the domain shift the
//! training pipeline has to survive. Trees add non-building height that only
//! high-quality labels retain, mimicking surface-model clutter.

use std::collections::BTreeSet;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::manifest::Split;
use crate::patch::{Patch, QualityClass};
use crate::seeds;
use crate::stats::instance_medians;

/// Channels in every rendered image.
pub const IMAGE_CHANNELS: usize = 3;
/// Minimum patch side length accepted by the generator.
pub const MIN_PATCH_SIDE: usize = 32;

/// Brightness multiplier inside cast shadows.
const SHADOW_DIM: f32 = 0.35;
/// Base canopy albedo for trees; the green channel is boosted on top.
const TREE_ALBEDO: f32 = 0.22;
/// Sampled building heights are clamped into this range (meters).
const HEIGHT_CLAMP: (f64, f64) = (2.0, 100.0);
/// Attempts to place one building before giving up on the patch. The first
/// half of the budget insists on a clean shadow band; the second half only
/// needs a free footprint.
const PLACEMENT_RETRIES: usize = 300;
/// Attempts to place one tree; exhausting them silently drops the tree.
const TREE_RETRIES: usize = 40;

// Stream tags for seed derivation, so independent draws never alias.
const STREAM_TINT: u64 = 1;
const STREAM_SCENE: u64 = 2;
const STREAM_CITY: u64 = 3;

fn default_shadow_scale() -> f64 {
    2.0
}

fn default_trees() -> (u32, u32) {
    (0, 2)
}

/// Look and label physics of one synthetic city.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CityStyle {
    /// Domain tag stamped on every patch generated from this style.
    pub name: String,
    pub seed: u64,
    /// Inclusive range of buildings per patch.
    pub buildings_per_patch: (u32, u32),
    /// Inclusive range of footprint side lengths in pixels.
    pub footprint_size: (u32, u32),
    /// (mu, sigma) of ln(height in meters) for per-building base heights.
    pub height_lognormal: (f64, f64),
    /// Sun direction in degrees; shadows are cast on the opposite side.
    pub sun_azimuth: f64,
    /// Roof reflectances; each building draws one entry plus a small jitter.
    pub albedo_palette: Vec<f32>,
    /// Standard deviation of per-pixel Gaussian image noise.
    pub noise_std: f32,
    /// True meters per storey, used when deriving floor counts.
    pub floor_height: f64,
    /// Meters of building height per pixel of rendered shadow length.
    #[serde(default = "default_shadow_scale")]
    pub shadow_scale: f64,
    /// Inclusive range of tree blobs per patch. Trees contribute height at
    /// instance id 0, so every degradation erases them.
    #[serde(default = "default_trees")]
    pub trees_per_patch: (u32, u32),
}

impl CityStyle {
    /// Checks field invariants; every generator entry point calls this.
    pub fn validate(&self) -> Result<(), GenerationError> {
        let fail = |reason: String| {
            Err(GenerationError::BadStyle {
                name: self.name.clone(),
                reason,
            })
        };
        if self.name.is_empty() {
            return fail("name must be non-empty (it becomes the domain tag)".into());
        }
        let (mu, sigma) = self.height_lognormal;
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return fail(format!(
                "height_lognormal ({mu}, {sigma}) needs finite mu, sigma > 0"
            ));
        }
        if !(2.4..=4.5).contains(&self.floor_height) {
            return fail(format!(
                "floor_height {} outside [2.4, 4.5] m",
                self.floor_height
            ));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return fail(format!("noise_std {} must be >= 0", self.noise_std));
        }
        if self.albedo_palette.is_empty()
            || self.albedo_palette.iter().any(|a| !(0.0..=1.0).contains(a))
        {
            return fail("albedo_palette must be non-empty with entries in [0, 1]".into());
        }
        if self.buildings_per_patch.0 > self.buildings_per_patch.1 {
            return fail(format!(
                "buildings_per_patch range {:?} is inverted",
                self.buildings_per_patch
            ));
        }
        if self.footprint_size.0 < 2 || self.footprint_size.0 > self.footprint_size.1 {
            return fail(format!(
                "footprint_size range {:?} needs 2 <= lo <= hi",
                self.footprint_size
            ));
        }
        if self.trees_per_patch.0 > self.trees_per_patch.1 {
            return fail(format!(
                "trees_per_patch range {:?} is inverted",
                self.trees_per_patch
            ));
        }
        if !self.shadow_scale.is_finite() || self.shadow_scale <= 0.0 {
            return fail(format!(
                "shadow_scale {} must be positive",
                self.shadow_scale
            ));
        }
        if !self.sun_azimuth.is_finite() {
            return fail("sun_azimuth must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("invalid city style `{name}`: {reason}")]
    BadStyle { name: String, reason: String },
    #[error("requested zero patches")]
    NoPatches,
    #[error("patch size {h}x{w} is below the {MIN_PATCH_SIDE}x{MIN_PATCH_SIDE} minimum")]
    PatchTooSmall { h: usize, w: usize },
    #[error("patch {patch} of `{name}`: building placement retries exhausted")]
    PlacementFailed { name: String, patch: usize },
    #[error("city `{name}` has the low-quality role but no valid assumed_floor_height")]
    MissingAssumedFloorHeight { name: String },
    #[error("duplicate city name `{name}` in synthesis plan")]
    DuplicateCityName { name: String },
}

/// Per-building ground truth recorded while rendering, for cue audits.
#[derive(Clone, Debug, PartialEq)]
pub struct BuildingStat {
    pub patch_index: usize,
    pub instance: u32,
    /// Base height in meters, before roof detailing.
    pub height: f64,
    /// Rendered shadow band length in pixels: painted shadow area divided by
    /// the footprint's extent perpendicular to the shadow direction.
    pub shadow_len: f64,
}

/// Generates `n_patches` high-quality labeled patches of `h` x `w` pixels.
pub fn generate_city(
    style: &CityStyle,
    n_patches: usize,
    h: usize,
    w: usize,
) -> Result<Vec<Patch>, GenerationError> {
    generate_city_with_stats(style, n_patches, h, w).map(|(patches, _)| patches)
}

/// Like [`generate_city`] but also returns per-building render statistics.
pub fn generate_city_with_stats(
    style: &CityStyle,
    n_patches: usize,
    h: usize,
    w: usize,
) -> Result<(Vec<Patch>, Vec<BuildingStat>), GenerationError> {
    style.validate()?;
    if n_patches == 0 {
        return Err(GenerationError::NoPatches);
    }
    if h < MIN_PATCH_SIDE || w < MIN_PATCH_SIDE {
        return Err(GenerationError::PatchTooSmall { h, w });
    }
    if usize::try_from(style.footprint_size.1).unwrap_or(usize::MAX) + 2 > h.min(w) {
        return Err(GenerationError::BadStyle {
            name: style.name.clone(),
            reason: format!(
                "footprint up to {} px cannot fit a {h}x{w} patch with margins",
                style.footprint_size.1
            ),
        });
    }

    // Channel tints are a per-style property, fixed across patches.
    let tint = {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(style.seed, &[STREAM_TINT]));
        let mut t = [0.0f32; IMAGE_CHANNELS];
        for v in &mut t {
            *v = rng.random_range(0.80..1.0);
        }
        t
    };

    let mut patches = Vec::with_capacity(n_patches);
    let mut stats = Vec::new();
    for patch_index in 0..n_patches {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::mix(style.seed, &[STREAM_SCENE, patch_index as u64]));
        let patch = render_patch(style, patch_index, h, w, tint, &mut rng, &mut stats)?;
        patches.push(patch);
    }
    Ok((patches, stats))
}

struct PlacedBuilding {
    id: u32,
    x0: usize,
    y0: usize,
    wb: usize,
    hb: usize,
    base_height: f64,
    albedo: f32,
    roof_pattern: u8,
    roof_amp: f64,
}

/// Renders one scene. All randomness flows through `rng` in a fixed draw
/// order, so output is a pure function of the derived per-patch seed.
fn render_patch(
    style: &CityStyle,
    patch_index: usize,
    h: usize,
    w: usize,
    tint: [f32; IMAGE_CHANNELS],
    rng: &mut ChaCha8Rng,
    stats: &mut Vec<BuildingStat>,
) -> Result<Patch, GenerationError> {
    let ground_albedo: f32 = rng.random_range(0.28..0.42);
    let n_buildings = rng.random_range(style.buildings_per_patch.0..=style.buildings_per_patch.1);

    let mut instances = Array2::<u32>::zeros((h, w));
    let mut buildings = Vec::with_capacity(n_buildings as usize);
    let lognormal = LogNormal::new(style.height_lognormal.0, style.height_lognormal.1)
        .expect("style validated");

    // Shadow walk direction: away from the sun.
    let away = (style.sun_azimuth + 180.0).to_radians();
    let (dx, dy) = (away.cos(), away.sin());

    // Cells some earlier building's shadow band will cover. Later footprints
    // avoid them (while the budget of strict retries lasts) so the band
    // length stays an uncorrupted height cue.
    let mut band_reserved = Array2::<bool>::from_elem((h, w), false);

    for id in 1..=n_buildings {
        let wb = rng.random_range(style.footprint_size.0..=style.footprint_size.1) as usize;
        let hb = rng.random_range(style.footprint_size.0..=style.footprint_size.1) as usize;
        let base_height = lognormal.sample(rng).clamp(HEIGHT_CLAMP.0, HEIGHT_CLAMP.1);
        let palette_idx = rng.random_range(0..style.albedo_palette.len());
        let jitter: f32 = rng.random_range(-0.04..0.04);
        let albedo = (style.albedo_palette[palette_idx] + jitter).clamp(0.02, 0.98);
        let roof_pattern = rng.random_range(0..3u8);
        let roof_amp = rng.random_range(0.04..0.10);
        let steps = (base_height / style.shadow_scale).round() as i64;

        let mut placed = false;
        for attempt in 0..PLACEMENT_RETRIES {
            let x0 = rng.random_range(1..=(w - 1 - wb));
            let y0 = rng.random_range(1..=(h - 1 - hb));
            // The footprint plus a one-pixel dilation must be free of other
            // buildings, so neighbours keep at least a one-pixel gap.
            let free =
                (y0 - 1..=y0 + hb).all(|y| (x0 - 1..=x0 + wb).all(|x| instances[[y, x]] == 0));
            if !free {
                continue;
            }
            // Strict attempts additionally demand an unclipped, unblocked
            // shadow band on unreserved ground; the tail of the retry budget
            // drops that requirement so dense scenes still fill up.
            let strict = attempt < PLACEMENT_RETRIES / 2;
            if strict
                && !band_fits(
                    &instances,
                    &band_reserved,
                    (y0, x0, hb, wb),
                    (dy, dx),
                    steps,
                    h,
                    w,
                )
            {
                continue;
            }
            for y in y0..y0 + hb {
                for x in x0..x0 + wb {
                    instances[[y, x]] = id;
                }
            }
            walk_band((y0, x0, hb, wb), (dy, dx), steps, h, w, |ty, tx| {
                band_reserved[[ty, tx]] = true;
            });
            buildings.push(PlacedBuilding {
                id,
                x0,
                y0,
                wb,
                hb,
                base_height,
                albedo,
                roof_pattern,
                roof_amp,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(GenerationError::PlacementFailed {
                name: style.name.clone(),
                patch: patch_index,
            });
        }
    }

    // Cast shadows: every building pixel walks the shadow direction for
    // round(height / shadow_scale) steps, darkening background cells; the
    // union of walks forms the band. The recorded length is the best single
    // ray — the count of in-bounds background cells the farthest-out source
    // pixel reaches — which equals the commanded step count whenever the
    // band is unclipped and unblocked.
    let mut shadow = Array2::<bool>::from_elem((h, w), false);
    for b in &buildings {
        let steps = (b.base_height / style.shadow_scale).round() as i64;
        let mut best_ray = 0usize;
        for y in b.y0..b.y0 + b.hb {
            for x in b.x0..b.x0 + b.wb {
                let mut ray = 0usize;
                for t in 1..=steps {
                    let ty = y as i64 + (t as f64 * dy).round() as i64;
                    let tx = x as i64 + (t as f64 * dx).round() as i64;
                    if ty < 0 || tx < 0 || ty >= h as i64 || tx >= w as i64 {
                        continue;
                    }
                    let (ty, tx) = (ty as usize, tx as usize);
                    if instances[[ty, tx]] == 0 {
                        shadow[[ty, tx]] = true;
                        ray += 1;
                    }
                }
                best_ray = best_ray.max(ray);
            }
        }
        stats.push(BuildingStat {
            patch_index,
            instance: b.id,
            height: b.base_height,
            shadow_len: best_ray as f64,
        });
    }

    // Trees: round canopies on cells that are neither building, shadow, nor
    // adjacent to a building. Dropped silently when placement keeps failing.
    let mut height = Array2::<f32>::zeros((h, w));
    let mut tree = Array2::<bool>::from_elem((h, w), false);
    let n_trees = rng.random_range(style.trees_per_patch.0..=style.trees_per_patch.1);
    for _ in 0..n_trees {
        for _ in 0..TREE_RETRIES {
            let r = rng.random_range(1..=3i64);
            let cy = rng.random_range(2..(h as i64 - 2));
            let cx = rng.random_range(2..(w as i64 - 2));
            let peak: f64 = rng.random_range(3.0..8.0);
            if !tree_site_free(&instances, &shadow, h, w, cy, cx, r) {
                continue;
            }
            for y in (cy - r).max(0)..=(cy + r).min(h as i64 - 1) {
                for x in (cx - r).max(0)..=(cx + r).min(w as i64 - 1) {
                    let d2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) as f64;
                    let r2 = (r * r) as f64;
                    if d2 <= r2 {
                        let canopy = (peak * (1.0 - 0.5 * d2 / r2)) as f32;
                        let cell = &mut height[[y as usize, x as usize]];
                        *cell = cell.max(canopy);
                        tree[[y as usize, x as usize]] = true;
                    }
                }
            }
            break;
        }
    }

    // Roof heights with per-building detailing so mid-quality degradation
    // actually changes pixels.
    for b in &buildings {
        for y in b.y0..b.y0 + b.hb {
            for x in b.x0..b.x0 + b.wb {
                let detail = roof_detail(b, y, x);
                height[[y, x]] = (b.base_height * (1.0 + detail)).max(0.5) as f32;
            }
        }
    }

    // Image: albedo layer, shadow darkening, per-channel tint, noise.
    let mut albedo = Array2::<f32>::from_elem((h, w), ground_albedo);
    for b in &buildings {
        for y in b.y0..b.y0 + b.hb {
            for x in b.x0..b.x0 + b.wb {
                albedo[[y, x]] = b.albedo;
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            if tree[[y, x]] && instances[[y, x]] == 0 {
                albedo[[y, x]] = TREE_ALBEDO;
            }
            if shadow[[y, x]] {
                albedo[[y, x]] *= SHADOW_DIM;
            }
        }
    }
    let mut image = Array3::<f32>::zeros((IMAGE_CHANNELS, h, w));
    for c in 0..IMAGE_CHANNELS {
        for y in 0..h {
            for x in 0..w {
                let green_boost = if c == 1 && tree[[y, x]] && instances[[y, x]] == 0 {
                    1.3
                } else {
                    1.0
                };
                image[[c, y, x]] = albedo[[y, x]] * tint[c] * green_boost;
            }
        }
    }
    if style.noise_std > 0.0 {
        let normal = Normal::new(0.0f32, style.noise_std).expect("style validated");
        for v in image.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    image.mapv_inplace(|v| v.clamp(0.0, 1.0));

    Ok(Patch {
        image,
        height,
        instances,
        floors: None,
        quality: QualityClass::High,
        domain_tag: style.name.clone(),
        assumed_floor_height: None,
    })
}

/// Visits every in-bounds cell outside `rect` that the rect's shadow walk
/// touches. `rect` is (y0, x0, height, width); `dir` is (dy, dx).
fn walk_band(
    rect: (usize, usize, usize, usize),
    dir: (f64, f64),
    steps: i64,
    h: usize,
    w: usize,
    mut visit: impl FnMut(usize, usize),
) {
    let (y0, x0, hb, wb) = rect;
    let (dy, dx) = dir;
    for y in y0..y0 + hb {
        for x in x0..x0 + wb {
            for t in 1..=steps {
                let ty = y as i64 + (t as f64 * dy).round() as i64;
                let tx = x as i64 + (t as f64 * dx).round() as i64;
                if ty < 0 || tx < 0 || ty >= h as i64 || tx >= w as i64 {
                    continue;
                }
                let (ty, tx) = (ty as usize, tx as usize);
                let inside_rect = ty >= y0 && ty < y0 + hb && tx >= x0 && tx < x0 + wb;
                if !inside_rect {
                    visit(ty, tx);
                }
            }
        }
    }
}

/// True when a prospective building at `rect` keeps every shadow cue clean:
/// its own band stays on-canvas and off other buildings, and its footprint
/// does not sit in a band reserved by an earlier building.
#[allow(clippy::too_many_arguments)]
fn band_fits(
    instances: &Array2<u32>,
    band_reserved: &Array2<bool>,
    rect: (usize, usize, usize, usize),
    dir: (f64, f64),
    steps: i64,
    h: usize,
    w: usize,
) -> bool {
    let (y0, x0, hb, wb) = rect;
    for y in y0..y0 + hb {
        for x in x0..x0 + wb {
            if band_reserved[[y, x]] {
                return false;
            }
        }
    }
    let (dy, dx) = dir;
    for y in y0..y0 + hb {
        for x in x0..x0 + wb {
            for t in 1..=steps {
                let ty = y as i64 + (t as f64 * dy).round() as i64;
                let tx = x as i64 + (t as f64 * dx).round() as i64;
                if ty < 0 || tx < 0 || ty >= h as i64 || tx >= w as i64 {
                    return false;
                }
                let (ty, tx) = (ty as usize, tx as usize);
                let inside_rect = ty >= y0 && ty < y0 + hb && tx >= x0 && tx < x0 + wb;
                if !inside_rect && instances[[ty, tx]] != 0 {
                    return false;
                }
            }
        }
    }
    true
}

fn tree_site_free(
    instances: &Array2<u32>,
    shadow: &Array2<bool>,
    h: usize,
    w: usize,
    cy: i64,
    cx: i64,
    r: i64,
) -> bool {
    for y in (cy - r - 1).max(0)..=(cy + r + 1).min(h as i64 - 1) {
        for x in (cx - r - 1).max(0)..=(cx + r + 1).min(w as i64 - 1) {
            let (yu, xu) = (y as usize, x as usize);
            if instances[[yu, xu]] != 0 || shadow[[yu, xu]] {
                return false;
            }
        }
    }
    true
}

/// Relative roof-height offset in [-amp/2, +amp/2]: flat, row ridge, or
/// column ridge.
fn roof_detail(b: &PlacedBuilding, y: usize, x: usize) -> f64 {
    let tri = |offset: usize, len: usize| -> f64 {
        if len <= 1 {
            return 0.5;
        }
        let u = offset as f64 / (len - 1) as f64;
        1.0 - (2.0 * u - 1.0).abs()
    };
    match b.roof_pattern {
        0 => 0.0,
        1 => b.roof_amp * (tri(y - b.y0, b.hb) - 0.5),
        _ => b.roof_amp * (tri(x - b.x0, b.wb) - 0.5),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DegradeError {
    #[error("cannot degrade a {got}-quality patch to {target}")]
    WrongQuality {
        got: &'static str,
        target: &'static str,
    },
    #[error("floor height {value} must be positive and finite")]
    BadFloorHeight { value: f64 },
}

/// Flattens every building to the median of its pixel heights and zeroes the
/// background (erasing trees). Idempotent: the median of an already-uniform
/// instance is that same value.
pub fn degrade_to_mid(patch: &Patch) -> Result<Patch, DegradeError> {
    if patch.quality == QualityClass::Low {
        return Err(DegradeError::WrongQuality {
            got: patch.quality.label(),
            target: "mid",
        });
    }
    let medians = instance_medians(&patch.height, &patch.instances);
    let mut out = patch.clone();
    out.quality = QualityClass::Mid;
    out.floors = None;
    out.assumed_floor_height = None;
    for (hv, id) in out.height.iter_mut().zip(patch.instances.iter()) {
        *hv = if *id == 0 { 0.0 } else { medians[id] as f32 };
    }
    Ok(out)
}

/// Converts building heights to floor counts with the generator's true floor
/// height, then back to meters with the consumer's assumed one. The mismatch
/// between the two is exactly the label noise low-quality data carries.
pub fn degrade_to_low(
    patch: &Patch,
    true_floor_height: f64,
    assumed_floor_height: f64,
) -> Result<Patch, DegradeError> {
    if patch.quality == QualityClass::Low {
        return Err(DegradeError::WrongQuality {
            got: patch.quality.label(),
            target: "low",
        });
    }
    for value in [true_floor_height, assumed_floor_height] {
        if !value.is_finite() || value <= 0.0 {
            return Err(DegradeError::BadFloorHeight { value });
        }
    }
    let medians = instance_medians(&patch.height, &patch.instances);
    let assumed = assumed_floor_height as f32;
    let mut floors = Array2::<u16>::zeros(patch.height.dim());
    let mut out = patch.clone();
    out.quality = QualityClass::Low;
    out.assumed_floor_height = Some(assumed);
    for ((fl, hv), id) in floors
        .iter_mut()
        .zip(out.height.iter_mut())
        .zip(patch.instances.iter())
    {
        if *id == 0 {
            *hv = 0.0;
            continue;
        }
        let count = (medians[id] / true_floor_height).round().max(1.0);
        *fl = count.min(f64::from(u16::MAX)) as u16;
        *hv = *fl as f32 * assumed;
    }
    out.floors = Some(floors);
    Ok(out)
}

/// Which degradation a city's train patches receive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CityRole {
    High,
    Mid,
    Low,
}

/// One city's contribution to a synthesized dataset. Validation and test
/// patches always keep their true high-quality labels; only train patches
/// are degraded according to the role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CityPlan {
    pub style: CityStyle,
    pub role: CityRole,
    pub train_patches: usize,
    pub val_patches: usize,
    pub test_patches: usize,
    /// Floor height the low-quality labeler believes in; required (and only
    /// meaningful) when `role` is [`CityRole::Low`].
    #[serde(default)]
    pub assumed_floor_height: Option<f64>,
}

/// Full synthesis plan: a shared seed, the patch geometry, and the cities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub patch_height: usize,
    pub patch_width: usize,
    pub cities: Vec<CityPlan>,
}

/// Generates every city in the plan and assembles the splits. Each city's
/// style seed is remixed with the plan seed and city index, so plans with
/// different seeds produce entirely different data.
pub fn synthesize(spec: &SynthSpec) -> Result<Dataset, GenerationError> {
    let mut seen = BTreeSet::new();
    for plan in &spec.cities {
        if !seen.insert(plan.style.name.as_str()) {
            return Err(GenerationError::DuplicateCityName {
                name: plan.style.name.clone(),
            });
        }
        if plan.role == CityRole::Low
            && !plan
                .assumed_floor_height
                .is_some_and(|v| v.is_finite() && v > 0.0)
        {
            return Err(GenerationError::MissingAssumedFloorHeight {
                name: plan.style.name.clone(),
            });
        }
    }

    let mut dataset = Dataset::default();
    for (city_index, plan) in spec.cities.iter().enumerate() {
        let total = plan.train_patches + plan.val_patches + plan.test_patches;
        if total == 0 {
            continue;
        }
        let mut style = plan.style.clone();
        style.seed = seeds::mix(
            spec.seed,
            &[STREAM_CITY, city_index as u64, plan.style.seed],
        );
        let patches = generate_city(&style, total, spec.patch_height, spec.patch_width)?;
        for (i, patch) in patches.into_iter().enumerate() {
            if i < plan.train_patches {
                let labeled = match plan.role {
                    CityRole::High => patch,
                    CityRole::Mid => degrade_to_mid(&patch).expect("fresh high-quality patch"),
                    CityRole::Low => degrade_to_low(
                        &patch,
                        plan.style.floor_height,
                        plan.assumed_floor_height.expect("validated above"),
                    )
                    .expect("fresh high-quality patch"),
                };
                dataset.push(Split::Train, labeled);
            } else if i < plan.train_patches + plan.val_patches {
                dataset.push(Split::Val, patch);
            } else {
                dataset.push(Split::Test, patch);
            }
        }
    }
    Ok(dataset)
}
