//! Building-wise evaluation: per-instance median heights, RMSE over
//! buildings, domain-grouped reporting, and rendered map artifacts.
//!
//! A prediction is judged per building, not per pixel: within each instance
//! footprint only the median height matters, as if every building were a
//! flat-roofed block. Sets of patches (one per city/domain tag) each get an
//! RMSE over their pooled buildings; group and combined averages are plain
//! unweighted means of member-set RMSEs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::stats;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot compute an RMSE over zero buildings")]
    NoBuildings,
    #[error("set {name:?} produced no building records")]
    EmptySet { name: String },
    #[error("no sets to report on")]
    NoSets,
    #[error("map shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("encoding {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// One building's ground-truth and predicted median heights, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    /// Identifier of the patch the instance lives in.
    pub patch: String,
    /// Instance id within the patch (always > 0).
    pub instance: u32,
    pub gt_median: f64,
    pub pred_median: f64,
    pub n_pixels: usize,
}

/// Median height per building instance (ids > 0); background is excluded.
/// Even pixel counts take the mean of the two middle values.
pub fn building_medians(height: &Array2<f32>, instances: &Array2<u32>) -> BTreeMap<u32, f64> {
    stats::instance_medians(height, instances)
}

/// Pairs ground-truth and predicted medians per instance for one patch.
/// Buildings truncated by the patch border are evaluated as-is from the
/// pixels that made it into the patch.
pub fn building_records(
    patch_id: &str,
    pred: &Array2<f32>,
    gt: &Array2<f32>,
    instances: &Array2<u32>,
) -> Result<Vec<BuildingRecord>, EvalError> {
    check_shapes(pred.dim(), gt.dim())?;
    check_shapes(pred.dim(), instances.dim())?;
    let mut per_instance: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((g, p), id) in gt.iter().zip(pred.iter()).zip(instances.iter()) {
        if *id == 0 {
            continue;
        }
        let slot = per_instance.entry(*id).or_default();
        slot.0.push(f64::from(*g));
        slot.1.push(f64::from(*p));
    }
    Ok(per_instance
        .into_iter()
        .map(|(instance, (mut gt_vals, mut pred_vals))| BuildingRecord {
            patch: patch_id.to_string(),
            instance,
            n_pixels: gt_vals.len(),
            gt_median: stats::median_inplace(&mut gt_vals).expect("non-empty by construction"),
            pred_median: stats::median_inplace(&mut pred_vals).expect("non-empty by construction"),
        })
        .collect())
}

/// Root mean square error over building median heights.
pub fn building_rmse(records: &[BuildingRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoBuildings);
    }
    let mse = records
        .iter()
        .map(|r| (r.pred_median - r.gt_median).powi(2))
        .sum::<f64>()
        / records.len() as f64;
    Ok(mse.sqrt())
}

/// Whether a test set's domain also appears among the high-quality training
/// cities (`in`) or not (`out`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainGroup {
    In,
    Out,
}

impl DomainGroup {
    pub fn label(self) -> &'static str {
        match self {
            DomainGroup::In => "in",
            DomainGroup::Out => "out",
        }
    }
}

/// All building records of one evaluation set plus its domain group.
#[derive(Debug, Clone, PartialEq)]
pub struct SetResult {
    pub group: DomainGroup,
    pub records: Vec<BuildingRecord>,
}

/// Aggregated metrics across evaluation sets. Group averages are unweighted
/// means over their member sets' RMSEs; `combined_avg` is the unweighted
/// mean over all sets. A group with no member sets reports `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_set_rmse: BTreeMap<String, f64>,
    pub per_set_group: BTreeMap<String, DomainGroup>,
    pub n_buildings: BTreeMap<String, usize>,
    pub in_domain_avg: Option<f64>,
    pub out_domain_avg: Option<f64>,
    pub combined_avg: f64,
}

/// Pools each set's buildings into one RMSE, then averages RMSEs per group
/// and overall. Every set must contribute at least one building.
pub fn grouped_report(sets: &BTreeMap<String, SetResult>) -> Result<MetricsReport, EvalError> {
    if sets.is_empty() {
        return Err(EvalError::NoSets);
    }
    let mut per_set_rmse = BTreeMap::new();
    let mut per_set_group = BTreeMap::new();
    let mut n_buildings = BTreeMap::new();
    let mut in_rmses = Vec::new();
    let mut out_rmses = Vec::new();
    for (name, set) in sets {
        if set.records.is_empty() {
            return Err(EvalError::EmptySet { name: name.clone() });
        }
        let rmse = building_rmse(&set.records)?;
        per_set_rmse.insert(name.clone(), rmse);
        per_set_group.insert(name.clone(), set.group);
        n_buildings.insert(name.clone(), set.records.len());
        match set.group {
            DomainGroup::In => in_rmses.push(rmse),
            DomainGroup::Out => out_rmses.push(rmse),
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let combined: Vec<f64> = per_set_rmse.values().copied().collect();
    Ok(MetricsReport {
        per_set_rmse,
        per_set_group,
        n_buildings,
        in_domain_avg: (!in_rmses.is_empty()).then(|| mean(&in_rmses)),
        out_domain_avg: (!out_rmses.is_empty()).then(|| mean(&out_rmses)),
        combined_avg: mean(&combined),
    })
}

/// Writes the per-set table as CSV with columns `set,group,n_buildings,rmse_m`.
pub fn write_metrics_csv(report: &MetricsReport, path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("set,group,n_buildings,rmse_m\n");
    for (name, rmse) in &report.per_set_rmse {
        let group = report.per_set_group[name].label();
        let n = report.n_buildings[name];
        out.push_str(&format!("{name},{group},{n},{rmse}\n"));
    }
    write_text(path, &out)
}

/// Writes the full report as pretty JSON.
pub fn write_report_json(report: &MetricsReport, path: &Path) -> Result<(), EvalError> {
    let json = serde_json::to_string_pretty(report).expect("report serialization is infallible");
    write_text(path, &json)
}

/// Reads a report back from JSON.
pub fn load_report_json(path: &Path) -> Result<MetricsReport, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, source),
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    let io_err = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(text.as_bytes()).map_err(io_err)
}

/// Paths produced by [`render_maps`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMaps {
    pub pred_png: PathBuf,
    pub gt_png: PathBuf,
    pub error_png: PathBuf,
    pub buildings_csv: PathBuf,
}

/// Renders a prediction/ground-truth pair for visual inspection: both height
/// maps colorized over one shared value range, a signed error map on a
/// diverging scale centered at zero, and a CSV of the per-building medians.
/// Files land next to `path_prefix` with suffixes `-pred.png`, `-gt.png`,
/// `-error.png`, and `-buildings.csv`.
pub fn render_maps(
    pred: &Array2<f32>,
    gt: &Array2<f32>,
    instances: &Array2<u32>,
    path_prefix: &Path,
) -> Result<RenderedMaps, EvalError> {
    check_shapes(pred.dim(), gt.dim())?;
    check_shapes(pred.dim(), instances.dim())?;
    let prefix = path_prefix.display();
    let paths = RenderedMaps {
        pred_png: PathBuf::from(format!("{prefix}-pred.png")),
        gt_png: PathBuf::from(format!("{prefix}-gt.png")),
        error_png: PathBuf::from(format!("{prefix}-error.png")),
        buildings_csv: PathBuf::from(format!("{prefix}-buildings.csv")),
    };
    if let Some(parent) = path_prefix.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| EvalError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }

    let lo = min_of(pred).min(min_of(gt));
    let hi = max_of(pred).max(max_of(gt));
    save_png(&colorize(pred, lo, hi, height_color), &paths.pred_png)?;
    save_png(&colorize(gt, lo, hi, height_color), &paths.gt_png)?;

    let error = pred - gt;
    let spread = error.iter().fold(0.0f32, |m, e| m.max(e.abs()));
    let error_img = if spread == 0.0 {
        uniform_image(error.dim(), signed_color(0.5))
    } else {
        colorize(&error, -spread, spread, signed_color)
    };
    save_png(&error_img, &paths.error_png)?;

    let records = building_records(stem_of(path_prefix), pred, gt, instances)?;
    let mut csv = String::from("instance,gt_median_m,pred_median_m,n_pixels\n");
    for r in &records {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.instance, r.gt_median, r.pred_median, r.n_pixels
        ));
    }
    write_text(&paths.buildings_csv, &csv)?;
    Ok(paths)
}

/// Colorizes one height map over its own value range and writes a PNG.
/// Constant maps render at the palette midpoint.
pub fn render_height_png(map: &Array2<f32>, path: &Path) -> Result<(), EvalError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| EvalError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    save_png(&colorize(map, min_of(map), max_of(map), height_color), path)
}

fn stem_of(path: &Path) -> &str {
    path.file_name().and_then(|n| n.to_str()).unwrap_or("patch")
}

fn check_shapes(a: (usize, usize), b: (usize, usize)) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::ShapeMismatch { a, b });
    }
    Ok(())
}

fn min_of(m: &Array2<f32>) -> f32 {
    m.iter().copied().fold(f32::INFINITY, f32::min)
}

fn max_of(m: &Array2<f32>) -> f32 {
    m.iter().copied().fold(f32::NEG_INFINITY, f32::max)
}

fn colorize(map: &Array2<f32>, lo: f32, hi: f32, palette: fn(f32) -> [u8; 3]) -> image::RgbImage {
    let (h, w) = map.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = map[[y as usize, x as usize]];
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        image::Rgb(palette(t.clamp(0.0, 1.0)))
    })
}

fn uniform_image((h, w): (usize, usize), color: [u8; 3]) -> image::RgbImage {
    image::RgbImage::from_pixel(w as u32, h as u32, image::Rgb(color))
}

fn save_png(img: &image::RgbImage, path: &Path) -> Result<(), EvalError> {
    img.save(path).map_err(|source| EvalError::Image {
        path: path.display().to_string(),
        source,
    })
}

/// Dark-blue-to-yellow sequential palette (viridis control points).
fn height_color(t: f32) -> [u8; 3] {
    const STOPS: [[f32; 3]; 9] = [
        [68.0, 1.0, 84.0],
        [71.0, 44.0, 122.0],
        [59.0, 81.0, 139.0],
        [44.0, 113.0, 142.0],
        [33.0, 144.0, 141.0],
        [39.0, 173.0, 129.0],
        [92.0, 200.0, 99.0],
        [170.0, 220.0, 50.0],
        [253.0, 231.0, 37.0],
    ];
    interpolate(&STOPS, t)
}

/// Blue-white-red diverging palette; 0.5 is the zero-error midpoint.
fn signed_color(t: f32) -> [u8; 3] {
    const STOPS: [[f32; 3]; 3] = [
        [59.0, 76.0, 192.0],
        [255.0, 255.0, 255.0],
        [180.0, 4.0, 38.0],
    ];
    interpolate(&STOPS, t)
}

fn interpolate(stops: &[[f32; 3]], t: f32) -> [u8; 3] {
    let scaled = t.clamp(0.0, 1.0) * (stops.len() - 1) as f32;
    let i = (scaled.floor() as usize).min(stops.len() - 2);
    let frac = scaled - i as f32;
    let mut out = [0u8; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = (stops[i][k] + frac * (stops[i + 1][k] - stops[i][k])).round() as u8;
    }
    out
}
