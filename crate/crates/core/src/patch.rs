//! Core data model: image/label patches tagged with a label-quality class.
//!
//! A `Patch` couples a multi-channel image with a per-pixel height map, a
//! building-instance map, and (for floor-count labels) a floors map. The
//! quality class records how trustworthy the height labels are and drives
//! loss routing during training.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// Label-quality tier of a patch. Doubles as the branch/domain index:
/// branch 0 serves high-quality labels, branch 2 floor-count labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityClass {
    /// Detailed per-pixel height labels (trusted).
    High,
    /// Building-instance-uniform heights, background zeroed.
    Mid,
    /// Heights derived from per-building floor counts.
    Low,
}

impl QualityClass {
    pub const ALL: [QualityClass; 3] = [QualityClass::High, QualityClass::Mid, QualityClass::Low];

    /// Stable on-disk byte tag.
    pub fn as_byte(self) -> u8 {
        match self {
            QualityClass::High => 0,
            QualityClass::Mid => 1,
            QualityClass::Low => 2,
        }
    }

    /// Inverse of [`as_byte`](Self::as_byte); `None` for unknown tags.
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(QualityClass::High),
            1 => Some(QualityClass::Mid),
            2 => Some(QualityClass::Low),
            _ => None,
        }
    }

    /// Branch / class index used by the model and the domain classifier.
    pub fn index(self) -> usize {
        self.as_byte() as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            QualityClass::High => "high",
            QualityClass::Mid => "mid",
            QualityClass::Low => "low",
        }
    }
}

impl std::fmt::Display for QualityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One training/evaluation sample: image plus aligned label rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Reflectance image, `(channels, h, w)`, values in `[0, 1]`.
    pub image: Array3<f32>,
    /// Height labels in meters, `(h, w)`, non-negative.
    pub height: Array2<f32>,
    /// Building-instance ids, `(h, w)`; 0 = background.
    pub instances: Array2<u32>,
    /// Per-pixel floor counts; present exactly for `Low` quality.
    pub floors: Option<Array2<u16>>,
    pub quality: QualityClass,
    /// Which source region/city the patch came from.
    pub domain_tag: String,
    /// Meters per floor used to convert floor counts into `height`;
    /// present exactly for `Low` quality.
    pub assumed_floor_height: Option<f32>,
}

impl Patch {
    pub fn dims(&self) -> (usize, usize) {
        self.height.dim()
    }

    pub fn channels(&self) -> usize {
        self.image.dim().0
    }
}

/// A named invariant violation found by [`validate_patch`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub name: &'static str,
    pub detail: String,
}

impl Violation {
    fn new(name: &'static str, detail: impl Into<String>) -> Self {
        Violation {
            name,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.name, self.detail)
    }
}

/// Checks every structural invariant of a patch and returns the violations
/// found (empty means valid). Diagnoses all problems instead of stopping at
/// the first so callers can report a complete picture.
pub fn validate_patch(patch: &Patch) -> Vec<Violation> {
    let mut out = Vec::new();
    let (h, w) = patch.height.dim();
    let (ic, ih, iw) = patch.image.dim();

    if ic == 0 {
        out.push(Violation::new("image-shape", "image has zero channels"));
    }
    if (ih, iw) != (h, w) {
        out.push(Violation::new(
            "image-shape",
            format!("image is {ih}x{iw} but height map is {h}x{w}"),
        ));
    }
    if patch.instances.dim() != (h, w) {
        let (bh, bw) = patch.instances.dim();
        out.push(Violation::new(
            "instances-shape",
            format!("instance map is {bh}x{bw} but height map is {h}x{w}"),
        ));
    }
    if patch.domain_tag.is_empty() {
        out.push(Violation::new(
            "empty-domain-tag",
            "domain tag must be non-empty",
        ));
    }

    if let Some(bad) = patch
        .image
        .iter()
        .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
    {
        out.push(Violation::new(
            "image-range",
            format!("image value {bad} outside [0, 1]"),
        ));
    }
    if patch.height.iter().any(|v| !v.is_finite()) {
        out.push(Violation::new(
            "height-nonfinite",
            "height map contains NaN or infinity",
        ));
    } else if let Some(bad) = patch.height.iter().find(|v| **v < 0.0) {
        out.push(Violation::new(
            "height-negative",
            format!("height value {bad} < 0"),
        ));
    }

    match patch.quality {
        QualityClass::High => {
            if patch.floors.is_some() {
                out.push(Violation::new(
                    "floors-on-non-low",
                    "high-quality patch carries floors",
                ));
            }
            if patch.assumed_floor_height.is_some() {
                out.push(Violation::new(
                    "floor-height-on-non-low",
                    "high-quality patch carries an assumed floor height",
                ));
            }
        }
        QualityClass::Mid => {
            if patch.floors.is_some() {
                out.push(Violation::new(
                    "floors-on-non-low",
                    "mid-quality patch carries floors",
                ));
            }
            if patch.assumed_floor_height.is_some() {
                out.push(Violation::new(
                    "floor-height-on-non-low",
                    "mid-quality patch carries an assumed floor height",
                ));
            }
            check_mid_structure(patch, &mut out);
        }
        QualityClass::Low => check_low_structure(patch, &mut out),
    }

    out
}

/// Mid-quality labels must be uniform per building instance and zero on
/// background pixels.
fn check_mid_structure(patch: &Patch, out: &mut Vec<Violation>) {
    if patch.instances.dim() != patch.height.dim() {
        return; // shape violation already recorded
    }
    let mut per_instance: std::collections::BTreeMap<u32, f32> = std::collections::BTreeMap::new();
    for (inst, height) in patch.instances.iter().zip(patch.height.iter()) {
        if *inst == 0 {
            if *height != 0.0 {
                out.push(Violation::new(
                    "mid-background-nonzero",
                    format!("background pixel has height {height}"),
                ));
                return;
            }
        } else {
            match per_instance.get(inst) {
                None => {
                    per_instance.insert(*inst, *height);
                }
                Some(first) if first.to_bits() != height.to_bits() => {
                    out.push(Violation::new(
                        "mid-not-instance-uniform",
                        format!("instance {inst} has heights {first} and {height}"),
                    ));
                    return;
                }
                Some(_) => {}
            }
        }
    }
}

/// Low-quality labels must carry floors and an assumed floor height, with
/// `height == floors * assumed_floor_height` pixel-wise.
fn check_low_structure(patch: &Patch, out: &mut Vec<Violation>) {
    let afh = match patch.assumed_floor_height {
        Some(v) if v.is_finite() && v > 0.0 => v,
        Some(v) => {
            out.push(Violation::new(
                "low-floor-height-invalid",
                format!("assumed floor height {v} must be positive and finite"),
            ));
            return;
        }
        None => {
            out.push(Violation::new(
                "low-floor-height-missing",
                "low-quality patch lacks an assumed floor height",
            ));
            return;
        }
    };
    let floors = match &patch.floors {
        Some(f) => f,
        None => {
            out.push(Violation::new(
                "low-missing-floors",
                "low-quality patch lacks a floors map",
            ));
            return;
        }
    };
    if floors.dim() != patch.height.dim() {
        let (fh, fw) = floors.dim();
        let (h, w) = patch.height.dim();
        out.push(Violation::new(
            "floors-shape",
            format!("floors map is {fh}x{fw} but height map is {h}x{w}"),
        ));
        return;
    }
    for (fl, height) in floors.iter().zip(patch.height.iter()) {
        let expect = *fl as f32 * afh;
        if height.to_bits() != expect.to_bits() {
            out.push(Violation::new(
                "low-height-floor-mismatch",
                format!("height {height} != {fl} floors x {afh} m"),
            ));
            return;
        }
    }
}
