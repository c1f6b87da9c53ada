//! Label refinement for noisy ground truth: pixels where the trusted-branch
//! prediction closely agrees with the label are blended toward that
//! prediction, with the label's weight annealed over epochs down to an even
//! split. A per-patch dropout keeps a share of patches on raw labels so the
//! model never trains purely against itself.

use ndarray::Array2;
use rand::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AugError {
    #[error("{name} must be within {range}, got {value}")]
    OutOfRange {
        name: &'static str,
        range: &'static str,
        value: f64,
    },
    #[error("label map is {gt_h}x{gt_w} but reference is {ref_h}x{ref_w}")]
    ShapeMismatch {
        gt_h: usize,
        gt_w: usize,
        ref_h: usize,
        ref_w: usize,
    },
}

/// Annealing state and knobs of the augmentation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentationState {
    /// Current label weight in the blend; decays toward the 0.5 floor.
    pub eta: f64,
    /// Per-epoch decay factor for `eta`.
    pub alpha: f64,
    /// Agreement window as a fraction of the label height.
    pub omega_rel: f64,
    /// Probability of skipping augmentation for a whole patch.
    pub dropout_p: f64,
}

impl AugmentationState {
    pub fn new(eta: f64, alpha: f64, omega_rel: f64, dropout_p: f64) -> Result<Self, AugError> {
        let check = |name, range: &'static str, value: f64, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(AugError::OutOfRange { name, range, value })
            }
        };
        check("eta", "[0.5, 1]", eta, (0.5..=1.0).contains(&eta))?;
        check("alpha", "(0, 1]", alpha, alpha > 0.0 && alpha <= 1.0)?;
        check(
            "omega_rel",
            "(0, 1)",
            omega_rel,
            omega_rel > 0.0 && omega_rel < 1.0,
        )?;
        check(
            "dropout_p",
            "[0, 1]",
            dropout_p,
            (0.0..=1.0).contains(&dropout_p),
        )?;
        Ok(AugmentationState {
            eta,
            alpha,
            omega_rel,
            dropout_p,
        })
    }

    /// Epoch-end annealing step: `eta <- max(eta * alpha, 0.5)`.
    pub fn decay_eta(&mut self) {
        self.eta = (self.eta * self.alpha).max(0.5);
    }
}

/// Produces the supervising height map for one patch. With probability
/// `dropout_p` the raw labels pass through unchanged. Otherwise each pixel
/// whose label and reference prediction agree within `omega_rel * label`
/// (strictly) is replaced by `eta * label + (1 - eta) * reference`; all
/// other pixels keep their label. Background pixels (label 0) have a zero
/// agreement window and therefore always pass through. The reference is
/// treated as a constant: callers must not backpropagate through it.
pub fn augment_ground_truth<R: Rng + ?Sized>(
    gt: &Array2<f32>,
    reference: &Array2<f32>,
    state: &AugmentationState,
    rng: &mut R,
) -> Result<Array2<f32>, AugError> {
    if gt.dim() != reference.dim() {
        let (gt_h, gt_w) = gt.dim();
        let (ref_h, ref_w) = reference.dim();
        return Err(AugError::ShapeMismatch {
            gt_h,
            gt_w,
            ref_h,
            ref_w,
        });
    }
    if rng.random_bool(state.dropout_p) {
        return Ok(gt.clone());
    }
    let eta = state.eta;
    let mut out = gt.clone();
    for (dst, (g, r)) in out.iter_mut().zip(gt.iter().zip(reference.iter())) {
        let (g64, r64) = (*g as f64, *r as f64);
        if (g64 - r64).abs() < state.omega_rel * g64 {
            *dst = (eta * g64 + (1.0 - eta) * r64) as f32;
        }
    }
    Ok(out)
}
