//! Loss kernels for mixed-quality height supervision.
//!
//! Four ingredients: a cross-entropy over label-quality classes, a plain L1
//! height loss for trusted labels, a buffer-softened L1 over a balanced
//! pixel sample for noisy labels, and a pairwise ordinal penalty over
//! class-ordered pixel pairs. All kernels run in `f64`; gradient helpers
//! accumulate `scale * dL/dpred` so callers can weight and combine terms.

use rand::Rng;

use crate::heightbins::{balanced_pixel_sample, PixelPairSet, SampleError};

/// Probability floor inside the classification log to keep losses finite.
const PROB_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("{component} is not finite")]
    NonFinite { component: &'static str },
    #[error("prediction and target lengths differ: {pred} vs {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("class index {class} out of range for {classes} classes")]
    BadClass { class: usize, classes: usize },
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Negative log-likelihood of the true quality class, probabilities clamped
/// at 1e-12. `probs` must be one simplex row.
pub fn domain_classification_loss(probs: &[f64], true_class: usize) -> Result<f64, LossError> {
    if true_class >= probs.len() {
        return Err(LossError::BadClass {
            class: true_class,
            classes: probs.len(),
        });
    }
    Ok(-(probs[true_class].max(PROB_EPS)).ln())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Cross-entropy straight from logits, with its gradient `p - onehot`.
pub fn softmax_cross_entropy(
    logits: &[f64],
    true_class: usize,
) -> Result<(f64, Vec<f64>), LossError> {
    let probs = softmax(logits);
    let loss = domain_classification_loss(&probs, true_class)?;
    let mut grad = probs;
    grad[true_class] -= 1.0;
    Ok((loss, grad))
}

/// Mean absolute error over all pixels.
pub fn hard_height_loss(pred: &[f64], gt: &[f64]) -> Result<f64, LossError> {
    check_lengths(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Accumulates `scale * d(hard_height_loss)/dpred` into `grad`.
pub fn accumulate_hard_height_grad(pred: &[f64], gt: &[f64], scale: f64, grad: &mut [f64]) {
    let w = scale / pred.len() as f64;
    for ((p, g), dst) in pred.iter().zip(gt).zip(grad.iter_mut()) {
        *dst += w * sign(p - g);
    }
}

/// Buffer-softened absolute error for one pixel: errors at or below
/// `lambda * gt` (a height-proportional trust buffer) cost nothing, larger
/// errors cost their full magnitude. Positively homogeneous: scaling both
/// arguments scales the residual.
pub fn soft_height_residual(pred: f64, gt: f64, lambda: f64) -> f64 {
    let err = (gt - pred).abs();
    if err <= lambda * gt {
        0.0
    } else {
        err
    }
}

fn soft_height_residual_dpred(pred: f64, gt: f64, lambda: f64) -> f64 {
    let err = (gt - pred).abs();
    if err <= lambda * gt {
        0.0
    } else {
        sign(pred - gt)
    }
}

/// Mean soft residual over an explicit pixel subset. Pixels are visited in
/// ascending index order so the reduction is independent of how the subset
/// was produced.
pub fn soft_height_loss_at(
    pred: &[f64],
    gt: &[f64],
    lambda: f64,
    indices: &[usize],
) -> Result<f64, LossError> {
    check_lengths(pred, gt)?;
    let mut sorted: Vec<usize> = indices.to_vec();
    sorted.sort_unstable();
    let sum: f64 = sorted
        .iter()
        .map(|i| soft_height_residual(pred[*i], gt[*i], lambda))
        .sum();
    Ok(sum / indices.len().max(1) as f64)
}

/// Accumulates `scale * d(soft_height_loss_at)/dpred` into `grad`.
pub fn accumulate_soft_height_grad_at(
    pred: &[f64],
    gt: &[f64],
    lambda: f64,
    indices: &[usize],
    scale: f64,
    grad: &mut [f64],
) {
    let w = scale / indices.len().max(1) as f64;
    for i in indices {
        grad[*i] += w * soft_height_residual_dpred(pred[*i], gt[*i], lambda);
    }
}

/// Balanced soft height loss: draws a rank-stratified pixel sample from the
/// target map and averages the soft residual over it.
pub fn balanced_soft_height_loss<R: Rng + ?Sized>(
    pred: &[f64],
    gt: &[f64],
    lambda: f64,
    fraction: f64,
    rng: &mut R,
) -> Result<f64, LossError> {
    check_lengths(pred, gt)?;
    let indices = balanced_pixel_sample(gt, fraction, rng)?;
    soft_height_loss_at(pred, gt, lambda, &indices)
}

/// Numerically stable `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pairwise ordinal penalty, averaged over the pair set: a pair whose
/// higher-class endpoint already predicts higher costs little, an inverted
/// pair costs roughly its inversion margin. Empty sets cost zero.
pub fn ordinal_constraint_loss(pred: &[f64], pairs: &PixelPairSet) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sum: f64 = pairs
        .pairs
        .iter()
        .map(|p| {
            let (ha, hb) = (pred[p.a as usize], pred[p.b as usize]);
            match p.class_a.cmp(&p.class_b) {
                std::cmp::Ordering::Greater => softplus(hb - ha),
                std::cmp::Ordering::Less => softplus(ha - hb),
                std::cmp::Ordering::Equal => 0.0,
            }
        })
        .sum();
    sum / pairs.len() as f64
}

/// Accumulates `scale * d(ordinal_constraint_loss)/dpred` into `grad`.
pub fn accumulate_ordinal_grad(pred: &[f64], pairs: &PixelPairSet, scale: f64, grad: &mut [f64]) {
    if pairs.is_empty() {
        return;
    }
    let w = scale / pairs.len() as f64;
    for p in &pairs.pairs {
        let (ia, ib) = (p.a as usize, p.b as usize);
        match p.class_a.cmp(&p.class_b) {
            std::cmp::Ordering::Greater => {
                let s = sigmoid(pred[ib] - pred[ia]);
                grad[ib] += w * s;
                grad[ia] -= w * s;
            }
            std::cmp::Ordering::Less => {
                let s = sigmoid(pred[ia] - pred[ib]);
                grad[ia] += w * s;
                grad[ib] -= w * s;
            }
            std::cmp::Ordering::Equal => {}
        }
    }
}

/// Per-step loss summary. The total is always the plain (unweighted) sum of
/// the four terms; terms without applicable samples contribute zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub l_dc: f64,
    pub l_hh: f64,
    pub l_bsh: f64,
    pub l_oc: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Builds a breakdown, rejecting non-finite components by name.
    pub fn new(l_dc: f64, l_hh: f64, l_bsh: f64, l_oc: f64) -> Result<Self, LossError> {
        for (value, component) in [
            (l_dc, "l_dc"),
            (l_hh, "l_hh"),
            (l_bsh, "l_bsh"),
            (l_oc, "l_oc"),
        ] {
            if !value.is_finite() {
                return Err(LossError::NonFinite { component });
            }
        }
        Ok(LossBreakdown {
            l_dc,
            l_hh,
            l_bsh,
            l_oc,
            total: l_dc + l_hh + l_bsh + l_oc,
        })
    }
}

fn check_lengths(pred: &[f64], gt: &[f64]) -> Result<(), LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::LengthMismatch {
            pred: pred.len(),
            target: gt.len(),
        });
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heightbins::PixelPair;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn classification_loss_on_uniform_probs_is_ln_of_class_count() {
        let probs = vec![1.0 / 3.0; 3];
        let loss = domain_classification_loss(&probs, 1).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn classification_loss_clamps_zero_probability() {
        let loss = domain_classification_loss(&[0.0, 1.0], 0).unwrap();
        assert!((loss - (-(1e-12f64).ln())).abs() < 1e-9);
        assert!(loss.is_finite());
    }

    #[test]
    fn classification_loss_rejects_bad_class() {
        assert!(matches!(
            domain_classification_loss(&[0.5, 0.5], 2),
            Err(LossError::BadClass { .. })
        ));
    }

    #[test]
    fn softmax_cross_entropy_matches_prob_form() {
        let logits = vec![0.3, -1.2, 2.0];
        let (loss, grad) = softmax_cross_entropy(&logits, 2).unwrap();
        let probs = softmax(&logits);
        assert!((loss + probs[2].ln()).abs() < 1e-12);
        // Gradient rows sum to zero and equal p - onehot.
        assert!((grad.iter().sum::<f64>()).abs() < 1e-12);
        assert!((grad[0] - probs[0]).abs() < 1e-12);
        assert!((grad[2] - (probs[2] - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn hard_height_loss_is_mean_absolute_error() {
        let loss = hard_height_loss(&[2.0, 4.0], &[3.0, 3.0]).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(hard_height_loss(&[5.0], &[5.0]).unwrap(), 0.0);
    }

    #[test]
    fn soft_residual_is_zero_inside_buffer_and_full_outside() {
        // gt 10, lambda 0.3: buffer is 3 m.
        assert_eq!(soft_height_residual(8.0, 10.0, 0.3), 0.0);
        assert_eq!(soft_height_residual(7.0, 10.0, 0.3), 0.0); // boundary counts as inside
        assert_eq!(soft_height_residual(6.0, 10.0, 0.3), 4.0);
        assert_eq!(soft_height_residual(13.5, 10.0, 0.3), 3.5);
        // Zero ground truth leaves no buffer at all.
        assert_eq!(soft_height_residual(0.5, 0.0, 0.3), 0.5);
    }

    #[test]
    fn soft_residual_is_positively_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let pred = rng.random_range(0.0..40.0);
            let gt = rng.random_range(0.0..40.0);
            let lambda = rng.random_range(0.05..0.8);
            let s = rng.random_range(0.1..5.0);
            let lhs = soft_height_residual(s * pred, s * gt, lambda);
            let rhs = s * soft_height_residual(pred, gt, lambda);
            assert!(
                (lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn balanced_loss_with_full_fraction_and_no_buffer_equals_hard_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..30.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g + rng.random_range(-3.0..3.0)).collect();
        let soft = balanced_soft_height_loss(&pred, &gt, 0.0, 1.0, &mut rng).unwrap();
        let hard = hard_height_loss(&pred, &gt).unwrap();
        assert_eq!(soft, hard); // identical pixel set, identical order
    }

    #[test]
    fn ordinal_loss_penalizes_inverted_pairs() {
        let pred = vec![5.0, 3.0];
        let correct = PixelPairSet {
            pairs: vec![PixelPair {
                a: 0,
                b: 1,
                class_a: 4,
                class_b: 1,
            }],
        };
        let inverted = PixelPairSet {
            pairs: vec![PixelPair {
                a: 0,
                b: 1,
                class_a: 1,
                class_b: 4,
            }],
        };
        let lo = ordinal_constraint_loss(&pred, &correct);
        let hi = ordinal_constraint_loss(&pred, &inverted);
        assert!((lo - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((hi - (2.0 + (1.0 + (-2.0f64).exp()).ln())).abs() < 1e-12);
        assert!(hi > lo);
    }

    #[test]
    fn ordinal_loss_on_equal_predictions_is_ln_two() {
        let pred = vec![7.0, 7.0];
        let pairs = PixelPairSet {
            pairs: vec![PixelPair {
                a: 0,
                b: 1,
                class_a: 2,
                class_b: 5,
            }],
        };
        assert!((ordinal_constraint_loss(&pred, &pairs) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ordinal_loss_decreases_as_margin_grows_in_the_right_direction() {
        let pairs = PixelPairSet {
            pairs: vec![PixelPair {
                a: 0,
                b: 1,
                class_a: 6,
                class_b: 2,
            }],
        };
        let mut last = f64::INFINITY;
        for margin in [-4.0, -1.0, 0.0, 1.0, 4.0, 10.0] {
            let loss = ordinal_constraint_loss(&[margin, 0.0], &pairs);
            assert!(loss < last);
            last = loss;
        }
    }

    #[test]
    fn ordinal_loss_of_empty_set_is_zero() {
        assert_eq!(
            ordinal_constraint_loss(&[1.0, 2.0], &PixelPairSet::default()),
            0.0
        );
    }

    #[test]
    fn softplus_is_stable_for_large_arguments() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(-800.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn breakdown_totals_the_components() {
        let b = LossBreakdown::new(0.5, 1.0, 0.25, 0.125).unwrap();
        assert_eq!(b.total, 1.875);
    }

    #[test]
    fn breakdown_rejects_non_finite_components_by_name() {
        match LossBreakdown::new(0.0, f64::NAN, 0.0, 0.0) {
            Err(LossError::NonFinite { component }) => assert_eq!(component, "l_hh"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
        match LossBreakdown::new(0.0, 0.0, 0.0, f64::INFINITY) {
            Err(LossError::NonFinite { component }) => assert_eq!(component, "l_oc"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }
}
