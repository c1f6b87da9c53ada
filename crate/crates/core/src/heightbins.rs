//! Space-increasing height discretization and the two balanced samplers
//! built on it: rank-stratified pixel sampling for the soft height loss and
//! class-balanced pixel-pair sampling for ordinal constraints.

use std::collections::BTreeMap;

use rand::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BinsError {
    #[error("h_min must be positive and finite, got {0}")]
    NonPositiveMin(f64),
    #[error("h_max ({max}) must exceed h_min ({min})")]
    MaxNotAboveMin { min: f64, max: f64 },
    #[error("class count must be at least 1")]
    ZeroClasses,
    #[error("height is NaN")]
    NanHeight,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SampleError {
    #[error("fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("cannot sample from an empty height map")]
    EmptyInput,
    #[error("height map contains NaN")]
    NanHeight,
}

/// Geometric height bins: bin widths grow with height so that tall,
/// sparsely-populated ranges keep usable class resolution.
///
/// `thresholds[k] = exp(ln h_min + k * ln(h_max / h_min) / classes)`, with
/// the endpoints pinned to `h_min` and `h_max` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SidBins {
    thresholds: Vec<f64>,
    h_min: f64,
    h_max: f64,
}

impl SidBins {
    pub fn new(h_min: f64, h_max: f64, classes: usize) -> Result<Self, BinsError> {
        if !(h_min.is_finite() && h_min > 0.0) {
            return Err(BinsError::NonPositiveMin(h_min));
        }
        if !(h_max.is_finite() && h_max > h_min) {
            return Err(BinsError::MaxNotAboveMin {
                min: h_min,
                max: h_max,
            });
        }
        if classes == 0 {
            return Err(BinsError::ZeroClasses);
        }
        let log_min = h_min.ln();
        let log_step = (h_max / h_min).ln() / classes as f64;
        let mut thresholds = Vec::with_capacity(classes + 1);
        thresholds.push(h_min);
        for k in 1..classes {
            thresholds.push((log_min + k as f64 * log_step).exp());
        }
        thresholds.push(h_max);
        Ok(SidBins {
            thresholds,
            h_min,
            h_max,
        })
    }

    /// All `classes + 1` bin edges, ascending.
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn classes(&self) -> usize {
        self.thresholds.len() - 1
    }

    /// Maps a height to its bin. Bins are left-closed `[t_k, t_{k+1})`;
    /// heights below `h_min` (background included) clamp to class 0 and
    /// heights at or above `h_max` clamp to the top class.
    pub fn height_to_class(&self, height: f64) -> Result<usize, BinsError> {
        if height.is_nan() {
            return Err(BinsError::NanHeight);
        }
        if height < self.h_min {
            return Ok(0);
        }
        if height >= self.h_max {
            return Ok(self.classes() - 1);
        }
        let inner = &self.thresholds[1..self.classes()];
        Ok(inner.partition_point(|t| *t <= height))
    }

    /// Vector version of [`height_to_class`](Self::height_to_class).
    pub fn class_map(&self, heights: &[f32]) -> Result<Vec<u16>, BinsError> {
        heights
            .iter()
            .map(|h| self.height_to_class(*h as f64).map(|c| c as u16))
            .collect()
    }
}

/// Convenience wrapper returning just the threshold vector.
pub fn sid_thresholds(h_min: f64, h_max: f64, classes: usize) -> Result<Vec<f64>, BinsError> {
    Ok(SidBins::new(h_min, h_max, classes)?.thresholds.clone())
}

/// Samples `max(1, floor(fraction * n))` pixel indices, one drawn uniformly
/// from each consecutive run of the height-sorted pixel ranking (ties broken
/// by linear index). The result therefore covers the full height range
/// instead of being swamped by the background mode.
pub fn balanced_pixel_sample<R: Rng + ?Sized>(
    heights: &[f64],
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>, SampleError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SampleError::BadFraction(fraction));
    }
    let n = heights.len();
    if n == 0 {
        return Err(SampleError::EmptyInput);
    }
    if heights.iter().any(|h| h.is_nan()) {
        return Err(SampleError::NanHeight);
    }
    let samples = ((fraction * n as f64).floor() as usize).max(1);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| heights[a].total_cmp(&heights[b]).then(a.cmp(&b)));

    let mut out = Vec::with_capacity(samples);
    for j in 0..samples {
        let lo = j * n / samples;
        let hi = (j + 1) * n / samples;
        let rank = rng.random_range(lo..hi);
        out.push(order[rank]);
    }
    Ok(out)
}

/// An ordered pixel pair with the height classes of its endpoints. Indexes
/// refer to whatever flat prediction vector the sampler was run over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelPair {
    pub a: u32,
    pub b: u32,
    pub class_a: u16,
    pub class_b: u16,
}

/// Pairs sampled for ordinal supervision. Endpoints of a pair always come
/// from different height classes; equal-class pairs carry no ordering signal
/// and are never stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelPairSet {
    pub pairs: Vec<PixelPair>,
}

impl PixelPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Class-balanced pair sampling. With `m` distinct classes present, the
/// per-class-pair quota is `min(max(1, budget / (m*(m-1)/2)), n1*n2)` where
/// `n1, n2` are the two smallest class populations; each unordered class
/// pair then contributes exactly that many distinct pixel pairs, sampled
/// without replacement from its cross product. A single-class map yields an
/// empty set (no ordinal signal), which callers may flag but is not an
/// error. The quota rule deliberately under-spends the budget when one
/// class is rare rather than flooding the set with pairs from rich classes.
pub fn balanced_pair_sample<R: Rng + ?Sized>(
    classes: &[u16],
    budget: usize,
    rng: &mut R,
) -> PixelPairSet {
    let mut by_class: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
    for (i, c) in classes.iter().enumerate() {
        by_class.entry(*c).or_default().push(i as u32);
    }
    let m = by_class.len();
    if m < 2 {
        return PixelPairSet::default();
    }

    let n_class_pairs = m * (m - 1) / 2;
    let per_pair_budget = (budget / n_class_pairs).max(1);
    let mut counts: Vec<usize> = by_class.values().map(Vec::len).collect();
    counts.sort_unstable();
    let min_product = counts[0] * counts[1];
    let quota = per_pair_budget.min(min_product);

    let groups: Vec<(&u16, &Vec<u32>)> = by_class.iter().collect();
    let mut pairs = Vec::with_capacity(quota * n_class_pairs);
    for i in 0..m {
        for j in (i + 1)..m {
            let (ca, list_a) = groups[i];
            let (cb, list_b) = groups[j];
            for code in sample_distinct(list_a.len() * list_b.len(), quota, rng) {
                pairs.push(PixelPair {
                    a: list_a[code / list_b.len()],
                    b: list_b[code % list_b.len()],
                    class_a: *ca,
                    class_b: *cb,
                });
            }
        }
    }
    PixelPairSet { pairs }
}

/// Uniform pair sampling without class balancing: endpoints drawn uniformly,
/// equal-class draws discarded. Kept for the random-sampling ablation.
pub fn random_pair_sample<R: Rng + ?Sized>(
    classes: &[u16],
    budget: usize,
    rng: &mut R,
) -> PixelPairSet {
    let n = classes.len();
    let mut distinct = classes.iter();
    let first = match distinct.next() {
        Some(f) => f,
        None => return PixelPairSet::default(),
    };
    if distinct.all(|c| c == first) {
        return PixelPairSet::default();
    }
    let mut pairs = Vec::with_capacity(budget);
    let mut attempts = 0usize;
    let max_attempts = budget.saturating_mul(20).max(64);
    while pairs.len() < budget && attempts < max_attempts {
        attempts += 1;
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if classes[a] != classes[b] {
            pairs.push(PixelPair {
                a: a as u32,
                b: b as u32,
                class_a: classes[a],
                class_b: classes[b],
            });
        }
    }
    PixelPairSet { pairs }
}

/// Draws `quota` distinct integers from `0..space` uniformly without
/// replacement. Uses a partial Fisher-Yates shuffle when the space is small
/// enough to materialize, rejection sampling otherwise (the quota is then a
/// vanishing fraction of the space, so rejections are rare).
fn sample_distinct<R: Rng + ?Sized>(space: usize, quota: usize, rng: &mut R) -> Vec<usize> {
    let quota = quota.min(space);
    if space <= 2 * quota || space <= 4096 {
        let mut codes: Vec<usize> = (0..space).collect();
        for i in 0..quota {
            let j = rng.random_range(i..space);
            codes.swap(i, j);
        }
        codes.truncate(quota);
        codes
    } else {
        let mut chosen = std::collections::HashSet::with_capacity(quota * 2);
        let mut out = Vec::with_capacity(quota);
        while out.len() < quota {
            let code = rng.random_range(0..space);
            if chosen.insert(code) {
                out.push(code);
            }
        }
        out
    }
}
