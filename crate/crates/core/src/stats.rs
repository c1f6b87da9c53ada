//! Small order-statistics helpers shared by label degradation, evaluation,
//! and the synthetic-data tests.

use std::collections::BTreeMap;

use ndarray::Array2;

/// Median height of every building instance (id > 0) in a labeled patch,
/// keyed by instance id. Background pixels are ignored.
pub fn instance_medians(height: &Array2<f32>, instances: &Array2<u32>) -> BTreeMap<u32, f64> {
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (h, id) in height.iter().zip(instances.iter()) {
        if *id != 0 {
            groups.entry(*id).or_default().push(f64::from(*h));
        }
    }
    groups
        .into_iter()
        .map(|(id, mut vals)| {
            let m = median_inplace(&mut vals).expect("non-empty instance group");
            (id, m)
        })
        .collect()
}

/// Median with the even-count convention: mean of the two middle values.
/// Returns `None` for empty input. The slice is reordered in place.
pub fn median_inplace(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Spearman rank correlation with average ranks for ties. Returns `None`
/// when either side is constant or the lengths differ.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
