//! Histograms and the exact binomial test.

use serde::Serialize;
use statrs::distribution::{Binomial, Discrete};

/// Default bin edges `[0, 0.1, ..., 1.0]`.
pub fn default_edges() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub percent: f64,
}

/// Bins are `[lo, hi)` except the last, which is closed. Values outside the
/// edges are ignored; percentages are over the values that landed in a bin.
pub fn histogram(values: &[f64], edges: &[f64]) -> Vec<HistogramRow> {
    assert!(edges.len() >= 2, "need at least one bin");
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let last = edges[bins];
        if v == last {
            counts[bins - 1] += 1;
            continue;
        }
        if let Some(i) = (0..bins).find(|&i| edges[i] <= v && v < edges[i + 1]) {
            counts[i] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    (0..bins)
        .map(|i| HistogramRow {
            bin_lo: edges[i],
            bin_hi: edges[i + 1],
            count: counts[i],
            percent: if total == 0 { 0.0 } else { 100.0 * counts[i] as f64 / total as f64 },
        })
        .collect()
}

/// Exact two-sided binomial test: total probability of outcomes no more
/// likely than the observed one.
pub fn binomial_test(k: u64, m: u64, p0: f64) -> f64 {
    assert!(k <= m, "successes exceed trials");
    assert!((0.0..=1.0).contains(&p0), "p0 outside [0, 1]");
    let dist = Binomial::new(p0, m).expect("valid binomial parameters");
    let observed = dist.pmf(k);
    // Relative slack absorbs rounding between mirror-image outcomes.
    let cutoff = observed * (1.0 + 1e-7);
    let p: f64 = (0..=m).map(|i| dist.pmf(i)).filter(|&q| q <= cutoff).sum();
    p.min(1.0)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}
