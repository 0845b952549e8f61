//! Monte-Carlo summary statistics. Tolerances in the experiment harness
//! are expressed in standard-error units, and all standard errors here
//! come from batching: replicates are split into contiguous batches, the
//! statistic is computed per batch, and the SE is the spread of the batch
//! values over √B. That keeps the error bars honest for heavy-tailed
//! samples, where moment-based formulas would be optimistic.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Point estimate with a batched standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

pub const DEFAULT_BATCHES: usize = 20;

fn batch_se(batch_values: &[f64]) -> f64 {
    let b = batch_values.len() as f64;
    let mean = batch_values.iter().sum::<f64>() / b;
    let var = batch_values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (b - 1.0);
    (var / b).sqrt()
}

fn batches(n: usize, wanted: usize) -> Vec<(usize, usize)> {
    let b = wanted.min(n / 2).max(2);
    (0..b)
        .map(|i| (i * n / b, (i + 1) * n / b))
        .collect()
}

pub fn mean_with_se(values: &[f64], n_batches: usize) -> Estimate {
    assert!(values.len() >= 4, "need at least 4 values");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let per_batch: Vec<f64> = batches(values.len(), n_batches)
        .into_iter()
        .map(|(a, b)| values[a..b].iter().sum::<f64>() / (b - a) as f64)
        .collect();
    Estimate {
        value: mean,
        std_error: batch_se(&per_batch),
    }
}

pub fn variance_with_se(values: &[f64], n_batches: usize) -> Estimate {
    assert!(values.len() >= 8, "need at least 8 values");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let per_batch: Vec<f64> = batches(values.len(), n_batches)
        .into_iter()
        .map(|(a, b)| {
            let m = values[a..b].iter().sum::<f64>() / (b - a) as f64;
            values[a..b].iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (b - a - 1) as f64
        })
        .collect();
    Estimate {
        value: var,
        std_error: batch_se(&per_batch),
    }
}

pub fn covariance_with_se(xs: &[f64], ys: &[f64], n_batches: usize) -> Estimate {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 8, "need at least 8 value pairs");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (n - 1.0);
    let per_batch: Vec<f64> = batches(xs.len(), n_batches)
        .into_iter()
        .map(|(a, b)| {
            let len = (b - a) as f64;
            let bx = xs[a..b].iter().sum::<f64>() / len;
            let by = ys[a..b].iter().sum::<f64>() / len;
            xs[a..b]
                .iter()
                .zip(&ys[a..b])
                .map(|(x, y)| (x - bx) * (y - by))
                .sum::<f64>()
                / (len - 1.0)
        })
        .collect();
    Estimate {
        value: cov,
        std_error: batch_se(&per_batch),
    }
}

/// One-sample Kolmogorov–Smirnov test result.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// KS test of `values` against N(0, sigma²). The null is fully specified,
/// so the asymptotic Kolmogorov distribution applies; Stephens' finite-n
/// adjustment sharpens it for moderate sample sizes.
pub fn ks_test_centered_normal(values: &[f64], sigma: f64) -> KsResult {
    assert!(values.len() >= 8 && sigma > 0.0);
    let normal = Normal::new(0.0, sigma).expect("valid normal");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let cdf = normal.cdf(*x);
        let hi = (i as f64 + 1.0) / n - cdf;
        let lo = cdf - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
    }
}

/// Survival function of the Kolmogorov distribution,
/// Q(λ) = 2·Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Chi-square goodness-of-fit result.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square of observed counts against expected probabilities.
/// Cells with expected count below 5 are pooled into their neighbor.
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> ChiSquareResult {
    assert_eq!(observed.len(), expected_probs.len());
    let n: u64 = observed.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pending = (0.0f64, 0.0f64);
    for (o, p) in observed.iter().zip(expected_probs) {
        pending.0 += *o as f64;
        pending.1 += p * n as f64;
        if pending.1 >= 5.0 {
            cells.push(pending);
            pending = (0.0, 0.0);
        }
    }
    if pending.1 > 0.0 {
        if let Some(last) = cells.last_mut() {
            last.0 += pending.0;
            last.1 += pending.1;
        } else {
            cells.push(pending);
        }
    }
    let statistic: f64 = cells
        .iter()
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = cells.len().saturating_sub(1).max(1);
    let chi = ChiSquared::new(dof as f64).expect("valid dof");
    ChiSquareResult {
        statistic,
        dof,
        p_value: 1.0 - chi.cdf(statistic),
    }
}

/// Total-variation distance between two empirical histograms over integer
/// support: (1/2)·Σ |p̂₁(k) − p̂₂(k)|.
pub fn tv_distance(a: &[u32], b: &[u32]) -> f64 {
    let mut counts_a = std::collections::BTreeMap::new();
    let mut counts_b = std::collections::BTreeMap::new();
    for &x in a {
        *counts_a.entry(x).or_insert(0u64) += 1;
    }
    for &x in b {
        *counts_b.entry(x).or_insert(0u64) += 1;
    }
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let keys: std::collections::BTreeSet<u32> = counts_a
        .keys()
        .chain(counts_b.keys())
        .cloned()
        .collect();
    0.5 * keys
        .into_iter()
        .map(|k| {
            let pa = counts_a.get(&k).copied().unwrap_or(0) as f64 / na;
            let pb = counts_b.get(&k).copied().unwrap_or(0) as f64 / nb;
            (pa - pb).abs()
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::replicate_rng;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_sample(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = replicate_rng(seed, 0);
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            })
            .collect()
    }

    #[test]
    fn mean_and_variance_of_known_sample() {
        let xs = normal_sample(20_000, 2.0, 1);
        let m = mean_with_se(&xs, DEFAULT_BATCHES);
        assert!(m.value.abs() <= 4.0 * m.std_error);
        let v = variance_with_se(&xs, DEFAULT_BATCHES);
        assert!((v.value - 4.0).abs() <= 4.0 * v.std_error);
        assert_relative_eq!(v.std_error, 4.0 * (2.0f64 / 20_000.0).sqrt(), max_relative = 0.5);
    }

    #[test]
    fn covariance_of_correlated_pairs() {
        let mut rng = replicate_rng(2, 0);
        let n = 50_000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            xs.push(a);
            ys.push(0.5 * a + b);
        }
        let cov = covariance_with_se(&xs, &ys, DEFAULT_BATCHES);
        assert!((cov.value - 0.5).abs() <= 4.0 * cov.std_error);
    }

    #[test]
    fn ks_accepts_matching_normal() {
        let xs = normal_sample(5_000, 0.4, 3);
        let ks = ks_test_centered_normal(&xs, 0.4);
        assert!(ks.p_value > 0.05, "p = {}", ks.p_value);
    }

    #[test]
    fn ks_rejects_shifted_normal() {
        let xs: Vec<f64> = normal_sample(5_000, 1.0, 4).iter().map(|x| x + 0.2).collect();
        let ks = ks_test_centered_normal(&xs, 1.0);
        assert!(ks.p_value < 1e-6, "p = {}", ks.p_value);
    }

    #[test]
    fn kolmogorov_sf_reference_values() {
        // Q(0.83) ≈ 0.4963, Q(1.36) ≈ 0.0490 (classical table entries)
        assert_relative_eq!(kolmogorov_sf(0.8276), 0.5, max_relative = 2e-3);
        assert_relative_eq!(kolmogorov_sf(1.3581), 0.05, max_relative = 2e-3);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn chi_square_accepts_true_distribution() {
        let mut rng = replicate_rng(5, 0);
        let probs = [0.5, 0.3, 0.2];
        let mut counts = [0u64; 3];
        for _ in 0..10_000 {
            let u: f64 = rng.gen();
            let idx = if u < 0.5 {
                0
            } else if u < 0.8 {
                1
            } else {
                2
            };
            counts[idx] += 1;
        }
        let res = chi_square_gof(&counts, &probs);
        assert_eq!(res.dof, 2);
        assert!(res.p_value > 0.01, "p = {}", res.p_value);
    }

    #[test]
    fn chi_square_rejects_wrong_distribution() {
        let counts = [7000u64, 2000, 1000];
        let res = chi_square_gof(&counts, &[0.5, 0.3, 0.2]);
        assert!(res.p_value < 1e-10);
    }

    #[test]
    fn tv_distance_bounds() {
        assert_eq!(tv_distance(&[1, 1, 2, 2], &[1, 1, 2, 2]), 0.0);
        assert_eq!(tv_distance(&[1, 1], &[2, 2]), 1.0);
        let d = tv_distance(&[1, 1, 2, 2], &[1, 2, 2, 2]);
        assert_relative_eq!(d, 0.25);
    }
}
