//! The Gaussian small-time limit process and its scaled variants.
//!
//! The limit of the rescaled block-count fluctuations is
//! Z_t = (1/(√2·t))·∫₀ᵗ u dW_u with Z₀ = 0, a centered Gaussian process
//! with Var Z_t = t/6 and Cov(Z_s, Z_t) = (s∧t)³/(6·s·t); normalizing a
//! measure with Kingman mass c rescales the limit to √c·Z.
//!
//! The canonical sampler draws the independent increments of
//! H_t = ∫₀ᵗ u dW_u exactly (variance (t_{i+1}³ − t_i³)/3 by the Itô
//! isometry) and divides by √2·t, so the law on the grid is exact. The
//! Euler scheme for the equivalent equation
//! Z_t = −∫₀ᵗ Z_s/s ds + W_t/√2 is kept only as a consistency oracle:
//! its drift is singular at 0, so it starts from an exactly drawn
//! marginal at the first grid point.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("bad grid: {what}")]
    BadGrid { what: String },
    #[error("argument out of domain: {what}")]
    Domain { what: String },
}

/// One sampled path of √c·Z on a fixed positive grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPath {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub scale_c: f64,
}

fn check_grid(grid: &[f64]) -> Result<(), LimitError> {
    if grid.is_empty() {
        return Err(LimitError::BadGrid {
            what: "empty grid".into(),
        });
    }
    if !grid[0].is_finite() || grid[0] <= 0.0 {
        return Err(LimitError::BadGrid {
            what: format!("grid must start above 0, got {}", grid[0]),
        });
    }
    if grid.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(LimitError::BadGrid {
            what: "grid times must be finite and strictly increasing".into(),
        });
    }
    Ok(())
}

fn check_scale(scale_c: f64) -> Result<(), LimitError> {
    if !(scale_c >= 0.0 && scale_c <= 1.0) {
        return Err(LimitError::Domain {
            what: format!("scale_c must lie in [0, 1], got {scale_c}"),
        });
    }
    Ok(())
}

/// Exact-in-law sample of √c·Z on the grid.
pub fn sample_limit_path<R: Rng>(
    grid: &[f64],
    scale_c: f64,
    rng: &mut R,
) -> Result<LimitPath, LimitError> {
    check_grid(grid)?;
    check_scale(scale_c)?;
    let scale = scale_c.sqrt();
    let mut values = Vec::with_capacity(grid.len());
    let mut h = 0.0f64;
    let mut prev_t = 0.0f64;
    for &t in grid {
        let var = (t * t * t - prev_t * prev_t * prev_t) / 3.0;
        let z: f64 = rng.sample(StandardNormal);
        h += var.sqrt() * z;
        values.push(scale * h / (std::f64::consts::SQRT_2 * t));
        prev_t = t;
    }
    Ok(LimitPath {
        grid: grid.to_vec(),
        values,
        scale_c,
    })
}

/// Cov(√c·Z_s, √c·Z_t) = c·(s∧t)³/(6·s·t).
pub fn limit_covariance(s: f64, t: f64, scale_c: f64) -> Result<f64, LimitError> {
    if !(s > 0.0 && t > 0.0 && s.is_finite() && t.is_finite()) {
        return Err(LimitError::Domain {
            what: format!("covariance requires s, t > 0, got s = {s}, t = {t}"),
        });
    }
    check_scale(scale_c)?;
    let m = s.min(t);
    Ok(scale_c * m * m * m / (6.0 * s * t))
}

/// Euler–Maruyama discretization of dZ = −(Z/t) dt + dW/√2 between grid
/// points, started from an exact N(0, t₁/6) marginal at the first grid
/// point. `max_step` bounds the substep width; steps are additionally
/// capped at half the current time so the singular drift stays stable.
pub fn euler_sde_path<R: Rng>(
    grid: &[f64],
    scale_c: f64,
    max_step: f64,
    rng: &mut R,
) -> Result<LimitPath, LimitError> {
    check_grid(grid)?;
    check_scale(scale_c)?;
    if grid[0] < 1e-6 {
        return Err(LimitError::BadGrid {
            what: format!("euler grid must start at or above 1e-6, got {}", grid[0]),
        });
    }
    if !(max_step > 0.0) {
        return Err(LimitError::Domain {
            what: format!("max_step must be positive, got {max_step}"),
        });
    }
    let t1 = grid[0];
    let z0: f64 = rng.sample(StandardNormal);
    let mut z = (t1 / 6.0).sqrt() * z0;
    let mut values = vec![z];
    let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let step = max_step.min(0.5 * a);
        let n = ((b - a) / step).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let mut t = a;
        for _ in 0..n {
            let noise: f64 = rng.sample(StandardNormal);
            z += -z / t * h + inv_sqrt2 * h.sqrt() * noise;
            t += h;
        }
        values.push(z);
    }
    let scale = scale_c.sqrt();
    Ok(LimitPath {
        grid: grid.to_vec(),
        values: values.iter().map(|v| v * scale).collect(),
        scale_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::replicate_rng;
    use approx::assert_relative_eq;

    fn sample_variance(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn marginal_variance_is_t_over_six() {
        let mut rng = replicate_rng(404, 0);
        let draws = 4_000_000usize;
        let mut values = Vec::with_capacity(draws);
        for _ in 0..draws {
            values.push(sample_limit_path(&[1.0], 1.0, &mut rng).unwrap().values[0]);
        }
        let var = sample_variance(&values);
        assert_relative_eq!(var, 1.0 / 6.0, max_relative = 0.01);
    }

    #[test]
    fn two_point_covariance() {
        // Cov(Z_{1/2}, Z_1) = (1/2)³/(6·(1/2)·1) = 1/24
        let mut rng = replicate_rng(405, 0);
        let draws = 2_000_000usize;
        let mut cross = 0.0;
        for _ in 0..draws {
            let p = sample_limit_path(&[0.5, 1.0], 1.0, &mut rng).unwrap();
            cross += p.values[0] * p.values[1];
        }
        let cov = cross / draws as f64;
        assert_relative_eq!(cov, 1.0 / 24.0, max_relative = 0.02);
    }

    #[test]
    fn covariance_formula_values() {
        assert_relative_eq!(limit_covariance(1.0, 1.0, 1.0).unwrap(), 1.0 / 6.0);
        assert_relative_eq!(limit_covariance(0.5, 1.0, 1.0).unwrap(), 1.0 / 24.0);
        assert_relative_eq!(
            limit_covariance(0.5, 1.0, 0.25).unwrap(),
            0.25 / 24.0
        );
        assert!(limit_covariance(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn scaling_in_c_is_exact_pathwise() {
        // same stream, two scales: values must scale by √(c₂/c₁) exactly
        let grid = [0.25, 0.5, 1.0];
        let a = sample_limit_path(&grid, 1.0, &mut replicate_rng(7, 3)).unwrap();
        let b = sample_limit_path(&grid, 0.25, &mut replicate_rng(7, 3)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_relative_eq!(*y, 0.5 * x, max_relative = 1e-15);
        }
    }

    #[test]
    fn zero_scale_gives_zero_path() {
        let p = euler_sde_path(&[0.5, 1.0], 0.0, 1e-3, &mut replicate_rng(9, 0)).unwrap();
        assert!(p.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bad_grids_are_rejected() {
        let mut rng = replicate_rng(1, 0);
        assert!(sample_limit_path(&[], 1.0, &mut rng).is_err());
        assert!(sample_limit_path(&[0.0, 1.0], 1.0, &mut rng).is_err());
        assert!(sample_limit_path(&[1.0, 0.5], 1.0, &mut rng).is_err());
        assert!(euler_sde_path(&[1e-9, 1.0], 1.0, 1e-3, &mut rng).is_err());
    }

    #[test]
    fn euler_matches_exact_variance() {
        // weak error of Euler at step 1e-3 is far below the 2% gate
        let mut rng = replicate_rng(406, 0);
        let draws = 200_000usize;
        let grid = [0.25, 0.5, 1.0];
        let mut cols = vec![Vec::with_capacity(draws); grid.len()];
        for _ in 0..draws {
            let p = euler_sde_path(&grid, 1.0, 1e-3, &mut rng).unwrap();
            for (i, v) in p.values.iter().enumerate() {
                cols[i].push(*v);
            }
        }
        for (i, &t) in grid.iter().enumerate() {
            let var = sample_variance(&cols[i]);
            assert_relative_eq!(var, t / 6.0, max_relative = 0.02);
        }
    }

    #[test]
    fn dropping_the_drift_changes_the_variance() {
        // without the −Z/s term the t = 1 variance becomes
        // t₁/6 + (1 − t₁)/2 ≈ 1/2, far from 1/6
        let mut rng = replicate_rng(407, 0);
        let draws = 100_000usize;
        let t1 = 0.01;
        let mut values = Vec::with_capacity(draws);
        for _ in 0..draws {
            let z0: f64 = rng.sample(StandardNormal);
            let mut z = (t1 / 6.0_f64).sqrt() * z0;
            let mut t = t1;
            let h = 1e-3;
            while t < 1.0 - 1e-12 {
                let noise: f64 = rng.sample(StandardNormal);
                z += (0.5f64 * h).sqrt() * noise;
                t += h;
            }
            values.push(z);
        }
        let var = sample_variance(&values);
        let expected = t1 / 6.0 + (1.0 - t1) / 2.0;
        assert_relative_eq!(var, expected, max_relative = 0.03);
        assert!(var > 2.0 * (1.0 / 6.0));
    }
}
