//! Speeds of descent from large block counts.
//!
//! The speed v is the inverse of the strictly decreasing map
//! T(v) = ∫_v^∞ dq/Ψ(q); the exponential variant v* replaces Ψ by Ψ*, and
//! w_t = 2/(c·t) is the common leading asymptotic of both. T is evaluated
//! by splitting at a cutoff M beyond which the Λ₁ part of the rate is a
//! negligible fraction of the Kingman part: the integral over [v, M] is
//! done numerically on a log grid, and the tail from M is the analytic
//! Kingman expression. v itself is then recovered by bracketed
//! Illinois/bisection iteration on ln(v − 1).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

use crate::quad;
use crate::rates::{RateError, RateFunctional};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpeedError {
    #[error("argument out of domain: {what}")]
    Domain { what: String },
    #[error("root finding failed: {what}")]
    ConvergenceFailure { what: String },
    #[error(transparent)]
    Rate(#[from] RateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpeedVariant {
    /// Inverse of ∫ dq/Ψ.
    V,
    /// Inverse of ∫ dq/Ψ*.
    VStar,
    /// Closed form 2/(c·t).
    W,
}

pub struct SpeedFunction {
    rf: Arc<RateFunctional>,
    variant: SpeedVariant,
    tolerance: f64,
    tail_cutoff: OnceLock<Result<f64, SpeedError>>,
    memo: Mutex<HashMap<u64, f64>>,
    star_sibling: OnceLock<Arc<SpeedFunction>>,
}

pub const DEFAULT_SPEED_TOLERANCE: f64 = 1e-10;

impl SpeedFunction {
    pub fn new(rf: Arc<RateFunctional>, variant: SpeedVariant) -> Self {
        Self::with_tolerance(rf, variant, DEFAULT_SPEED_TOLERANCE)
    }

    pub fn with_tolerance(rf: Arc<RateFunctional>, variant: SpeedVariant, tolerance: f64) -> Self {
        assert!(tolerance > 0.0 && tolerance < 1e-2);
        Self {
            rf,
            variant,
            tolerance,
            tail_cutoff: OnceLock::new(),
            memo: Mutex::new(HashMap::new()),
            star_sibling: OnceLock::new(),
        }
    }

    pub fn variant(&self) -> SpeedVariant {
        self.variant
    }

    pub fn rate_functional(&self) -> &Arc<RateFunctional> {
        &self.rf
    }

    fn kingman_mass(&self) -> f64 {
        self.rf.measure().kingman_mass()
    }

    /// w_t = 2/(c·t).
    pub fn w_speed(&self, t: f64) -> Result<f64, SpeedError> {
        if !(t > 0.0) {
            return Err(SpeedError::Domain {
                what: format!("w_speed requires t > 0, got {t}"),
            });
        }
        Ok(2.0 / (self.kingman_mass() * t))
    }

    /// Speed value at time t: closed form for W, root-found for V and V*.
    /// Results are memoized on the exact query value.
    pub fn value(&self, t: f64) -> Result<f64, SpeedError> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(SpeedError::Domain {
                what: format!("speed requires finite t > 0, got {t}"),
            });
        }
        if self.variant == SpeedVariant::W {
            return self.w_speed(t);
        }
        let key = t.to_bits();
        if let Some(&v) = self.memo.lock().expect("speed memo poisoned").get(&key) {
            return Ok(v);
        }
        let v = self.solve(t)?;
        self.memo
            .lock()
            .expect("speed memo poisoned")
            .insert(key, v);
        Ok(v)
    }

    /// T(q): the time at which the speed equals q, i.e. ∫_q^∞ over the
    /// reciprocal rate. Defined for q > 1.
    pub fn hitting_time(&self, q: f64) -> Result<f64, SpeedError> {
        if !(q > 1.0 && q.is_finite()) {
            return Err(SpeedError::Domain {
                what: format!("hitting_time requires q > 1, got {q}"),
            });
        }
        if self.variant == SpeedVariant::W {
            return Ok(2.0 / (self.kingman_mass() * q));
        }
        self.time_integral(q)
    }

    /// (1/√t)·((c·t/2)·v_t − 1); converges as t ↓ 0 to the drift constant
    /// of the w-normalized fluctuation limit, −(2√2)/(3√c)·(1−c)·A with
    /// A = lim Ψ₁(q)/q^{3/2}.
    pub fn drift_ratio(&self, t: f64) -> Result<f64, SpeedError> {
        if self.variant != SpeedVariant::V {
            return Err(SpeedError::Domain {
                what: "drift_ratio is defined for the V variant".into(),
            });
        }
        let v = self.value(t)?;
        Ok((0.5 * self.kingman_mass() * t * v - 1.0) / t.sqrt())
    }

    /// v_t / v*_t − 1. Requires the V variant; the V* sibling is built on
    /// first use with the same tolerance.
    pub fn v_vstar_gap(&self, t: f64) -> Result<f64, SpeedError> {
        if self.variant != SpeedVariant::V {
            return Err(SpeedError::Domain {
                what: "v_vstar_gap is defined for the V variant".into(),
            });
        }
        let sibling = self.star_sibling.get_or_init(|| {
            Arc::new(SpeedFunction::with_tolerance(
                self.rf.clone(),
                SpeedVariant::VStar,
                self.tolerance,
            ))
        });
        Ok(self.value(t)? / sibling.value(t)? - 1.0)
    }

    /// Cutoff M beyond which the non-Kingman rate is below `tolerance`
    /// relative to the Kingman rate, making the tail integral analytic.
    /// Both Ψ₁(q)/(q(q−1)) and Ψ₁*(q)/q² are nonincreasing, so checking at
    /// M bounds the whole tail.
    fn cutoff(&self) -> Result<f64, SpeedError> {
        self.tail_cutoff
            .get_or_init(|| {
                let c = self.kingman_mass();
                if self.rf.measure().is_pure_kingman() {
                    return Ok(2.0);
                }
                let mut m = 4.0f64;
                for _ in 0..1100 {
                    let lambda1_part = match self.variant {
                        SpeedVariant::V => (1.0 - c) * self.rf.psi1(m)?,
                        SpeedVariant::VStar => self.rf.weighted_psi1_star(m)?,
                        SpeedVariant::W => unreachable!(),
                    };
                    let kingman_part = match self.variant {
                        SpeedVariant::V => 0.5 * c * m * (m - 1.0),
                        _ => 0.5 * c * m * m,
                    };
                    if lambda1_part < self.tolerance * kingman_part {
                        return Ok(m);
                    }
                    m *= 2.0;
                    if !m.is_finite() {
                        break;
                    }
                }
                Err(SpeedError::ConvergenceFailure {
                    what: "no tail cutoff found below f64 range".into(),
                })
            })
            .clone()
    }

    fn rate_at(&self, q: f64) -> Result<f64, SpeedError> {
        Ok(match self.variant {
            SpeedVariant::V => self.rf.psi(q)?,
            SpeedVariant::VStar => self.rf.psi_star(q)?,
            SpeedVariant::W => unreachable!(),
        })
    }

    /// Analytic Kingman-only tail ∫_m^∞: 2/(c·q(q−1)) integrates to
    /// (2/c)·ln(m/(m−1)); the Ψ* version 2/(c·q²) integrates to 2/(c·m).
    fn analytic_tail(&self, m: f64) -> f64 {
        let c = self.kingman_mass();
        match self.variant {
            SpeedVariant::V => 2.0 / c * (1.0 / (m - 1.0)).ln_1p(),
            SpeedVariant::VStar => 2.0 / (c * m),
            SpeedVariant::W => unreachable!(),
        }
    }

    fn time_integral(&self, v: f64) -> Result<f64, SpeedError> {
        let m = self.cutoff()?;
        if v >= m {
            return Ok(self.analytic_tail(v));
        }
        // ∫_v^m dq/Ψ(q) under q = 1 + (v−1)e^x: the substitution absorbs
        // both the 1/(q−1) blow-up as v ↓ 1 and the e^{−x} decay at large
        // q, leaving a bounded integrand on [0, ln((m−1)/(v−1))]
        let len = ((m - 1.0) / (v - 1.0)).ln();
        let n_seed = (len / 2.0).ceil().max(1.0) as usize;
        let mut seeds = Vec::with_capacity(n_seed + 1);
        for i in 0..=n_seed {
            seeds.push(len * i as f64 / n_seed as f64);
        }
        let err: Mutex<Option<SpeedError>> = Mutex::new(None);
        let f = |x: f64| {
            let shifted = ((v - 1.0) * x.exp()).min(m - 1.0);
            let rate = match self.variant {
                // shift-aware Ψ: exact through the linear zero at q = 1
                SpeedVariant::V => self.rf.psi_from_shift(shifted).map_err(SpeedError::from),
                SpeedVariant::VStar => self.rate_at(1.0 + shifted),
                SpeedVariant::W => unreachable!(),
            };
            match rate {
                Ok(rate) => {
                    let val = shifted / rate;
                    if val.is_finite() {
                        val
                    } else {
                        0.0
                    }
                }
                Err(e) => {
                    *err.lock().expect("quad err slot") = Some(e);
                    0.0
                }
            }
        };
        let numeric = quad::integrate_seeded(f, &seeds, 0.1 * self.tolerance, 0.0).map_err(
            |q| SpeedError::ConvergenceFailure {
                what: format!("time integral quadrature failed: {q}"),
            },
        )?;
        if let Some(e) = err.into_inner().expect("quad err slot") {
            return Err(e.into());
        }
        Ok(numeric + self.analytic_tail(m))
    }

    /// Root-find v with |T(v) − t| ≤ tolerance·t. Initial bracket is
    /// [max(1+1e−9, w/10), 10·w], expanded geometrically as needed; the
    /// iteration runs in z = ln(v − 1) with Illinois acceleration.
    fn solve(&self, t: f64) -> Result<f64, SpeedError> {
        let w = 2.0 / (self.kingman_mass() * t);
        let mut lo = (0.1 * w).max(1.0 + 1e-9);
        let mut hi = 10.0 * w.max(1.0);
        let goal = t;

        let mut t_lo = self.time_integral(lo)?;
        while t_lo < goal {
            let next = 1.0 + (lo - 1.0) / 64.0;
            if next - 1.0 < 1e-14 {
                let t_floor = self.time_integral(next)?;
                if t_floor < goal {
                    return Err(SpeedError::ConvergenceFailure {
                        what: format!("no lower bracket: T({next}) = {t_floor} < t = {goal}"),
                    });
                }
                lo = next;
                t_lo = t_floor;
                break;
            }
            lo = next;
            t_lo = self.time_integral(lo)?;
        }
        let mut t_hi = self.time_integral(hi)?;
        while t_hi > goal {
            hi *= 64.0;
            if !hi.is_finite() || hi > 1e300 {
                return Err(SpeedError::ConvergenceFailure {
                    what: format!("no upper bracket below 1e300 for t = {goal}"),
                });
            }
            t_hi = self.time_integral(hi)?;
        }

        let tol = self.tolerance * goal;
        if (t_lo - goal).abs() <= tol {
            return Ok(lo);
        }
        if (t_hi - goal).abs() <= tol {
            return Ok(hi);
        }

        // Illinois iteration on z = ln(v − 1); g = T(v) − t is decreasing
        // in z with g(z_lo) > 0 > g(z_hi)
        let mut z_lo = (lo - 1.0).ln();
        let mut z_hi = (hi - 1.0).ln();
        let mut g_lo = t_lo - goal;
        let mut g_hi = t_hi - goal;
        for iter in 0..200 {
            let mut z = z_hi - g_hi * (z_hi - z_lo) / (g_hi - g_lo);
            if !(z > z_lo && z < z_hi) || iter % 8 == 7 {
                z = 0.5 * (z_lo + z_hi);
            }
            let v = 1.0 + z.exp();
            let g = self.time_integral(v)? - goal;
            if g.abs() <= tol {
                return Ok(v);
            }
            if g > 0.0 {
                z_lo = z;
                g_lo = g;
                g_hi *= 0.5;
            } else {
                z_hi = z;
                g_hi = g;
                g_lo *= 0.5;
            }
            if z_hi - z_lo < 1e-15 {
                return Ok(1.0 + (0.5 * (z_lo + z_hi)).exp());
            }
        }
        Err(SpeedError::ConvergenceFailure {
            what: format!("Illinois iteration did not converge for t = {goal}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::DrivingMeasure;
    use approx::assert_relative_eq;

    fn kingman_speed() -> SpeedFunction {
        SpeedFunction::new(
            Arc::new(RateFunctional::new(DrivingMeasure::pure_kingman())),
            SpeedVariant::V,
        )
    }

    #[test]
    fn pure_kingman_closed_form() {
        // T(v) = 2·ln(v/(v−1)) inverts to v = 1/(1 − e^{−t/2})
        let sf = kingman_speed();
        for &t in &[1e-6f64, 1e-4, 0.1, 1.0, 10.0] {
            // 1 − e^{−t/2} = −expm1(−t/2), kept exact for tiny t
            let expected = -1.0 / (-t / 2.0).exp_m1();
            let v = sf.value(t).unwrap();
            assert_relative_eq!(v, expected, max_relative = 1e-9);
        }
        // the worked value at t = 0.1
        assert_relative_eq!(sf.value(0.1).unwrap(), 20.504_166_493_065_889, max_relative = 1e-9);
    }

    #[test]
    fn pure_kingman_exact_at_two() {
        // t = 2 ln 2 gives v/(v−1) = 2, i.e. v = 2
        let sf = kingman_speed();
        let v = sf.value(2.0 * std::f64::consts::LN_2).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn w_speed_values() {
        let sf = kingman_speed();
        assert_relative_eq!(sf.w_speed(0.01).unwrap(), 200.0);
        let rf = Arc::new(RateFunctional::new(
            DrivingMeasure::kingman_with_atom(0.5, 0.6).unwrap(),
        ));
        let sf = SpeedFunction::new(rf, SpeedVariant::W);
        assert_relative_eq!(sf.value(0.01).unwrap(), 400.0);
        assert_relative_eq!(sf.value(2.0).unwrap(), 2.0);
    }

    #[test]
    fn round_trip_mixed_measures() {
        let measures = [
            DrivingMeasure::kingman_with_atom(0.5, 0.6).unwrap(),
            DrivingMeasure::kingman_with_beta(0.5, 1.0, 1.0).unwrap(),
            DrivingMeasure::kingman_with_beta(0.5, 0.5, 1.5).unwrap(),
        ];
        for m in measures {
            let rf = Arc::new(RateFunctional::new(m));
            for variant in [SpeedVariant::V, SpeedVariant::VStar] {
                let sf = SpeedFunction::new(rf.clone(), variant);
                for i in 0..10 {
                    let t = 10f64.powf(-6.0 + 6.0 * i as f64 / 9.0);
                    let v = sf.value(t).unwrap();
                    let back = sf.hitting_time(v).unwrap();
                    assert!(
                        (back - t).abs() <= 2e-10 * t,
                        "round trip failed: t = {t}, T(v) = {back}"
                    );
                }
            }
        }
    }

    #[test]
    fn speed_is_decreasing_and_above_one() {
        let rf = Arc::new(RateFunctional::new(
            DrivingMeasure::kingman_with_atom(0.3, 0.4).unwrap(),
        ));
        let sf = SpeedFunction::new(rf, SpeedVariant::V);
        let mut prev = f64::INFINITY;
        for i in 0..15 {
            let t = 10f64.powf(-5.0 + 6.0 * i as f64 / 14.0);
            let v = sf.value(t).unwrap();
            assert!(v > 1.0);
            assert!(v < prev, "speed not decreasing at t = {t}");
            prev = v;
        }
    }

    #[test]
    fn speed_equivalent_to_w_near_zero() {
        for m in [
            DrivingMeasure::pure_kingman(),
            DrivingMeasure::kingman_with_atom(0.5, 0.6).unwrap(),
            DrivingMeasure::kingman_with_beta(0.5, 0.5, 1.5).unwrap(),
        ] {
            let c = m.kingman_mass();
            let rf = Arc::new(RateFunctional::new(m));
            let sf = SpeedFunction::new(rf, SpeedVariant::V);
            let mut prev_gap = f64::INFINITY;
            for &t in &[1e-2, 1e-3, 1e-4, 1e-5] {
                let scaled = 0.5 * c * t * sf.value(t).unwrap();
                assert!(scaled > 0.9 && scaled < 1.1, "(ct/2)v = {scaled} at t = {t}");
                let gap = (scaled - 1.0).abs();
                assert!(gap <= prev_gap * 1.01);
                prev_gap = gap;
            }
        }
    }

    #[test]
    fn drift_ratio_vanishes_for_pure_kingman() {
        // closed-form v gives (t/2)v − 1 = O(t), so the ratio is O(√t)
        let sf = kingman_speed();
        let mut prev = f64::INFINITY;
        for &t in &[1e-2, 1e-3, 1e-4] {
            let r = sf.drift_ratio(t).unwrap().abs();
            assert!(r < 0.6 * t.sqrt(), "ratio {r} too large at {t}");
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn drift_ratio_vanishes_for_interior_atom() {
        let rf = Arc::new(RateFunctional::new(
            DrivingMeasure::kingman_with_atom(0.5, 0.6).unwrap(),
        ));
        let sf = SpeedFunction::new(rf, SpeedVariant::V);
        let mut prev = f64::INFINITY;
        for &t in &[1e-2, 1e-3, 1e-4, 1e-5] {
            let r = sf.drift_ratio(t).unwrap().abs();
            assert!(r < prev, "|drift ratio| not decreasing at t = {t}");
            prev = r;
        }
        assert!(prev < 0.02);
    }

    #[test]
    fn drift_ratio_limit_for_critical_beta() {
        // Beta(0.5, 1.5): limit is −(2√2)/(3√c)·(1−c)·A with A = 8/(3√π)
        let rf = Arc::new(RateFunctional::new(
            DrivingMeasure::kingman_with_beta(0.5, 0.5, 1.5).unwrap(),
        ));
        let sf = SpeedFunction::new(rf, SpeedVariant::V);
        let a = 8.0 / (3.0 * std::f64::consts::PI.sqrt());
        let c: f64 = 0.5;
        let target = -(2.0 * 2.0f64.sqrt()) / (3.0 * c.sqrt()) * (1.0 - c) * a;
        let r = sf.drift_ratio(1e-5).unwrap();
        assert_relative_eq!(r, target, max_relative = 0.01);
    }

    #[test]
    fn v_vstar_gap_is_order_t() {
        let rf = Arc::new(RateFunctional::new(
            DrivingMeasure::kingman_with_beta(0.5, 1.0, 1.0).unwrap(),
        ));
        let sf = SpeedFunction::new(rf, SpeedVariant::V);
        let mut ratios = Vec::new();
        for &t in &[1e-2, 1e-3, 1e-4] {
            let gap = sf.v_vstar_gap(t).unwrap();
            assert!(gap > -1.0);
            ratios.push(gap / t);
        }
        // gap/t stays bounded across the grid
        let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max.abs() < 50.0 && min.abs() < 50.0, "gap/t unbounded: {ratios:?}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let sf = kingman_speed();
        assert!(sf.value(0.0).is_err());
        assert!(sf.value(-1.0).is_err());
        assert!(sf.hitting_time(1.0).is_err());
    }
}
