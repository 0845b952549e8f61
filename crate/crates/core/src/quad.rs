//! Adaptive Gauss–Kronrod quadrature (G7–K15 panels, worst-interval-first
//! refinement). All measure and rate integrals in this crate go through
//! here, so the refinement order is kept fully deterministic.

use std::collections::BinaryHeap;

use thiserror::Error;

/// Quadrature failed to reach the requested tolerance.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("quadrature tolerance not met: estimate {estimate:e}, error {error:e} after {intervals} intervals")]
pub struct QuadratureFailure {
    pub estimate: f64,
    pub error: f64,
    pub intervals: usize,
}

// 15-point Kronrod abscissae (positive half) and weights; 7-point Gauss
// weights embedded. Standard QUADPACK tables.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

fn kronrod_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut gauss = fc * WG[3];
    let mut kronrod = fc * WGK[7];
    for j in 0..3 {
        let x = half * XGK[2 * j + 1];
        let fsum = f(center - x) + f(center + x);
        gauss += WG[j] * fsum;
        kronrod += WGK[2 * j + 1] * fsum;
    }
    for j in 0..4 {
        let x = half * XGK[2 * j];
        let fsum = f(center - x) + f(center + x);
        kronrod += WGK[2 * j] * fsum;
    }
    ((kronrod * half), ((kronrod - gauss) * half).abs())
}

#[derive(Debug)]
struct Interval {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    seq: u64,
}

impl PartialEq for Interval {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error && self.seq == other.seq
    }
}
impl Eq for Interval {}
impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Interval {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // max-heap on error; ties broken by insertion order so refinement
        // is deterministic
        self.error
            .total_cmp(&other.error)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Integrate `f` over `[a, b]` to relative tolerance `rel_tol` (with an
/// absolute floor `abs_tol` for integrals near zero).
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64, QuadratureFailure> {
    integrate_seeded(f, &[a, b], rel_tol, abs_tol)
}

/// Like [`integrate`], but starting from the panels delimited by
/// `breakpoints` (strictly increasing). Useful when the integrand spans
/// many decades and a single initial panel would fool the error estimate.
pub fn integrate_seeded<F: Fn(f64) -> f64>(
    f: F,
    breakpoints: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64, QuadratureFailure> {
    const MAX_INTERVALS: usize = 8192;
    assert!(breakpoints.len() >= 2);
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in breakpoints.windows(2) {
        let (v, e) = kronrod_panel(&f, w[0], w[1]);
        total += v;
        total_err += e;
        heap.push(Interval {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
            seq,
        });
        seq += 1;
    }

    loop {
        if !total.is_finite() || !total_err.is_finite() {
            return Err(QuadratureFailure {
                estimate: total,
                error: total_err,
                intervals: heap.len(),
            });
        }
        if total_err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        if heap.len() >= MAX_INTERVALS {
            return Err(QuadratureFailure {
                estimate: total,
                error: total_err,
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval no longer splittable in f64 while still dominating
            // the error budget: the tolerance is unreachable
            return Err(QuadratureFailure {
                estimate: total,
                error: total_err,
                intervals: heap.len() + 1,
            });
        }
        let (lv, le) = kronrod_panel(&f, worst.a, mid);
        let (rv, re) = kronrod_panel(&f, mid, worst.b);
        total += lv + rv - worst.value;
        total_err += le + re - worst.error;
        heap.push(Interval {
            a: worst.a,
            b: mid,
            value: lv,
            error: le,
            seq,
        });
        heap.push(Interval {
            a: mid,
            b: worst.b,
            value: rv,
            error: re,
            seq: seq + 1,
        });
        seq += 2;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 1e-12, 0.0).unwrap();
        // ∫ = x⁴/4 − x² + x
        let exact = (81.0 / 4.0 - 9.0 + 3.0) - (0.25 - 1.0 - 1.0);
        assert_relative_eq!(v, exact, max_relative = 1e-14);
    }

    #[test]
    fn integrable_endpoint_singularity() {
        let v = integrate(|x| x.powf(-0.5), 0.0, 1.0, 1e-10, 0.0).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn sharp_feature_needs_seeding() {
        // e^{-1e6 x} over [0, 1]: nearly all mass in [0, 1e-5]
        let v = integrate_seeded(
            |x| (-1e6 * x).exp(),
            &[0.0, 1e-6, 1e-4, 1e-2, 1.0],
            1e-11,
            0.0,
        )
        .unwrap();
        assert_relative_eq!(v, 1e-6 * (1.0 - (-1e6f64).exp()), max_relative = 1e-10);
    }

    #[test]
    fn reports_failure_instead_of_wrong_answer() {
        // non-integrable 1/x: must error, not return garbage
        let r = integrate(|x| 1.0 / x, 0.0, 1.0, 1e-10, 0.0);
        assert!(r.is_err());
    }
}
