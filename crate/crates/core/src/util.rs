//! Numerical kernels shared across the crate: compensated summation,
//! log-binomials, and cancellation-safe evaluations of the binomial-type
//! expressions that appear in every merge-rate integrand.

use statrs::function::gamma::ln_gamma;

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// ln C(n, k) via log-gamma; valid for n up to ~1e15.
#[inline]
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// ln B(a, b) = ln Γ(a) + ln Γ(b) − ln Γ(a+b).
#[inline]
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// (1 − y)^q for y ∈ [0, 1], q ≥ 0, without the 0·∞ trap at y = 1.
#[inline]
pub fn pow_one_minus(y: f64, q: f64) -> f64 {
    if y >= 1.0 {
        0.0
    } else {
        (q * (-y).ln_1p()).exp()
    }
}

/// (q y − 1 + (1 − y)^q) / y², continuously extended to q(q−1)/2 at y = 0.
///
/// This is the mean number of blocks lost (beyond the first) per paintbox
/// event, divided by y².
pub fn excess_merge_kernel(q: f64, y: f64) -> f64 {
    excess_merge_kernel_shifted(q - 1.0, y)
}

/// [`excess_merge_kernel`] parameterized by the shift qm1 = q − 1, which
/// callers near the q = 1 zero of the kernel can supply exactly.
///
/// Direct evaluation cancels catastrophically when q·y is small, so below
/// q·y = 1/2 we sum the binomial series Σ_{j≥2} C(q, j) (−y)^j / y²; above
/// it we use the identity
///   q y − 1 + (1−y)^q = (q−1) y + (1−y)·expm1((q−1)·ln(1−y)),
/// which stays accurate down to q = 1 where the kernel vanishes linearly.
pub fn excess_merge_kernel_shifted(qm1: f64, y: f64) -> f64 {
    debug_assert!(y >= 0.0 && y <= 1.0);
    let q = 1.0 + qm1;
    if y == 0.0 {
        return 0.5 * q * qm1;
    }
    if y >= 1.0 {
        // value is q − 1
        return qm1;
    }
    let qy = q * y;
    if qy < 0.5 {
        // a_j = C(q, j)(−y)^j / y², started at j = 2.
        let mut term = 0.5 * q * qm1;
        let mut sum = term;
        let mut j = 2.0f64;
        for _ in 0..60 {
            term *= -y * (q - j) / (j + 1.0);
            sum += term;
            j += 1.0;
            if term.abs() <= f64::EPSILON * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (qm1 * y + (1.0 - y) * (qm1 * (-y).ln_1p()).exp_m1()) / (y * y)
    }
}

/// (q y − 1 + e^{−q y}) / y², continuously extended to q²/2 at y = 0.
///
/// Exponential variant of [`excess_merge_kernel`]; same series strategy.
pub fn excess_merge_kernel_exp(q: f64, y: f64) -> f64 {
    debug_assert!(y >= 0.0 && y <= 1.0);
    if y == 0.0 {
        return 0.5 * q * q;
    }
    let qy = q * y;
    if qy < 0.5 {
        // Σ_{m≥2} (−qy)^m / m! / y²
        let mut term = 0.5 * q * q;
        let mut sum = term;
        let mut m = 2.0f64;
        for _ in 0..40 {
            term *= -qy / (m + 1.0);
            sum += term;
            m += 1.0;
            if term.abs() <= f64::EPSILON * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (qy - 1.0 + (-qy).exp()) / (y * y)
    }
}

/// P(Binomial(b, y) ≥ 2) evaluated without cancellation.
///
/// Uses 1 − (1−y)^b − b y (1−y)^{b−1} directly when b·y ≥ 1/2 and the
/// series Σ_{j≥2} (−1)^j (j−1) C(b, j) y^j otherwise.
pub fn prob_two_or_more(b: u64, y: f64) -> f64 {
    debug_assert!(y >= 0.0 && y <= 1.0);
    if b < 2 || y == 0.0 {
        return 0.0;
    }
    let bf = b as f64;
    let by = bf * y;
    if by < 0.5 {
        // a_j = (−1)^j (j−1) C(b, j) y^j, started at j = 2.
        let mut term = 0.5 * bf * (bf - 1.0) * y * y;
        let mut sum = term;
        let mut j = 2.0f64;
        for _ in 0..60 {
            term *= -y * (bf - j) / (j + 1.0) * (j / (j - 1.0));
            sum += term;
            j += 1.0;
            if term.abs() <= f64::EPSILON * sum.abs() {
                break;
            }
        }
        sum.clamp(0.0, 1.0)
    } else if y >= 1.0 {
        1.0
    } else {
        let p0 = pow_one_minus(y, bf);
        let p1 = bf * y * pow_one_minus(y, bf - 1.0);
        (1.0 - p0 - p1).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let mut s = CompensatedSum::new();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-16);
        }
        assert_relative_eq!(s.value(), 1.0 + 10e-16, max_relative = 1e-15);
    }

    #[test]
    fn ln_choose_small_values() {
        assert_relative_eq!(ln_choose(5, 2).exp(), 10.0, max_relative = 1e-12);
        assert_relative_eq!(ln_choose(10, 5).exp(), 252.0, max_relative = 1e-12);
    }

    #[test]
    fn merge_kernel_limits() {
        // value at y = 0 is q(q−1)/2
        assert_relative_eq!(excess_merge_kernel(3.0, 0.0), 3.0);
        // q = 1 makes the numerator vanish identically
        assert_eq!(excess_merge_kernel(1.0, 0.3), 0.0);
        // y = 1 gives q − 1
        assert_relative_eq!(excess_merge_kernel(4.0, 1.0), 3.0, max_relative = 1e-14);
    }

    #[test]
    fn merge_kernel_series_matches_direct_at_crossover() {
        // both branches must agree to near machine precision at the switch
        for &q in &[2.0, 10.0, 1e3, 1e6] {
            let y = 0.4999 / q;
            let series = excess_merge_kernel(q, y);
            let direct = (q * y - 1.0 + pow_one_minus(y, q)) / (y * y);
            assert_relative_eq!(series, direct, max_relative = 1e-9);
        }
    }

    #[test]
    fn exp_kernel_matches_quadratic_limit() {
        assert_relative_eq!(excess_merge_kernel_exp(2.0, 0.0), 2.0);
        let v = excess_merge_kernel_exp(1.0, 1.0);
        assert_relative_eq!(v, (-1.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn prob_two_or_more_against_direct_sum() {
        // brute-force binomial tail for small b
        for &(b, y) in &[(2u64, 0.5f64), (5, 0.1), (8, 0.01), (20, 0.3)] {
            let mut tail = 0.0;
            for j in 2..=b {
                let c = ln_choose(b, j).exp();
                tail += c * y.powi(j as i32) * (1.0 - y).powi((b - j) as i32);
            }
            assert_relative_eq!(prob_two_or_more(b, y), tail, max_relative = 1e-16_f64.sqrt());
        }
    }

    #[test]
    fn prob_two_or_more_edge_cases() {
        assert_eq!(prob_two_or_more(1, 0.5), 0.0);
        assert_eq!(prob_two_or_more(10, 0.0), 0.0);
        assert_eq!(prob_two_or_more(10, 1.0), 1.0);
    }
}
