//! Rate functionals of a driving measure and the block-count transition
//! structure they induce.
//!
//! For a measure Λ = c·δ₀ + (1−c)Λ₁ the mean decrement rate at q blocks is
//!
//!   Ψ(q) = c·q(q−1)/2 + (1−c)·Ψ₁(q),
//!   Ψ₁(q) = ∫ (qy − 1 + (1−y)^q) / y²  Λ₁(dy),
//!
//! together with the exponential variant Ψ*(q) = ∫ (qy − 1 + e^{−qy})/y² Λ(dy).
//! A chain with b blocks merges any given k-tuple at rate
//! λ_{b,k} = ∫ r^{k−2}(1−r)^{b−k} Λ(dr), so level b carries total rate
//! Σ_k C(b,k)·λ_{b,k}. Everything here is evaluated in log space
//! (log-gamma) with compensated sums so that b up to 10⁶ stays finite.
//!
//! Transition rows are built lazily: each cached row stores its exact total
//! (closed form for atoms, quadrature for Beta components) plus a prefix of
//! per-k rates that grows only as far as inverse-CDF sampling actually
//! scans. Merge-size distributions concentrate at small k for measures with
//! mass near 0, so prefixes stay short in the hot paths.

use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::measure::DrivingMeasure;
use crate::quad::QuadratureFailure;
use crate::util::{
    excess_merge_kernel, excess_merge_kernel_exp, excess_merge_kernel_shifted, ln_beta, ln_choose,
    prob_two_or_more, CompensatedSum,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("argument out of domain: {what}")]
    Domain { what: String },
    #[error(transparent)]
    Quadrature(#[from] QuadratureFailure),
}

/// Total merge rates out of a level `b`, indexed by merge size k = 2..=b.
///
/// `rates[i]` is C(b, k)·λ_{b,k} for k = i + 2; `total` is their
/// compensated sum.
#[derive(Debug, Clone)]
pub struct TransitionRow {
    pub b: u32,
    rates: Vec<f64>,
    pub total: f64,
}

impl TransitionRow {
    /// Rate of a merge of exactly `k` blocks.
    pub fn rate(&self, k: u32) -> f64 {
        assert!(k >= 2 && k <= self.b, "k = {k} outside [2, {}]", self.b);
        self.rates[(k - 2) as usize]
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Σ_k (k−1)·C(b,k)·λ_{b,k}: must equal Ψ(b).
    pub fn mean_decrement(&self) -> f64 {
        let mut s = CompensatedSum::new();
        for (i, r) in self.rates.iter().enumerate() {
            s.add((i + 1) as f64 * r);
        }
        s.value()
    }
}

const DEFAULT_ROW_CACHE_CAPACITY: usize = 100_000;
const ROW_CACHE_SHARDS: usize = 64;

/// Evaluator for Ψ, Ψ₁, Ψ*, λ_{b,k} and transition rows, with an
/// internally synchronized bounded row cache. All evaluation methods are
/// pure given the measure; concurrent calls observe identical values.
pub struct RateFunctional {
    measure: DrivingMeasure,
    cache: ShardedLru,
}

impl RateFunctional {
    pub fn new(measure: DrivingMeasure) -> Self {
        Self::with_cache_capacity(measure, DEFAULT_ROW_CACHE_CAPACITY)
    }

    pub fn with_cache_capacity(measure: DrivingMeasure, capacity: usize) -> Self {
        Self {
            measure,
            cache: ShardedLru::new(capacity),
        }
    }

    pub fn measure(&self) -> &DrivingMeasure {
        &self.measure
    }

    /// Ψ(q) = c·q(q−1)/2 + (1−c)·Ψ₁(q) for q ≥ 1.
    pub fn psi(&self, q: f64) -> Result<f64, RateError> {
        if !(q >= 1.0) {
            return Err(RateError::Domain {
                what: format!("psi requires q >= 1, got {q}"),
            });
        }
        let kingman = 0.5 * self.measure.kingman_mass() * q * (q - 1.0);
        Ok(kingman + self.weighted_psi1(q)?)
    }

    /// Ψ₁(q): the Λ₁ part of Ψ, normalized so Λ₁ is a probability measure.
    /// Identically 0 when c = 1.
    pub fn psi1(&self, q: f64) -> Result<f64, RateError> {
        if !(q >= 1.0) {
            return Err(RateError::Domain {
                what: format!("psi1 requires q >= 1, got {q}"),
            });
        }
        let w = 1.0 - self.measure.kingman_mass();
        if w <= 0.0 {
            return Ok(0.0);
        }
        Ok(self.weighted_psi1(q)? / w)
    }

    /// (1−c)·Ψ₁(q); the combination entering Ψ.
    fn weighted_psi1(&self, q: f64) -> Result<f64, RateError> {
        Ok(self
            .measure
            .weighted_lambda1_integral(&|y| excess_merge_kernel(q, y))?)
    }

    /// Ψ(1 + qm1) with the shift from 1 supplied exactly; keeps the
    /// linear vanishing of Ψ at q = 1 fully accurate for qm1 down to
    /// f64 resolution. Used by the speed solver near its left boundary.
    pub(crate) fn psi_from_shift(&self, qm1: f64) -> Result<f64, RateError> {
        if !(qm1 >= 0.0) {
            return Err(RateError::Domain {
                what: format!("psi_from_shift requires qm1 >= 0, got {qm1}"),
            });
        }
        let kingman = 0.5 * self.measure.kingman_mass() * (1.0 + qm1) * qm1;
        let rest = self
            .measure
            .weighted_lambda1_integral(&|y| excess_merge_kernel_shifted(qm1, y))?;
        Ok(kingman + rest)
    }

    /// Ψ*(q) = ∫ (qy − 1 + e^{−qy})/y² Λ(dy) for q ≥ 0, with the atom at 0
    /// contributing c·q²/2.
    pub fn psi_star(&self, q: f64) -> Result<f64, RateError> {
        if !(q >= 0.0) {
            return Err(RateError::Domain {
                what: format!("psi_star requires q >= 0, got {q}"),
            });
        }
        let kingman = 0.5 * self.measure.kingman_mass() * q * q;
        let rest = self
            .measure
            .weighted_lambda1_integral(&|y| excess_merge_kernel_exp(q, y))?;
        Ok(kingman + rest)
    }

    /// (1−c)·Ψ₁*(q), the Λ₁ part of Ψ*.
    pub(crate) fn weighted_psi1_star(&self, q: f64) -> Result<f64, RateError> {
        Ok(self
            .measure
            .weighted_lambda1_integral(&|y| excess_merge_kernel_exp(q, y))?)
    }

    /// Ψ₁(q)/q^{3/2} for q ≥ 2; its large-q limit separates the measures
    /// whose w-normalized fluctuations stay centered from those that
    /// acquire a drift.
    pub fn psi1_over_q32(&self, q: f64) -> Result<f64, RateError> {
        if !(q >= 2.0) {
            return Err(RateError::Domain {
                what: format!("psi1_over_q32 requires q >= 2, got {q}"),
            });
        }
        Ok(self.psi1(q)? / (q * q.sqrt()))
    }

    /// Estimate lim_{q→∞} Ψ₁(q)/q^{3/2} on a geometric grid ending at
    /// `q_max`. Reports the value at the largest grid point together with
    /// the last two successive differences; no extrapolation is applied.
    pub fn psi1_over_q32_limit(&self, q_max: f64, points: usize) -> Result<GrowthEstimate, RateError> {
        assert!(points >= 3 && q_max >= 100.0);
        let ratio = (q_max / 100.0).powf(1.0 / (points - 1) as f64);
        let mut values = Vec::with_capacity(points);
        let mut grid = Vec::with_capacity(points);
        for i in 0..points {
            let q = 100.0 * ratio.powi(i as i32);
            grid.push(q);
            values.push(self.psi1_over_q32(q)?);
        }
        let n = values.len();
        Ok(GrowthEstimate {
            estimate: values[n - 1],
            last_diffs: [values[n - 1] - values[n - 2], values[n - 2] - values[n - 3]],
            grid,
            values,
        })
    }

    /// λ_{b,k} = ∫ r^{k−2}(1−r)^{b−k} Λ(dr): the rate of any given k-tuple
    /// of blocks merging when b blocks are present.
    pub fn lambda_bk(&self, b: u32, k: u32) -> Result<f64, RateError> {
        if b < 2 || k < 2 || k > b {
            return Err(RateError::Domain {
                what: format!("lambda_bk requires 2 <= k <= b, got b = {b}, k = {k}"),
            });
        }
        let mut rate = if k == 2 {
            self.measure.kingman_mass()
        } else {
            0.0
        };
        for a in self.measure.atoms() {
            rate += a.weight * atom_power(a.location, b, k);
        }
        for comp in self.measure.beta_components() {
            // ∫ r^{k−2}(1−r)^{b−k} Beta(α,β)(dr) = B(k−2+α, b−k+β)/B(α,β)
            let ln_val = ln_beta(k as f64 - 2.0 + comp.alpha, (b - k) as f64 + comp.beta)
                - comp.ln_norm();
            rate += comp.weight * ln_val.exp();
        }
        Ok(rate)
    }

    /// Total merge rate out of level b (all k), computed in closed form for
    /// the Kingman and atom parts and by quadrature for Beta components.
    pub fn total_rate(&self, b: u32) -> Result<f64, RateError> {
        Ok(self.kingman_rate(b) + self.lambda1_row_total(b)?)
    }

    fn kingman_rate(&self, b: u32) -> f64 {
        0.5 * self.measure.kingman_mass() * b as f64 * (b as f64 - 1.0)
    }

    /// Σ_{k=2}^{b} C(b,k)·(λ_{b,k} − Kingman part)
    ///   = ∫ P(Binomial(b, y) ≥ 2) / y² Λ₁-part(dy), weights included.
    fn lambda1_row_total(&self, b: u32) -> Result<f64, RateError> {
        if self.measure.is_pure_kingman() {
            return Ok(0.0);
        }
        Ok(self
            .measure
            .weighted_lambda1_integral(&|y| prob_two_or_more(b as u64, y) / (y * y))?)
    }

    /// C(b,k)·λ_{b,k} without the Kingman contribution.
    fn lambda1_row_rate(&self, b: u32, k: u32) -> f64 {
        let ln_c = ln_choose(b as u64, k as u64);
        let mut rate = 0.0;
        for a in self.measure.atoms() {
            // C(b,k) y^{k-2} (1-y)^{b-k} = P(Bin(b,y)=k)/y²
            if a.location >= 1.0 {
                if k == b {
                    rate += a.weight;
                }
                continue;
            }
            let ln_term = ln_c
                + (k as f64 - 2.0) * a.location.ln()
                + (b - k) as f64 * (-a.location).ln_1p();
            rate += a.weight * ln_term.exp();
        }
        for comp in self.measure.beta_components() {
            let ln_term = ln_c
                + ln_beta(k as f64 - 2.0 + comp.alpha, (b - k) as f64 + comp.beta)
                - comp.ln_norm();
            rate += comp.weight * ln_term.exp();
        }
        rate
    }

    fn cached_row(&self, b: u32) -> Result<Arc<CachedRow>, RateError> {
        if let Some(row) = self.cache.get(b) {
            return Ok(row);
        }
        let row = Arc::new(CachedRow {
            b,
            lambda1_total: self.lambda1_row_total(b)?,
            prefix: Mutex::new(RowPrefix::new()),
        });
        Ok(self.cache.insert(b, row))
    }

    /// Draw the merge size k at level b by inverse CDF, `u` uniform on
    /// (0, 1). The scan extends the cached rate prefix only as far as the
    /// draw requires.
    pub fn sample_merge_size(&self, b: u32, u: f64) -> Result<u32, RateError> {
        debug_assert!(b >= 2);
        let kingman = self.kingman_rate(b);
        if self.measure.is_pure_kingman() {
            return Ok(2);
        }
        let row = self.cached_row(b)?;
        let target = u * (kingman + row.lambda1_total);
        if target <= kingman {
            return Ok(2);
        }
        let residual = target - kingman;
        let mut prefix = row.prefix.lock().expect("row prefix poisoned");
        loop {
            if let Some(k) = prefix.lookup(residual) {
                return Ok(k);
            }
            let next_k = prefix.next_k();
            if next_k > b {
                // cumulative fell short of the analytic total by rounding;
                // the draw lands in the last representable merge size
                return Ok(prefix.last_nonzero_k().unwrap_or(2));
            }
            let rate = self.lambda1_row_rate(b, next_k);
            prefix.push(rate);
        }
    }

    /// Full transition row at level b (k = 2..=b), with compensated total.
    /// Rows are cached; repeated calls share the same underlying prefix.
    pub fn transition_row(&self, b: u32) -> Result<Arc<TransitionRow>, RateError> {
        if b < 2 {
            return Err(RateError::Domain {
                what: format!("transition_row requires b >= 2, got {b}"),
            });
        }
        let kingman = self.kingman_rate(b);
        if self.measure.is_pure_kingman() {
            let mut rates = vec![0.0; (b - 1) as usize];
            rates[0] = kingman;
            return Ok(Arc::new(TransitionRow {
                b,
                rates,
                total: kingman,
            }));
        }
        let row = self.cached_row(b)?;
        let mut prefix = row.prefix.lock().expect("row prefix poisoned");
        while prefix.next_k() <= b {
            let k = prefix.next_k();
            let rate = self.lambda1_row_rate(b, k);
            prefix.push(rate);
        }
        let mut rates = prefix.rates.clone();
        drop(prefix);
        rates[0] += kingman;
        let mut total = CompensatedSum::new();
        for r in &rates {
            total.add(*r);
        }
        Ok(Arc::new(TransitionRow {
            b,
            rates,
            total: total.value(),
        }))
    }
}

/// Result of the Ψ₁(q)/q^{3/2} grid evaluation.
#[derive(Debug, Clone)]
pub struct GrowthEstimate {
    /// Value at the largest grid point.
    pub estimate: f64,
    /// Last two successive differences along the grid (newest first).
    pub last_diffs: [f64; 2],
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

fn atom_power(y: f64, b: u32, k: u32) -> f64 {
    if y >= 1.0 {
        return if k == b { 1.0 } else { 0.0 };
    }
    ((k as f64 - 2.0) * y.ln() + (b - k) as f64 * (-y).ln_1p()).exp()
}

struct CachedRow {
    #[allow(dead_code)]
    b: u32,
    lambda1_total: f64,
    prefix: Mutex<RowPrefix>,
}

/// Lazily extended per-k rates with a compensated running cumulative.
struct RowPrefix {
    rates: Vec<f64>,
    cum: Vec<f64>,
    cum_sum: CompensatedSum,
}

impl RowPrefix {
    fn new() -> Self {
        Self {
            rates: Vec::new(),
            cum: Vec::new(),
            cum_sum: CompensatedSum::new(),
        }
    }

    fn next_k(&self) -> u32 {
        self.rates.len() as u32 + 2
    }

    fn push(&mut self, rate: f64) {
        self.rates.push(rate);
        self.cum_sum.add(rate);
        self.cum.push(self.cum_sum.value());
    }

    /// Smallest k with cumulative ≥ target among materialized entries.
    fn lookup(&self, target: f64) -> Option<u32> {
        if self.cum.last().copied().unwrap_or(0.0) < target {
            return None;
        }
        let idx = self.cum.partition_point(|&c| c < target);
        Some(idx as u32 + 2)
    }

    fn last_nonzero_k(&self) -> Option<u32> {
        self.rates
            .iter()
            .rposition(|&r| r > 0.0)
            .map(|i| i as u32 + 2)
    }
}

/// Sharded LRU keyed by block count. Eviction order is approximate across
/// shards but exact within one; values are pure functions of (measure, b),
/// so eviction can never change an observed value.
struct ShardedLru {
    shards: Vec<Mutex<LruShard>>,
    per_shard_capacity: usize,
}

struct LruShard {
    map: std::collections::HashMap<u32, (u64, Arc<CachedRow>)>,
    tick: u64,
}

impl ShardedLru {
    fn new(capacity: usize) -> Self {
        let per_shard_capacity = (capacity / ROW_CACHE_SHARDS).max(4);
        Self {
            shards: (0..ROW_CACHE_SHARDS)
                .map(|_| {
                    Mutex::new(LruShard {
                        map: std::collections::HashMap::new(),
                        tick: 0,
                    })
                })
                .collect(),
            per_shard_capacity,
        }
    }

    fn shard(&self, b: u32) -> &Mutex<LruShard> {
        &self.shards[(b as usize) % ROW_CACHE_SHARDS]
    }

    fn get(&self, b: u32) -> Option<Arc<CachedRow>> {
        let mut shard = self.shard(b).lock().expect("row cache poisoned");
        shard.tick += 1;
        let tick = shard.tick;
        shard.map.get_mut(&b).map(|entry| {
            entry.0 = tick;
            entry.1.clone()
        })
    }

    /// Insert (or return the already-present row for) `b`, evicting the
    /// stalest tenth of the shard on overflow.
    fn insert(&self, b: u32, row: Arc<CachedRow>) -> Arc<CachedRow> {
        let mut shard = self.shard(b).lock().expect("row cache poisoned");
        shard.tick += 1;
        let tick = shard.tick;
        if let Some(existing) = shard.map.get_mut(&b) {
            existing.0 = tick;
            return existing.1.clone();
        }
        if shard.map.len() >= self.per_shard_capacity {
            let mut ticks: Vec<(u64, u32)> = shard.map.iter().map(|(k, v)| (v.0, *k)).collect();
            ticks.sort_unstable();
            let evict = (self.per_shard_capacity / 10).max(1);
            for &(_, key) in ticks.iter().take(evict) {
                shard.map.remove(&key);
            }
        }
        shard.map.insert(b, (tick, row.clone()));
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::DrivingMeasure;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn atom(c: f64, y: f64) -> RateFunctional {
        RateFunctional::new(DrivingMeasure::kingman_with_atom(c, y).unwrap())
    }

    #[test]
    fn pure_kingman_psi_is_quadratic() {
        let rf = RateFunctional::new(DrivingMeasure::pure_kingman());
        assert_relative_eq!(rf.psi(3.0).unwrap(), 3.0);
        assert_relative_eq!(rf.psi(1.0).unwrap(), 0.0);
        assert!(rf.psi(0.5).is_err());
    }

    #[test]
    fn atom_at_one_psi_value() {
        // integrand at y = 1 is q − 1
        let rf = atom(0.5, 1.0);
        assert_relative_eq!(rf.psi(2.0).unwrap(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn psi_star_values() {
        let rf = RateFunctional::new(DrivingMeasure::pure_kingman());
        assert_relative_eq!(rf.psi_star(2.0).unwrap(), 2.0);
        assert_relative_eq!(rf.psi_star(0.0).unwrap(), 0.0);
        // 0.5·(1/2) + 0.5·e^{−1} at q = 1, atom at 1
        let rf = atom(0.5, 1.0);
        let expected = 0.25 + 0.5 * (-1.0f64).exp();
        assert_relative_eq!(rf.psi_star(1.0).unwrap(), expected, max_relative = 1e-13);
    }

    #[test]
    fn lambda_bk_pure_kingman() {
        let rf = RateFunctional::new(DrivingMeasure::pure_kingman());
        assert_relative_eq!(rf.lambda_bk(10, 2).unwrap(), 1.0);
        assert_eq!(rf.lambda_bk(10, 3).unwrap(), 0.0);
    }

    #[test]
    fn lambda_bk_atom_half() {
        // 0.5·(0.5¹·0.5¹) = 0.125 at b = 4, k = 3
        let rf = atom(0.5, 0.5);
        assert_relative_eq!(rf.lambda_bk(4, 3).unwrap(), 0.125, max_relative = 1e-13);
    }

    #[test]
    fn lambda_bk_uniform_beta_closed_form() {
        // 0.5·B(3,2)/B(1,1) = 0.5/12 at b = 5, k = 4
        let rf =
            RateFunctional::new(DrivingMeasure::kingman_with_beta(0.5, 1.0, 1.0).unwrap());
        assert_relative_eq!(
            rf.lambda_bk(5, 4).unwrap(),
            0.5 / 12.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn transition_row_pure_kingman() {
        let rf = RateFunctional::new(DrivingMeasure::pure_kingman());
        let row = rf.transition_row(4).unwrap();
        assert_relative_eq!(row.rate(2), 6.0);
        assert_eq!(row.rate(3), 0.0);
        assert_eq!(row.rate(4), 0.0);
        assert_relative_eq!(row.total, 6.0);
    }

    #[test]
    fn transition_row_atom_at_one() {
        // atom at 1 contributes only at k = b
        let rf = atom(0.5, 1.0);
        let row = rf.transition_row(3).unwrap();
        assert_relative_eq!(row.rate(2), 1.5, max_relative = 1e-13);
        assert_relative_eq!(row.rate(3), 0.5, max_relative = 1e-13);
        assert_relative_eq!(row.total, 2.0, max_relative = 1e-13);
    }

    #[test]
    fn row_total_matches_analytic_total() {
        for m in [
            DrivingMeasure::kingman_with_atom(0.5, 0.6).unwrap(),
            DrivingMeasure::kingman_with_beta(0.5, 1.0, 1.0).unwrap(),
            DrivingMeasure::kingman_with_beta(0.5, 0.5, 1.5).unwrap(),
        ] {
            let rf = RateFunctional::new(m);
            for b in [2u32, 5, 17, 60] {
                let row = rf.transition_row(b).unwrap();
                let analytic = rf.total_rate(b).unwrap();
                assert_relative_eq!(row.total, analytic, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn mean_decrement_identity_small_grid() {
        let measures = [
            DrivingMeasure::pure_kingman(),
            DrivingMeasure::kingman_with_atom(0.5, 0.6).unwrap(),
            DrivingMeasure::kingman_with_beta(0.5, 1.0, 1.0).unwrap(),
            DrivingMeasure::kingman_with_beta(0.5, 0.5, 1.5).unwrap(),
        ];
        for m in measures {
            let rf = RateFunctional::new(m);
            for b in [2u32, 3, 10, 50] {
                let row = rf.transition_row(b).unwrap();
                let psi = rf.psi(b as f64).unwrap();
                assert_relative_eq!(row.mean_decrement(), psi, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn sample_merge_size_matches_row_cdf() {
        let rf = atom(0.5, 0.6);
        let b = 12;
        let row = rf.transition_row(b).unwrap();
        // walk u through each k's cumulative band and check agreement
        let mut cum = 0.0;
        for k in 2..=b {
            let r = row.rate(k);
            if r <= 0.0 {
                continue;
            }
            let u = (cum + 0.5 * r) / row.total;
            assert_eq!(rf.sample_merge_size(b, u).unwrap(), k, "k = {k}");
            cum += r;
        }
    }

    #[test]
    fn psi1_over_q32_decays_for_interior_atom() {
        // atom away from 0 gives Ψ₁(q) = O(q), so the ratio decays ~ q^{−1/2}
        let rf = atom(0.5, 0.6);
        let v4 = rf.psi1_over_q32(1e4).unwrap();
        let v5 = rf.psi1_over_q32(1e5).unwrap();
        let v6 = rf.psi1_over_q32(1e6).unwrap();
        assert!(v4 > v5 && v5 > v6);
        // Ψ₁(q) = (0.6q − 1 + 0.4^q)/0.36 ⇒ ratio at q = 1e6 is 1.667e-3
        assert_relative_eq!(v6, (0.6e6 - 1.0) / 0.36 / 1e9, max_relative = 1e-10);
        assert_relative_eq!(v5 / v4, (0.1f64).sqrt(), max_relative = 0.02);
    }

    #[test]
    fn psi1_over_q32_stabilizes_for_critical_beta() {
        // Beta(0.5, 1.5): Ψ₁(q)/q^{3/2} → 8/(3√π)
        let rf =
            RateFunctional::new(DrivingMeasure::kingman_with_beta(0.5, 0.5, 1.5).unwrap());
        let est = rf.psi1_over_q32_limit(1e8, 7).unwrap();
        let expected = 8.0 / (3.0 * std::f64::consts::PI.sqrt());
        assert_relative_eq!(est.estimate, expected, max_relative = 1e-3);
        assert!(est.last_diffs[0].abs() < est.last_diffs[1].abs());
    }

    #[test]
    fn psi_matches_independent_quadrature_at_large_q() {
        // independent oracle: adaptive Simpson in the u = √y variable at
        // 10x finer tolerance, with an explicit Taylor switch in the kernel
        let rf =
            RateFunctional::new(DrivingMeasure::kingman_with_beta(0.5, 0.5, 1.5).unwrap());
        let q = 1e4;
        let b_norm = ln_beta(0.5, 1.5).exp();
        // y = u², density y^{-1/2}(1-y)^{1/2}/B → integrand 2(1-u²)^{1/2}/B
        let f = |u: f64| reference_kernel(q, u * u) * 2.0 * (1.0 - u * u).sqrt() / b_norm;
        let oracle = 0.5 * adaptive_simpson(&f, 0.0, 1.0, 1e-9, 48);
        let got = 0.5 * rf.psi1(q).unwrap();
        assert_relative_eq!(got, oracle, max_relative = 1e-8);
    }

    #[test]
    fn psi1_double_integral_representation_agrees() {
        // Ψ₁(q) = q(q−1)·∫∫∫_{r<u} (1−ry)^{q−2} dr du Λ₁(dy); inner double
        // integral evaluated by nested Simpson, independent of the main path
        let measures = [
            DrivingMeasure::kingman_with_atom(0.5, 0.6).unwrap(),
            DrivingMeasure::kingman_with_beta(0.5, 2.0, 2.0).unwrap(),
        ];
        for m in measures {
            let rf = RateFunctional::new(m.clone());
            for &q in &[2.5f64, 7.0, 40.0] {
                let inner = |y: f64| {
                    let f = |u: f64| {
                        let g = |r: f64| (1.0 - r * y).powf(q - 2.0);
                        adaptive_simpson(&g, 0.0, u, 1e-9, 40)
                    };
                    adaptive_simpson(&f, 0.0, 1.0, 1e-8, 40)
                };
                let alt = q * (q - 1.0) * m.integrate_lambda1(inner).unwrap();
                assert_relative_eq!(rf.psi1(q).unwrap(), alt, max_relative = 1e-6);
            }
        }
    }

    /// Direct kernel evaluation for test oracles: explicit 6-term Taylor
    /// form below qy = 0.05, plain arithmetic above.
    fn reference_kernel(q: f64, y: f64) -> f64 {
        if y == 0.0 {
            return 0.5 * q * (q - 1.0);
        }
        if q * y < 0.05 {
            let c0 = 0.5 * q * (q - 1.0);
            let t1 = -(q - 2.0) * y / 3.0;
            let t2 = (q - 2.0) * (q - 3.0) * y * y / 12.0;
            let t3 = -(q - 2.0) * (q - 3.0) * (q - 4.0) * y * y * y / 60.0;
            let t4 = (q - 2.0) * (q - 3.0) * (q - 4.0) * (q - 5.0) * y.powi(4) / 360.0;
            let t5 =
                -(q - 2.0) * (q - 3.0) * (q - 4.0) * (q - 5.0) * (q - 6.0) * y.powi(5) / 2520.0;
            c0 * (1.0 + t1 + t2 + t3 + t4 + t5)
        } else {
            (q * y - 1.0 + (1.0 - y).powf(q)) / (y * y)
        }
    }

    fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, m: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
        }
        fn recurse<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            m: f64,
            b: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let left = simpson(f, a, lm, m);
            let right = simpson(f, m, rm, b);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            recurse(f, a, lm, m, left, 0.5 * tol, depth - 1)
                + recurse(f, m, rm, b, right, 0.5 * tol, depth - 1)
        }
        let m = 0.5 * (a + b);
        let whole = simpson(f, a, m, b);
        recurse(f, a, m, b, whole, tol * whole.abs().max(1e-300), depth)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn psi_monotone_and_superlinear(c in 0.1f64..1.0, y in 0.05f64..=1.0,
                                        q in 1.0f64..500.0, dq in 0.1f64..100.0) {
            let m = if c >= 0.999 {
                DrivingMeasure::pure_kingman()
            } else {
                DrivingMeasure::kingman_with_atom(c, y).unwrap()
            };
            let rf = RateFunctional::new(m);
            let p1 = rf.psi(q).unwrap();
            let p2 = rf.psi(q + dq).unwrap();
            prop_assert!(p2 > p1, "psi not increasing: {p1} vs {p2}");
            // q ↦ Ψ(q)/q nondecreasing
            prop_assert!(p2 / (q + dq) >= p1 / q - 1e-12);
        }

        #[test]
        fn sandwich_bound_holds(c in 0.1f64..1.0, y in 0.05f64..=1.0, q in 1.0f64..1e5) {
            let m = if c >= 0.999 {
                DrivingMeasure::pure_kingman()
            } else {
                DrivingMeasure::kingman_with_atom(c, y).unwrap()
            };
            let rf = RateFunctional::new(m);
            let psi = rf.psi(q).unwrap();
            let star = rf.psi_star(q).unwrap();
            prop_assert!(star >= psi - 1e-9 * psi.abs());
            prop_assert!(star - psi <= 0.5 * q * (1.0 + 1e-12));
        }

        #[test]
        fn mean_decrement_identity_random_measure(c in 0.2f64..0.9, y in 0.05f64..=1.0,
                                                  b in 2u32..80) {
            let rf = atom(c, y);
            let row = rf.transition_row(b).unwrap();
            let psi = rf.psi(b as f64).unwrap();
            prop_assert!((row.mean_decrement() - psi).abs() <= 1e-8 * psi.abs().max(1e-12));
        }
    }
}
