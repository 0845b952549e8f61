//! Exact stochastic simulation of the block-counting process.
//!
//! Three interchangeable backends realize the same count-level law:
//!
//! * `Chain` — a continuous-time Markov chain on counts driven by the
//!   transition rows of a [`RateFunctional`]; the workhorse for large
//!   initial counts.
//! * `PaintboxOracle` — pairwise merges at the Kingman rate plus, per
//!   Λ₁ atom (y, w), coloring events at rate (w/y²)·P(Bin(b, y) ≥ 2)
//!   whose merge size is a Binomial(b, y) conditioned to be at least 2.
//!   Independent implementation path, used as a distributional oracle.
//! * `simulate_partition_oracle` — an explicit partition of {1..n} whose
//!   merges pick uniform k-subsets of blocks; exercises the combinatorial
//!   factor C(b, k) separately from count-level aggregation.
//!
//! Replicates draw from counter-based ChaCha streams keyed by
//! (seed, stream index), so parallel runs are reproducible and
//! order-independent. Event times accumulate in plain f64; with at most
//! ~1e7 events per path the accumulated rounding stays far below
//! statistical resolution.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::DrivingMeasure;
use crate::rates::{RateError, RateFunctional};
use crate::util::{ln_choose, prob_two_or_more};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("argument out of domain: {what}")]
    Domain { what: String },
    #[error("unsupported measure for this backend: {what}")]
    UnsupportedMeasure { what: String },
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Chain,
    PaintboxOracle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n0: u32,
    pub t_end: f64,
    pub backend: Backend,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEvent {
    pub time: f64,
    pub count: u32,
}

/// Event-time record of the nonincreasing block-counting process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCountPath {
    pub initial_n: u32,
    pub seed: u64,
    pub stream: u64,
    events: Vec<PathEvent>,
}

impl BlockCountPath {
    fn push(&mut self, time: f64, count: u32) {
        debug_assert!(self
            .events
            .last()
            .map(|e| time > e.time && count < e.count)
            .unwrap_or(count < self.initial_n));
        self.events.push(PathEvent { time, count });
    }

    pub fn events(&self) -> &[PathEvent] {
        &self.events
    }

    /// N_t, evaluated right-continuously.
    pub fn count_at(&self, t: f64) -> u32 {
        let idx = self.events.partition_point(|e| e.time <= t);
        if idx == 0 {
            self.initial_n
        } else {
            self.events[idx - 1].count
        }
    }

    pub fn final_count(&self) -> u32 {
        self.events.last().map(|e| e.count).unwrap_or(self.initial_n)
    }

    /// CSV dump with header `time,count`, one row per event.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,count")?;
        for e in &self.events {
            writeln!(w, "{:.16e},{}", e.time, e.count)?;
        }
        Ok(())
    }

    /// Sidecar metadata describing how the path was produced.
    pub fn metadata_json(&self, measure: &DrivingMeasure, cfg: &SimConfig) -> serde_json::Value {
        serde_json::json!({
            "measure": measure.to_config(),
            "config": cfg,
            "events": self.events.len(),
            "final_count": self.final_count(),
        })
    }
}

/// Counter-based per-replicate stream: ChaCha8 keyed by the master seed
/// with the replicate index as the stream counter.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn simulate(rf: &RateFunctional, cfg: &SimConfig) -> Result<BlockCountPath, SimError> {
    match cfg.backend {
        Backend::Chain => simulate_chain(rf, cfg),
        Backend::PaintboxOracle => simulate_paintbox_oracle(rf, cfg),
    }
}

/// Count-level CTMC: waiting times are exponential in the row total and
/// the merge size is drawn by inverse CDF over the row's compensated
/// cumulative rates.
pub fn simulate_chain(rf: &RateFunctional, cfg: &SimConfig) -> Result<BlockCountPath, SimError> {
    check_config(cfg)?;
    let mut rng = replicate_rng(cfg.seed, cfg.stream);
    let mut path = BlockCountPath {
        initial_n: cfg.n0,
        seed: cfg.seed,
        stream: cfg.stream,
        events: Vec::new(),
    };
    run_chain(rf, cfg.n0, cfg.t_end, &mut rng, |t, b| path.push(t, b))?;
    Ok(path)
}

/// Block counts of the chain at the given (ascending) query times, without
/// materializing the event list. Shares the event loop with
/// [`simulate_chain`].
pub fn chain_marginals(
    rf: &RateFunctional,
    n0: u32,
    query_times: &[f64],
    t_end: f64,
    seed: u64,
    stream: u64,
) -> Result<Vec<u32>, SimError> {
    debug_assert!(query_times.windows(2).all(|w| w[0] <= w[1]));
    let mut rng = replicate_rng(seed, stream);
    let mut counts = vec![1u32; query_times.len()];
    let mut qi = 0usize;
    let mut current = n0;
    run_chain(rf, n0, t_end, &mut rng, |t, b| {
        while qi < query_times.len() && query_times[qi] < t {
            counts[qi] = current;
            qi += 1;
        }
        current = b;
    })?;
    for slot in counts.iter_mut().skip(qi) {
        *slot = current;
    }
    Ok(counts)
}

fn run_chain<R: Rng, F: FnMut(f64, u32)>(
    rf: &RateFunctional,
    n0: u32,
    t_end: f64,
    rng: &mut R,
    mut on_event: F,
) -> Result<(), SimError> {
    let pure_kingman = rf.measure().is_pure_kingman();
    let mut b = n0;
    let mut t = 0.0f64;
    while b >= 2 {
        let total = rf.total_rate(b)?;
        let dt: f64 = rng.sample(Exp1);
        t += dt / total;
        if t > t_end {
            break;
        }
        let k = if pure_kingman {
            2
        } else {
            let u: f64 = rng.gen();
            rf.sample_merge_size(b, u)?
        };
        b -= k - 1;
        on_event(t, b);
    }
    Ok(())
}

const PAINTBOX_MAX_N0: u32 = 1000;

/// Paintbox construction for measures whose Λ₁ part is purely atomic.
pub fn simulate_paintbox_oracle(
    rf: &RateFunctional,
    cfg: &SimConfig,
) -> Result<BlockCountPath, SimError> {
    check_config(cfg)?;
    let measure = rf.measure();
    if measure.has_beta_components() {
        return Err(SimError::UnsupportedMeasure {
            what: "paintbox oracle supports atom-only measures".into(),
        });
    }
    if cfg.n0 > PAINTBOX_MAX_N0 {
        return Err(SimError::Domain {
            what: format!("paintbox oracle limited to n0 <= {PAINTBOX_MAX_N0}, got {}", cfg.n0),
        });
    }
    let c = measure.kingman_mass();
    let atoms = measure.atoms().to_vec();
    let mut rng = replicate_rng(cfg.seed, cfg.stream);
    let mut path = BlockCountPath {
        initial_n: cfg.n0,
        seed: cfg.seed,
        stream: cfg.stream,
        events: Vec::new(),
    };
    let mut b = cfg.n0;
    let mut t = 0.0f64;
    let mut atom_rates = vec![0.0f64; atoms.len()];
    while b >= 2 {
        let kingman = 0.5 * c * b as f64 * (b as f64 - 1.0);
        let mut total = kingman;
        for (i, a) in atoms.iter().enumerate() {
            let p2 = prob_two_or_more(b as u64, a.location);
            atom_rates[i] = a.weight / (a.location * a.location) * p2;
            total += atom_rates[i];
        }
        let dt: f64 = rng.sample(Exp1);
        t += dt / total;
        if t > cfg.t_end {
            break;
        }
        let u: f64 = rng.gen::<f64>() * total;
        let merged = if u <= kingman {
            2
        } else {
            let mut target = u - kingman;
            let mut chosen = atoms.len() - 1;
            for (i, &r) in atom_rates.iter().enumerate() {
                if target <= r {
                    chosen = i;
                    break;
                }
                target -= r;
            }
            let y = atoms[chosen].location;
            let p2 = prob_two_or_more(b as u64, y);
            sample_binomial_at_least_two(b, y, p2, &mut rng)
        };
        b -= merged - 1;
        path.push(t, b);
    }
    Ok(path)
}

/// Binomial(b, y) conditioned on being ≥ 2: plain rejection when the
/// conditioning event has probability ≥ 0.1 (at most 10 expected retries),
/// inverse CDF on the conditioned law otherwise.
fn sample_binomial_at_least_two<R: Rng>(b: u32, y: f64, p2: f64, rng: &mut R) -> u32 {
    if p2 >= 0.1 {
        let dist = Binomial::new(b as u64, y).expect("valid binomial");
        loop {
            let xi = dist.sample(rng);
            if xi >= 2 {
                return xi as u32;
            }
        }
    }
    let target = rng.gen::<f64>() * p2;
    let mut j = 2u32;
    let mut pmf = (ln_choose(b as u64, 2) + 2.0 * y.ln() + (b as f64 - 2.0) * (-y).ln_1p()).exp();
    let mut cum = pmf;
    while cum < target && j < b {
        pmf *= (b - j) as f64 / (j + 1) as f64 * (y / (1.0 - y));
        j += 1;
        cum += pmf;
    }
    j
}

const PARTITION_MAX_N: u32 = 50;

/// Explicit partition-valued oracle for n ≤ 50: draws the merge size from
/// the transition row, then merges a uniformly random k-subset of blocks.
pub fn simulate_partition_oracle(
    rf: &RateFunctional,
    n: u32,
    t_end: f64,
    seed: u64,
    stream: u64,
) -> Result<BlockCountPath, SimError> {
    if n > PARTITION_MAX_N {
        return Err(SimError::Domain {
            what: format!("partition oracle limited to n <= {PARTITION_MAX_N}, got {n}"),
        });
    }
    if n < 2 || !(t_end > 0.0) {
        return Err(SimError::Domain {
            what: format!("partition oracle requires n >= 2 and t_end > 0, got n = {n}, t_end = {t_end}"),
        });
    }
    let mut rng = replicate_rng(seed, stream);
    let mut blocks: Vec<Vec<u32>> = (1..=n).map(|i| vec![i]).collect();
    let mut path = BlockCountPath {
        initial_n: n,
        seed,
        stream,
        events: Vec::new(),
    };
    let mut t = 0.0f64;
    while blocks.len() >= 2 {
        let b = blocks.len() as u32;
        let row = rf.transition_row(b)?;
        let dt: f64 = rng.sample(Exp1);
        t += dt / row.total;
        if t > t_end {
            break;
        }
        let target = rng.gen::<f64>() * row.total;
        let mut k = b;
        let mut cum = 0.0;
        for kk in 2..=b {
            cum += row.rate(kk);
            if target <= cum {
                k = kk;
                break;
            }
        }
        // uniform k-subset by partial Fisher-Yates over block indices
        let mut idx: Vec<usize> = (0..blocks.len()).collect();
        for i in 0..k as usize {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        let mut chosen: Vec<usize> = idx[..k as usize].to_vec();
        chosen.sort_unstable();
        let mut merged = Vec::new();
        for &i in chosen.iter().rev() {
            merged.extend(blocks.swap_remove(i));
        }
        merged.sort_unstable();
        blocks.push(merged);
        path.push(t, blocks.len() as u32);
    }
    Ok(path)
}

fn check_config(cfg: &SimConfig) -> Result<(), SimError> {
    if cfg.n0 < 2 {
        return Err(SimError::Domain {
            what: format!("n0 must be >= 2, got {}", cfg.n0),
        });
    }
    if !(cfg.t_end > 0.0) {
        return Err(SimError::Domain {
            what: format!("t_end must be > 0, got {}", cfg.t_end),
        });
    }
    Ok(())
}
