use std::sync::Arc;
use std::time::Instant;
use coalfluct::measure::DrivingMeasure;
use coalfluct::rates::RateFunctional;
use coalfluct::speed::{SpeedFunction, SpeedVariant};

fn main() {
    // 1. Beta(1,1): finite-eps drift of X^w at eps = 1e-3
    let m = DrivingMeasure::kingman_with_beta(0.5, 1.0, 1.0).unwrap();
    let rf = Arc::new(RateFunctional::new(m));
    let sf = SpeedFunction::new(rf.clone(), SpeedVariant::V);
    for &eps in &[1e-3f64, 1e-4, 1e-5] {
        let dr = sf.drift_ratio(eps).unwrap();
        let sigma = (0.5f64 / 6.0).sqrt();
        let delta = dr.abs() / sigma;
        let d = 2.0 * (statrs_cdf(delta / 2.0) - 0.5);
        let n: f64 = 2000.0;
        let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
        println!("Beta(1,1) eps={eps:.0e}: drift_ratio={dr:.5} shift={delta:.4}σ KS D≈{d:.4} λ≈{lambda:.2} -> p≈{:.3e}", coalfluct::stats::kolmogorov_sf(lambda));
    }

    // 2. Beta(0.5,1.5): drift ratio at 1e-3 vs the limit constant
    let m = DrivingMeasure::kingman_with_beta(0.5, 0.5, 1.5).unwrap();
    let rf2 = Arc::new(RateFunctional::new(m));
    let sf2 = SpeedFunction::new(rf2.clone(), SpeedVariant::V);
    let a = rf2.psi1_over_q32_limit(1e8, 7).unwrap().estimate;
    let c: f64 = 0.5;
    let target = -(2.0 * 2.0f64.sqrt()) / (3.0 * c.sqrt()) * (1.0 - c) * a;
    println!("\nBeta(0.5,1.5): A = {a:.6}, drift target = {target:.6}");
    for &t in &[1e-2f64, 1e-3, 1e-4, 1e-5] {
        let dr = sf2.drift_ratio(t).unwrap();
        println!("  drift_ratio({t:.0e}) = {dr:.6}  dev from target = {:+.6}", dr - target);
    }
    let gap = sf2.drift_ratio(1e-3).unwrap() - target;
    let sigma = (0.5f64/6.0).sqrt();
    for &reps in &[400usize, 800, 2000] {
        let se = sigma / (reps as f64).sqrt();
        println!("  reps={reps}: gap/SE = {:.2}", gap.abs() / se);
    }

    // 3. Timing: one atom-0.6 replicate from n0 = 1e5 to t = 1e-3
    let m = DrivingMeasure::kingman_with_atom(0.5, 0.6).unwrap();
    let rf3 = Arc::new(RateFunctional::new(m));
    let start = Instant::now();
    let counts = coalfluct::sim::chain_marginals(&rf3, 100_000, &[5e-4, 1e-3], 1e-3, 7, 0).unwrap();
    println!("\natom replicate: counts {:?} in {:?}", counts, start.elapsed());
    let start = Instant::now();
    let n_rep = 50;
    for r in 0..n_rep {
        let _ = coalfluct::sim::chain_marginals(&rf3, 100_000, &[5e-4, 1e-3], 1e-3, 7, r).unwrap();
    }
    println!("{} replicates in {:?} (warm cache)", n_rep, start.elapsed());
}

fn statrs_cdf(x: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}
