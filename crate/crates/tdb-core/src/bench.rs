//! Wall-clock scaling measurements: one evolution step versus one full
//! HOSVD on random cubic data, and log-log slope estimation.

use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::evolve::{step, Integrator, StepOptions};
use crate::hosvd::hosvd_truncate;
use crate::tensor::{DenseTensor, ModeWeights, MultiRank};

/// Timings for one cubic problem size.
#[derive(Debug, Clone)]
pub struct BenchPoint {
    /// Grid points per axis.
    pub n: usize,
    /// Total data size S = n^3.
    pub total_size: f64,
    /// Median seconds for one evolution step (projection, basis RHS,
    /// integration).
    pub tdb_step_secs: f64,
    /// Median seconds for one full truncated HOSVD.
    pub hosvd_secs: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Time one evolution step and one HOSVD at each size, `trials` repetitions,
/// on random data with the given per-mode rank.
pub fn bench_sizes(
    sizes: &[usize],
    rank: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<BenchPoint>> {
    let trials = trials.max(1);
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let dims = [n, n, n];
        let mut rng = StdRng::seed_from_u64(seed ^ n as u64);
        let v = DenseTensor::from_fn(&dims, |_| rng.random_range(-1.0..1.0));
        let vdot = DenseTensor::from_fn(&dims, |_| rng.random_range(-1.0..1.0));
        let w = ModeWeights::unit(&dims);
        let ranks = MultiRank::new(vec![rank.min(n); 3], &dims)?;
        let state = hosvd_truncate(&v, &w, &ranks, 0.0)?;
        let opts = StepOptions::default();

        let mut tdb_times = Vec::with_capacity(trials);
        let mut hosvd_times = Vec::with_capacity(trials);
        for _ in 0..trials {
            let mut source = |_t: f64| Ok(vdot.clone());
            let t0 = Instant::now();
            let next = step(&state, &mut source, 1e-3, Integrator::Euler, &opts)?;
            tdb_times.push(t0.elapsed().as_secs_f64());
            std::hint::black_box(&next);

            let t0 = Instant::now();
            let h = hosvd_truncate(&v, &w, &ranks, 0.0)?;
            hosvd_times.push(t0.elapsed().as_secs_f64());
            std::hint::black_box(&h);
        }
        out.push(BenchPoint {
            n,
            total_size: (n * n * n) as f64,
            tdb_step_secs: median(tdb_times),
            hosvd_secs: median(hosvd_times),
        });
    }
    Ok(out)
}

/// Least-squares slope of ln(y) against ln(x).
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let m = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let xbar = lx.iter().sum::<f64>() / m;
    let ybar = ly.iter().sum::<f64>() / m;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - xbar) * (y - ybar);
        den += (x - xbar) * (x - xbar);
    }
    num / den
}
