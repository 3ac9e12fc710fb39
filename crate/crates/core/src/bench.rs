//! Wall-clock comparison of block-extended assimilation against a full refit.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::KrigingError;
use crate::kernels::{Kernel, KernelFamily, Point};
use crate::kriging::{KrigingState, UpdateBatch};
use crate::verify::scaled_error;

pub const CSV_HEADER: [&str; 5] = ["n", "k", "update_time_s", "refit_time_s", "speedup"];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub kernel: Kernel,
    pub jitter: f64,
    pub dim: usize,
    /// Query points used for the agreement pre-check.
    pub check_queries: usize,
    pub check_tolerance: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_values: vec![0, 100, 500, 2000],
            k_values: vec![1, 10],
            trials: 5,
            seed: 0,
            kernel: Kernel::squared_exponential(1.0, 0.3).expect("valid kernel"),
            jitter: 1e-10,
            dim: 3,
            check_queries: 10,
            check_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub update_time_s: f64,
    pub refit_time_s: f64,
    pub speedup: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Kriging(#[from] KrigingError),
    #[error("update and refit disagree at n={n}, k={k}: error {error:e} > {tolerance:e}")]
    Disagreement { n: usize, k: usize, error: f64, tolerance: f64 },
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len().is_multiple_of(2) {
        0.5 * (xs[m - 1] + xs[m])
    } else {
        xs[m]
    }
}

/// Smooth response surface for the synthetic observations.
fn response(x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(i, v)| ((i + 1) as f64 * 3.0 * v).sin()).sum()
}

fn design(rng: &mut ChaCha8Rng, family: KernelFamily, m: usize, d: usize) -> Vec<Point> {
    (0..m)
        .map(|_| {
            let c = (0..d)
                .map(|_| match family {
                    KernelFamily::Brownian => 1.0 - rng.random::<f64>(),
                    _ => rng.random::<f64>(),
                })
                .collect();
            Point::new(c).expect("finite")
        })
        .collect()
}

/// Times one `(n, k)` cell: the old state is fitted untimed, then
/// `assimilate` and a fresh `fit` on all `n + k` points are each run once
/// as warm-up and `trials` times for the median.
pub fn bench_cell(
    cfg: &BenchConfig,
    n: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<BenchRow, BenchError> {
    if k == 0 {
        return Err(KrigingError::InvalidArgument("k must be at least 1".into()).into());
    }
    let family = cfg.kernel.family();
    let dim = if family == KernelFamily::Brownian { 1 } else { cfg.dim };
    let old_points = design(rng, family, n, dim);
    let new_points = design(rng, family, k, dim);
    let old_values: Vec<f64> = old_points.iter().map(|p| response(p.coords())).collect();
    let new_values: Vec<f64> = new_points.iter().map(|p| response(p.coords())).collect();
    let mut all_points = old_points.clone();
    all_points.extend_from_slice(&new_points);
    let mut all_values = old_values.clone();
    all_values.extend_from_slice(&new_values);

    let state = KrigingState::fit(cfg.kernel, old_points, old_values, cfg.jitter)?;
    let batch = UpdateBatch::new(new_points, new_values)?;

    let updated = state.assimilate(&batch)?;
    let refit = KrigingState::fit(cfg.kernel, all_points.clone(), all_values.clone(), cfg.jitter)?;
    let mut error = 0.0f64;
    for q in design(rng, family, cfg.check_queries, dim) {
        let (a, b) = (updated.predict(&q)?, refit.predict(&q)?);
        let mean_scale = cfg.kernel.variance().sqrt();
        for e in [
            scaled_error(a.mean, b.mean, mean_scale),
            scaled_error(a.variance, b.variance, cfg.kernel.variance()),
        ] {
            error = if e.is_nan() { f64::INFINITY } else { error.max(e) };
        }
    }
    if error > cfg.check_tolerance {
        return Err(BenchError::Disagreement { n, k, error, tolerance: cfg.check_tolerance });
    }

    let mut update_times = Vec::with_capacity(cfg.trials);
    let mut refit_times = Vec::with_capacity(cfg.trials);
    for trial in 0..=cfg.trials {
        let t = Instant::now();
        let s = state.assimilate(&batch)?;
        let dt_update = t.elapsed().as_secs_f64();
        drop(s);
        let t = Instant::now();
        let s = KrigingState::fit(cfg.kernel, all_points.clone(), all_values.clone(), cfg.jitter)?;
        let dt_refit = t.elapsed().as_secs_f64();
        drop(s);
        if trial > 0 {
            update_times.push(dt_update);
            refit_times.push(dt_refit);
        }
    }
    let update_time_s = median(update_times);
    let refit_time_s = median(refit_times);
    Ok(BenchRow { n, k, update_time_s, refit_time_s, speedup: refit_time_s / update_time_s })
}

/// Runs every `(n, k)` cell in grid order. Stops at the first cell whose
/// pre-check fails, so no timings are reported for disagreeing paths.
pub fn run(cfg: &BenchConfig) -> std::result::Result<Vec<BenchRow>, BenchError> {
    if cfg.trials == 0 {
        return Err(KrigingError::InvalidArgument("trials must be at least 1".into()).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        for &k in &cfg.k_values {
            rows.push(bench_cell(cfg, n, k, &mut rng)?);
        }
    }
    Ok(rows)
}
