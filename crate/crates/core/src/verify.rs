//! Seeded randomized checks of the update path against brute-force refits.

use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{KrigingError, Result};
use crate::kernels::{Kernel, KernelFamily, Point};
use crate::kriging::{KrigingState, UpdateBatch};
use crate::oracle;

pub const ORACLE_TOLERANCE: f64 = 1e-8;
pub const WEIGHTS_TOLERANCE: f64 = 1e-9;
pub const TOTAL_VARIANCE_TOLERANCE: f64 = 1e-9;
pub const NAIVE_GAP_TOLERANCE: f64 = 1e-9;
pub const DECORRELATED_TOLERANCE: f64 = 1e-12;
/// "Machine precision" for the single-point collapse, relative to the prior variance.
pub const SINGLE_POINT_TOLERANCE: f64 = 1e-14;

/// `|a - b| / max(|a|, |b|, scale)`: relative for large values, absolute
/// (in units of `scale`) near zero.
pub fn scaled_error(a: f64, b: f64, scale: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs()).max(scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    pub trials: usize,
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub d_values: Vec<usize>,
    pub families: Vec<KernelFamily>,
    pub variance: f64,
    /// `None` picks [`default_lengthscale`] for each dimension.
    pub lengthscale: Option<f64>,
    pub jitter: f64,
    /// Random query points per instance.
    pub queries: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            trials: 5,
            n_values: vec![0, 5, 20],
            k_values: vec![1, 2, 5],
            d_values: vec![1, 3],
            families: vec![KernelFamily::SquaredExponential],
            variance: 1.0,
            lengthscale: None,
            jitter: 1e-10,
            queries: 20,
        }
    }
}

/// One randomized update problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub kernel: Kernel,
    pub old_points: Vec<Point>,
    pub old_values: Vec<f64>,
    pub new_points: Vec<Point>,
    pub new_values: Vec<f64>,
    /// Random queries followed by one new point and (when `n > 0`) one old point.
    pub queries: Vec<Point>,
    pub jitter: f64,
}

impl Instance {
    pub fn all_points(&self) -> Vec<Point> {
        let mut v = self.old_points.clone();
        v.extend_from_slice(&self.new_points);
        v
    }

    pub fn all_values(&self) -> Vec<f64> {
        let mut v = self.old_values.clone();
        v.extend_from_slice(&self.new_values);
        v
    }

    pub fn label(&self) -> String {
        format!(
            "{} d={} n={} k={}",
            self.kernel.family(),
            self.new_points[0].dim(),
            self.old_points.len(),
            self.new_points.len()
        )
    }
}

/// Lengthscale used when none is configured: 0.3 on the unit cube, 0.05 on
/// the unit interval.
pub fn default_lengthscale(d: usize) -> f64 {
    if d == 1 {
        0.05
    } else {
        0.3
    }
}

/// `m` points on the unit interval, one per stratum of width `1/m`, each in
/// the middle half of its stratum and returned in random order. Adjacent
/// points are at least `1/(2m)` apart.
fn stratified_1d(rng: &mut ChaCha8Rng, m: usize) -> Vec<Point> {
    let mut pts: Vec<Point> =
        (0..m).map(|i| Point::scalar((i as f64 + 0.25 + 0.5 * rng.random::<f64>()) / m as f64)).collect();
    pts.shuffle(rng);
    pts
}

fn random_point(rng: &mut ChaCha8Rng, family: KernelFamily, d: usize) -> Point {
    let coords = (0..d)
        .map(|_| match family {
            // (0, 1]: the Wiener covariance vanishes at the origin.
            KernelFamily::Brownian => 1.0 - rng.random::<f64>(),
            _ => rng.random::<f64>(),
        })
        .collect();
    Point::new(coords).expect("finite coordinates")
}

/// The instance grid, in a fixed order. Brownian combinations with `d != 1`
/// are skipped.
///
/// One-dimensional designs are stratified over all `n + k` points, which
/// are then split into old and new; higher-dimensional designs are uniform
/// on the unit cube. Queries are always uniform.
pub fn generate_instances(cfg: &VerifyConfig) -> Result<Vec<Instance>> {
    if cfg.k_values.contains(&0) {
        return Err(KrigingError::InvalidArgument("k must be at least 1".into()));
    }
    if cfg.d_values.contains(&0) {
        return Err(KrigingError::InvalidArgument("d must be at least 1".into()));
    }
    if cfg.families.contains(&KernelFamily::Brownian) && !cfg.d_values.contains(&1) {
        return Err(KrigingError::InvalidKernel("brownian kernel needs d = 1 in the dimension list".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let amplitude = cfg.variance.sqrt();
    for &family in &cfg.families {
        for &d in &cfg.d_values {
            if family == KernelFamily::Brownian && d != 1 {
                continue;
            }
            let lengthscale = cfg.lengthscale.unwrap_or_else(|| default_lengthscale(d));
            let kernel = Kernel::new(family, cfg.variance, lengthscale)?;
            for &n in &cfg.n_values {
                for &k in &cfg.k_values {
                    for _ in 0..cfg.trials {
                        let mut design = if d == 1 {
                            stratified_1d(&mut rng, n + k)
                        } else {
                            (0..n + k).map(|_| random_point(&mut rng, family, d)).collect()
                        };
                        let new_points = design.split_off(n);
                        let old_points = design;
                        let mut queries: Vec<Point> =
                            (0..cfg.queries).map(|_| random_point(&mut rng, family, d)).collect();
                        queries.push(new_points[0].clone());
                        if let Some(p) = old_points.first() {
                            queries.push(p.clone());
                        }
                        let mut vals = |m: usize| -> Vec<f64> {
                            (0..m).map(|_| amplitude * rng.random_range(-2.0..2.0)).collect()
                        };
                        let old_values = vals(n);
                        let new_values = vals(k);
                        out.push(Instance {
                            kernel,
                            old_points,
                            old_values,
                            new_points,
                            new_values,
                            queries,
                            jitter: cfg.jitter,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Largest error seen by one property over all instances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub worst_instance: Option<String>,
}

impl SuiteResult {
    fn new(name: &'static str, tolerance: f64) -> Self {
        SuiteResult { name, cases: 0, max_error: 0.0, tolerance, worst_instance: None }
    }

    fn record(&mut self, err: f64, instance: &Instance) {
        self.cases += 1;
        if err > self.max_error || err.is_nan() {
            self.max_error = if err.is_nan() { f64::INFINITY } else { err };
            self.worst_instance = Some(instance.label());
        }
    }

    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub instances: usize,
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "instances: {}", self.instances);
        for s in &self.suites {
            let _ = writeln!(
                out,
                "{} {:<22} cases={:<6} max_error={:.3e} tolerance={:.0e}{}",
                if s.passed() { "PASS" } else { "FAIL" },
                s.name,
                s.cases,
                s.max_error,
                s.tolerance,
                match (&s.worst_instance, s.passed()) {
                    (Some(w), false) => format!(" worst=[{w}]"),
                    _ => String::new(),
                }
            );
        }
        out
    }
}

/// Every property suite over every instance.
#[derive(Debug)]
pub struct Suites {
    pub oracle_equivalence: SuiteResult,
    pub assimilate_equivalence: SuiteResult,
    pub weights_identity: SuiteResult,
    pub full_weights_slice: SuiteResult,
    pub total_variance: SuiteResult,
    pub variance_decrease: SuiteResult,
    pub naive_gap: SuiteResult,
    pub decorrelated_collapse: SuiteResult,
    pub single_point_collapse: SuiteResult,
}

impl Default for Suites {
    fn default() -> Self {
        Suites {
            oracle_equivalence: SuiteResult::new("oracle_equivalence", ORACLE_TOLERANCE),
            assimilate_equivalence: SuiteResult::new("assimilate_equivalence", ORACLE_TOLERANCE),
            weights_identity: SuiteResult::new("weights_identity", WEIGHTS_TOLERANCE),
            full_weights_slice: SuiteResult::new("full_weights_slice", WEIGHTS_TOLERANCE),
            total_variance: SuiteResult::new("total_variance", TOTAL_VARIANCE_TOLERANCE),
            variance_decrease: SuiteResult::new("variance_decrease", TOTAL_VARIANCE_TOLERANCE),
            naive_gap: SuiteResult::new("naive_gap", NAIVE_GAP_TOLERANCE),
            decorrelated_collapse: SuiteResult::new("decorrelated_collapse", DECORRELATED_TOLERANCE),
            single_point_collapse: SuiteResult::new("single_point_collapse", SINGLE_POINT_TOLERANCE),
        }
    }
}

impl Suites {
    pub fn check(&mut self, inst: &Instance) -> Result<()> {
        let kernel = &inst.kernel;
        let var_scale = kernel.variance();
        let mean_scale = kernel.variance().sqrt();
        let all_points = inst.all_points();
        let all_values = inst.all_values();
        let n = inst.old_points.len();
        let k = inst.new_points.len();

        let state =
            KrigingState::fit(*kernel, inst.old_points.clone(), inst.old_values.clone(), inst.jitter)?;
        let block = state.conditional_block(&inst.new_points)?;
        let batch = UpdateBatch::new(inst.new_points.clone(), inst.new_values.clone())?;
        let updated = state.assimilate(&batch)?;
        let decorrelated = block.decorrelated()?;
        let sigma = block.sigma_new();

        for (qi, x) in inst.queries.iter().enumerate() {
            let y = &inst.queries[(qi + 1) % inst.queries.len()];
            let refit = oracle::refit_predict(kernel, &all_points, &all_values, x, Some(y), inst.jitter)?;
            let refit_cov = refit.covariance.expect("pair requested");
            let refit_var = refit.variance.max(0.0);

            // Update formulas vs refit.
            let mean = block.update_mean(&batch, x)?;
            let variance = block.update_variance_corrected(x)?;
            let cov = block.update_cov_corrected(x, y)?;
            self.oracle_equivalence.record(scaled_error(mean, refit.mean, mean_scale), inst);
            self.oracle_equivalence.record(scaled_error(variance, refit_var, var_scale), inst);
            self.oracle_equivalence.record(scaled_error(cov, refit_cov, var_scale), inst);

            // Block-extended state vs refit.
            let p = updated.predict(x)?;
            self.assimilate_equivalence.record(scaled_error(p.mean, refit.mean, mean_scale), inst);
            self.assimilate_equivalence.record(scaled_error(p.variance, refit_var, var_scale), inst);
            self.assimilate_equivalence
                .record(scaled_error(updated.predict_cov(x, y)?, refit_cov, var_scale), inst);

            // Σ_new λ_new = σ_old(X_new, x), and λ_new is the tail of the full weights.
            let lambda = block.weights_new(x)?.lambda_new;
            let cross_old = block.cross_old(x)?;
            for i in 0..k {
                let lhs: f64 = (0..k).map(|j| sigma[(i, j)] * lambda[j]).sum();
                self.weights_identity.record(scaled_error(lhs, cross_old[i], var_scale), inst);
            }
            let full = oracle::full_weights(kernel, &all_points, n, x, inst.jitter)?;
            for (a, b) in lambda.iter().zip(&full.lambda_new) {
                self.full_weights_slice.record(scaled_error(*a, *b, 1.0), inst);
            }

            // σ²_old = σ²_new + λᵀ Σ_new λ.
            let old_var = state.predict_variance(x)?;
            let quad: f64 =
                (0..k).map(|i| (0..k).map(|j| lambda[i] * sigma[(i, j)] * lambda[j]).sum::<f64>()).sum();
            self.total_variance.record(scaled_error(old_var, variance + quad, var_scale), inst);
            self.variance_decrease.record((variance - old_var).max(0.0) / var_scale, inst);

            // Naive minus corrected is the off-diagonal quadratic form.
            let naive = block.update_variance_naive(x)?.value;
            let off_diag: f64 = (0..k)
                .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| lambda[i] * lambda[j] * sigma[(i, j)])
                .sum();
            let raw_corrected = old_var - quad;
            self.naive_gap.record(scaled_error(naive - raw_corrected, off_diag, var_scale), inst);
            let dn = decorrelated.update_variance_naive(x)?.value;
            // Unclamped: a decorrelated block is not a valid posterior.
            let dc = decorrelated.update_cov_corrected(x, x)?;
            self.decorrelated_collapse.record(scaled_error(dn, dc, var_scale), inst);

            if k == 1 {
                self.single_point_collapse.record(scaled_error(naive, variance, var_scale), inst);
                let cov_naive = block.update_cov_naive(x, y)?.value;
                self.single_point_collapse.record(scaled_error(cov_naive, cov, var_scale), inst);
                let single = state.single_point_update(&inst.new_points[0], inst.new_values[0], x)?;
                self.single_point_collapse.record(scaled_error(single.variance, variance, var_scale), inst);
                self.single_point_collapse.record(scaled_error(single.mean, mean, mean_scale), inst);
            }
        }
        Ok(())
    }

    pub fn into_vec(self) -> Vec<SuiteResult> {
        vec![
            self.oracle_equivalence,
            self.assimilate_equivalence,
            self.weights_identity,
            self.full_weights_slice,
            self.total_variance,
            self.variance_decrease,
            self.naive_gap,
            self.decorrelated_collapse,
            self.single_point_collapse,
        ]
    }
}

pub fn run(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let instances = generate_instances(cfg)?;
    let mut suites = Suites::default();
    for inst in &instances {
        suites.check(inst)?;
    }
    Ok(VerifyReport { instances: instances.len(), suites: suites.into_vec() })
}
