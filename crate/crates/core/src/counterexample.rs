//! Two simultaneous observations of a Wiener process.
//!
//! With `k(x, y) = min(x, y)`, no prior data, new points `0.5` and `1.0` and
//! query `0.75`, both new observations get weight `1/2`. The correct
//! posterior variance is `1/8`; the diagonal-only update gives `3/8` because
//! it drops the term `2 λ₁ λ₂ k(0.5, 1.0) = 1/4`.

use std::fmt::Write;

use serde::Serialize;

use crate::error::Result;
use crate::kernels::{Kernel, Point};
use crate::kriging::KrigingState;
use crate::oracle;

pub const NEW_POINTS: [f64; 2] = [0.5, 1.0];
pub const QUERY: f64 = 0.75;

pub const EXPECTED_PRIOR_VARIANCE: f64 = 0.75;
pub const EXPECTED_WEIGHTS: [f64; 2] = [0.5, 0.5];
pub const EXPECTED_CORRECTED_VARIANCE: f64 = 0.125;
pub const EXPECTED_NAIVE_VARIANCE: f64 = 0.375;
pub const EXPECTED_CORRECTION_TERM: f64 = 0.25;

pub const TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleReport {
    pub prior_variance: f64,
    pub weights: [f64; 2],
    pub corrected_variance: f64,
    pub naive_variance: f64,
    /// `Σ_{i≠j} λᵢ λⱼ Σ_new[i][j]`
    pub correction_term: f64,
    /// Variance from a direct solve on both points, for reference.
    pub refit_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: &'static str,
    pub value: f64,
    pub expected: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        (self.value - self.expected).abs() <= TOLERANCE
    }
}

pub fn run() -> Result<CounterexampleReport> {
    let kernel = Kernel::brownian();
    let prior = KrigingState::prior(kernel, 0.0)?;
    let new_points: Vec<Point> = NEW_POINTS.iter().map(|&x| Point::scalar(x)).collect();
    let x = Point::scalar(QUERY);

    let block = prior.conditional_block(&new_points)?;
    let lambda = block.weights_new(&x)?.lambda_new;
    let sigma = block.sigma_new();
    let correction_term = lambda[0] * lambda[1] * sigma[(0, 1)] + lambda[1] * lambda[0] * sigma[(1, 0)];

    Ok(CounterexampleReport {
        prior_variance: prior.predict_variance(&x)?,
        weights: [lambda[0], lambda[1]],
        corrected_variance: block.update_variance_corrected(&x)?,
        naive_variance: block.update_variance_naive(&x)?.value,
        correction_term,
        refit_variance: oracle::refit_predict(&kernel, &new_points, &[0.0, 0.0], &x, None, 0.0)?.variance,
    })
}

impl CounterexampleReport {
    pub fn checks(&self) -> Vec<Check> {
        vec![
            Check { label: "prior_variance", value: self.prior_variance, expected: EXPECTED_PRIOR_VARIANCE },
            Check { label: "weight_1", value: self.weights[0], expected: EXPECTED_WEIGHTS[0] },
            Check { label: "weight_2", value: self.weights[1], expected: EXPECTED_WEIGHTS[1] },
            Check {
                label: "corrected_variance",
                value: self.corrected_variance,
                expected: EXPECTED_CORRECTED_VARIANCE,
            },
            Check { label: "naive_variance", value: self.naive_variance, expected: EXPECTED_NAIVE_VARIANCE },
            Check {
                label: "correction_term",
                value: self.correction_term,
                expected: EXPECTED_CORRECTION_TERM,
            },
        ]
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(Check::passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "kernel: min(x, y)  new points: 0.5, 1.0  query: 0.75  prior observations: 0");
        for c in self.checks() {
            let _ = writeln!(
                out,
                "{:<20} {:>22.17}  expected {:<6} {}",
                c.label,
                c.value,
                c.expected,
                if c.passed() { "ok" } else { "MISMATCH" }
            );
        }
        let _ = writeln!(out, "{:<20} {:>22.17}", "refit_variance", self.refit_variance);
        let _ = writeln!(
            out,
            "warning: naive_variance ignores the off-diagonal of the conditional covariance and is not a valid posterior variance"
        );
        out
    }
}
