//! Covariance kernels, Gram matrices and cross-covariance matrices.
//!
//! Three families are provided: Brownian motion (`variance * min(x, y)` on
//! the half line), squared exponential and Matérn 5/2. All evaluations are
//! exactly symmetric in their arguments.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{KrigingError, Result};

/// A location in `R^d` with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(KrigingError::InvalidPoint("point has no coordinates".into()));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(KrigingError::InvalidPoint(format!("non-finite coordinate {c}")));
        }
        Ok(Point(coords))
    }

    /// One-dimensional point. Panics on a non-finite coordinate.
    pub fn scalar(x: f64) -> Self {
        Point::new(vec![x]).expect("finite scalar coordinate")
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl From<f64> for Point {
    fn from(x: f64) -> Self {
        Point::scalar(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// Wiener process covariance `min(x, y)`; one-dimensional, nonnegative inputs.
    Brownian,
    SquaredExponential,
    Matern52,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] =
        [KernelFamily::Brownian, KernelFamily::SquaredExponential, KernelFamily::Matern52];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Brownian => "brownian",
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern52 => "matern52",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = KrigingError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "brownian" | "wiener" => Ok(KernelFamily::Brownian),
            "se" | "squared-exponential" | "squared_exponential" | "rbf" => {
                Ok(KernelFamily::SquaredExponential)
            }
            "matern52" | "matern-5/2" | "matern" => Ok(KernelFamily::Matern52),
            other => Err(KrigingError::InvalidKernel(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// A positive-definite covariance function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    family: KernelFamily,
    variance: f64,
    lengthscale: f64,
}

impl Kernel {
    /// `lengthscale` is ignored (but still validated) for the Brownian family.
    pub fn new(family: KernelFamily, variance: f64, lengthscale: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(KrigingError::InvalidKernel(format!(
                "variance must be positive and finite, got {variance}"
            )));
        }
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(KrigingError::InvalidKernel(format!(
                "lengthscale must be positive and finite, got {lengthscale}"
            )));
        }
        Ok(Kernel { family, variance, lengthscale })
    }

    /// Standard Wiener process, `k(x, y) = min(x, y)`.
    pub fn brownian() -> Self {
        Kernel { family: KernelFamily::Brownian, variance: 1.0, lengthscale: 1.0 }
    }

    pub fn squared_exponential(variance: f64, lengthscale: f64) -> Result<Self> {
        Kernel::new(KernelFamily::SquaredExponential, variance, lengthscale)
    }

    pub fn matern52(variance: f64, lengthscale: f64) -> Result<Self> {
        Kernel::new(KernelFamily::Matern52, variance, lengthscale)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Checks that `x` is a valid input for this kernel.
    pub fn check_point(&self, x: &Point) -> Result<()> {
        if self.family == KernelFamily::Brownian {
            if x.dim() != 1 {
                return Err(KrigingError::InvalidKernel(format!(
                    "brownian kernel is defined for d = 1 only, got d = {}",
                    x.dim()
                )));
            }
            if x.coords()[0] < 0.0 {
                return Err(KrigingError::InvalidPoint(format!(
                    "brownian kernel needs nonnegative coordinates, got {}",
                    x.coords()[0]
                )));
            }
        }
        Ok(())
    }

    fn check_pair(&self, x: &Point, y: &Point) -> Result<()> {
        if x.dim() != y.dim() {
            return Err(KrigingError::DimensionMismatch { expected: x.dim(), found: y.dim() });
        }
        self.check_point(x)?;
        self.check_point(y)
    }

    /// Covariance between `x` and `y`.
    pub fn eval(&self, x: &Point, y: &Point) -> Result<f64> {
        self.check_pair(x, y)?;
        Ok(self.eval_unchecked(x.coords(), y.coords()))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Brownian => self.variance * x[0].min(y[0]),
            KernelFamily::SquaredExponential => {
                let r2 = squared_distance(x, y) / (self.lengthscale * self.lengthscale);
                self.variance * (-0.5 * r2).exp()
            }
            KernelFamily::Matern52 => {
                let r = squared_distance(x, y).sqrt() / self.lengthscale;
                let s = 5f64.sqrt() * r;
                self.variance * (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }

    /// Validates a design and returns its common dimension, if any.
    pub(crate) fn check_design(&self, points: &[Point]) -> Result<Option<usize>> {
        let Some(first) = points.first() else {
            return Ok(None);
        };
        let d = first.dim();
        for p in points {
            if p.dim() != d {
                return Err(KrigingError::DimensionMismatch { expected: d, found: p.dim() });
            }
            self.check_point(p)?;
        }
        Ok(Some(d))
    }

    /// Gram matrix of a design. The upper triangle is computed and mirrored,
    /// so the result is symmetric to the bit.
    pub fn gram(&self, points: &[Point]) -> Result<Array2<f64>> {
        if points.is_empty() {
            return Err(KrigingError::ShapeMismatch("gram of an empty design".into()));
        }
        self.check_design(points)?;
        let n = points.len();
        let mut k = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = self.eval_unchecked(points[i].coords(), points[j].coords());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Cross-covariance matrix with entries `k(xs[i], ys[j])`.
    pub fn cross(&self, xs: &[Point], ys: &[Point]) -> Result<Array2<f64>> {
        if xs.is_empty() || ys.is_empty() {
            return Err(KrigingError::ShapeMismatch("cross-covariance of an empty design".into()));
        }
        let dx = self.check_design(xs)?;
        let dy = self.check_design(ys)?;
        if dx != dy {
            return Err(KrigingError::DimensionMismatch {
                expected: dx.unwrap_or(0),
                found: dy.unwrap_or(0),
            });
        }
        Ok(Array2::from_shape_fn((xs.len(), ys.len()), |(i, j)| {
            self.eval_unchecked(xs[i].coords(), ys[j].coords())
        }))
    }

    /// Covariances `k(points[i], x)` as a vector. Inputs must be pre-validated.
    pub(crate) fn column_unchecked(&self, points: &[Point], x: &Point) -> Vec<f64> {
        points.iter().map(|p| self.eval_unchecked(p.coords(), x.coords())).collect()
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}
