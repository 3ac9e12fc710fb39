//! Brute-force reference predictions.
//!
//! Everything here refits from scratch on the full design with its own
//! Gaussian elimination. Only the kernels are shared with the update path, so
//! a fault in the Cholesky code cannot hide behind an equally faulty arbiter.

use ndarray::Array2;

use crate::error::{KrigingError, Result};
use crate::kernels::{Kernel, Point};

/// Weights of the full `(n + k)`-point predictor, split at the old/new boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct FullWeights {
    pub lambda_old: Vec<f64>,
    pub lambda_new: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefitPrediction {
    pub mean: f64,
    pub variance: f64,
    pub covariance: Option<f64>,
}

/// Solves `a x = b` for every column of `b` by Gaussian elimination with
/// partial pivoting.
fn gauss_solve(mut a: Array2<f64>, mut b: Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[(r, col)]))
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .expect("nonempty");
        if pivot.is_nan() || pivot.abs() <= 1e-14 * scale {
            return Err(KrigingError::NotPositiveDefinite { index: col, pivot });
        }
        if pivot_row != col {
            for c in 0..n {
                a.swap((col, c), (pivot_row, c));
            }
            for c in 0..b.ncols() {
                b.swap((col, c), (pivot_row, c));
            }
        }
        for r in col + 1..n {
            let f = a[(r, col)] / a[(col, col)];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[(r, c)] -= f * a[(col, c)];
            }
            for c in 0..b.ncols() {
                b[(r, c)] -= f * b[(col, c)];
            }
        }
    }
    for c in 0..b.ncols() {
        for r in (0..n).rev() {
            let mut s = b[(r, c)];
            for j in r + 1..n {
                s -= a[(r, j)] * b[(j, c)];
            }
            b[(r, c)] = s / a[(r, r)];
        }
    }
    Ok(b)
}

fn jittered_gram(kernel: &Kernel, points: &[Point], jitter: f64) -> Result<Array2<f64>> {
    let mut k = kernel.gram(points)?;
    for i in 0..points.len() {
        k[(i, i)] += jitter;
    }
    Ok(k)
}

/// Weights of every observation in the predictor at `x`, solved in one go
/// and split after the first `n_old` entries.
pub fn full_weights(
    kernel: &Kernel,
    points: &[Point],
    n_old: usize,
    x: &Point,
    jitter: f64,
) -> Result<FullWeights> {
    if n_old > points.len() {
        return Err(KrigingError::ShapeMismatch(format!(
            "split index {n_old} beyond {} points",
            points.len()
        )));
    }
    let k = jittered_gram(kernel, points, jitter)?;
    let c = kernel.cross(points, std::slice::from_ref(x))?;
    let mut lambda = gauss_solve(k, c)?.column(0).to_vec();
    let lambda_new = lambda.split_off(n_old);
    Ok(FullWeights { lambda_old: lambda, lambda_new })
}

/// Mean and variance at `x` (and covariance with `y`, when given) from a
/// fresh solve on all observations. An empty design gives the prior.
pub fn refit_predict(
    kernel: &Kernel,
    points: &[Point],
    values: &[f64],
    x: &Point,
    y: Option<&Point>,
    jitter: f64,
) -> Result<RefitPrediction> {
    if points.len() != values.len() {
        return Err(KrigingError::ShapeMismatch(format!(
            "{} points but {} values",
            points.len(),
            values.len()
        )));
    }
    if points.is_empty() {
        return Ok(RefitPrediction {
            mean: 0.0,
            variance: kernel.eval(x, x)?,
            covariance: y.map(|y| kernel.eval(x, y)).transpose()?,
        });
    }
    let mut queries = vec![x.clone()];
    queries.extend(y.cloned());
    let c = kernel.cross(points, &queries)?;
    let lambda = gauss_solve(jittered_gram(kernel, points, jitter)?, c.clone())?;
    let col = |j: usize| lambda.column(j);
    let mean = col(0).iter().zip(values).map(|(l, z)| l * z).sum();
    let variance = kernel.eval(x, x)? - col(0).dot(&c.column(0));
    let covariance = match y {
        Some(y) => Some(kernel.eval(x, y)? - col(0).dot(&c.column(1))),
        None => None,
    };
    Ok(RefitPrediction { mean, variance, covariance })
}
