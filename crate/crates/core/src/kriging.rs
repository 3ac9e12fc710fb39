//! Simple Kriging (zero prior mean) with batch-sequential updates.
//!
//! A [`KrigingState`] holds the posterior given `n` observations. To fold in
//! `k` more, build the [`ConditionalBlock`] of the new points: the `k × k`
//! conditional covariance `Σ_new` of the new observations given the old
//! ones, and the conditional cross-covariances `σ_old(X_new, x)`. The
//! updated posterior at any query is then
//!
//! ```text
//! m_new(x)    = m_old(x)    + σ_old(X_new, x)ᵀ Σ_new⁻¹ (Z_new - m_old(X_new))
//! σ²_new(x)   = σ²_old(x)   - σ_old(X_new, x)ᵀ Σ_new⁻¹ σ_old(X_new, x)
//! σ_new(x, y) = σ_old(x, y) - σ_old(X_new, x)ᵀ Σ_new⁻¹ σ_old(X_new, y)
//! ```
//!
//! which is Simple Kriging with the old posterior covariance as kernel. The
//! weights `λ_new(x) = Σ_new⁻¹ σ_old(X_new, x)` are the last `k` weights of
//! the full `(n + k)`-point predictor.
//!
//! The older diagonal-only variance update, which drops the off-diagonal of
//! `Σ_new`, is kept as [`ConditionalBlock::update_variance_naive`]. It is wrong
//! for `k > 1` and exists so the discrepancy can be demonstrated and tested.
//!
//! In the Gaussian case these are conditional moments; for other
//! square-integrable fields they are the best linear predictor and its error
//! (co)variance.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{KrigingError, Result};
use crate::kernels::{Kernel, Point};
use crate::linalg::{block_extend, cholesky, dot, CholeskyFactor};

/// Raw variances in `(-VARIANCE_CLAMP_RTOL * k(x, x), 0)` are clamped to zero.
pub const VARIANCE_CLAMP_RTOL: f64 = 1e-9;

/// Relative threshold below which a single new point is considered already
/// known.
const DEGENERATE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// New design points and their observed values.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBatch {
    points: Vec<Point>,
    values: Vec<f64>,
}

impl UpdateBatch {
    pub fn new(points: Vec<Point>, values: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(KrigingError::InvalidArgument("update batch is empty".into()));
        }
        check_observations(&points, &values)?;
        Ok(UpdateBatch { points, values })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn check_observations(points: &[Point], values: &[f64]) -> Result<()> {
    if points.len() != values.len() {
        return Err(KrigingError::ShapeMismatch(format!(
            "{} points but {} observed values",
            points.len(),
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(KrigingError::InvalidArgument(format!("non-finite observation {v}")));
    }
    Ok(())
}

/// `λ_new(x)`: weights of the new observations in the `(n + k)`-point predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingWeights {
    pub lambda_new: Vec<f64>,
}

/// Value of the diagonal-only update. Only correct when `Σ_new` is diagonal
/// (in particular for `k = 1`); never use it as a posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
#[must_use]
pub struct NaiveUpdate {
    pub value: f64,
}

/// Fitted Simple Kriging posterior.
#[derive(Debug, Clone)]
pub struct KrigingState {
    kernel: Kernel,
    points: Vec<Point>,
    values: Vec<f64>,
    factor: CholeskyFactor,
    /// `L⁻¹ Z_old`
    whitened_values: Vec<f64>,
    jitter: f64,
    dim: Option<usize>,
}

impl KrigingState {
    /// The prior: no observations, mean zero, covariance `kernel`.
    pub fn prior(kernel: Kernel, jitter: f64) -> Result<Self> {
        KrigingState::fit(kernel, Vec::new(), Vec::new(), jitter)
    }

    /// Conditions the prior on `values` observed at `points`. `jitter` is
    /// added to the Gram diagonal at factorization time.
    pub fn fit(kernel: Kernel, points: Vec<Point>, values: Vec<f64>, jitter: f64) -> Result<Self> {
        check_observations(&points, &values)?;
        if !(jitter.is_finite() && jitter >= 0.0) {
            return Err(KrigingError::InvalidArgument(format!(
                "jitter must be finite and nonnegative, got {jitter}"
            )));
        }
        let dim = kernel.check_design(&points)?;
        let factor = if points.is_empty() {
            CholeskyFactor::empty()
        } else {
            cholesky(kernel.gram(&points)?.view(), jitter)?
        };
        let mut whitened_values = values.clone();
        factor.forward_in_place(&mut whitened_values);
        Ok(KrigingState { kernel, points, values, factor, whitened_values, jitter, dim })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Input dimension, once known.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn check_query(&self, x: &Point) -> Result<()> {
        if let Some(d) = self.dim {
            if x.dim() != d {
                return Err(KrigingError::DimensionMismatch { expected: d, found: x.dim() });
            }
        }
        self.kernel.check_point(x)
    }

    /// `L⁻¹ c(x)` with `c(x) = k(X_old, x)`.
    fn whitened_cross(&self, x: &Point) -> Vec<f64> {
        let mut c = self.kernel.column_unchecked(&self.points, x);
        self.factor.forward_in_place(&mut c);
        c
    }

    fn prior_cov(&self, x: &Point, y: &Point) -> f64 {
        self.kernel.eval_unchecked(x.coords(), y.coords())
    }

    /// `m_old(x) = c(x)ᵀ K⁻¹ Z_old`.
    pub fn predict_mean(&self, x: &Point) -> Result<f64> {
        self.check_query(x)?;
        Ok(dot(&self.whitened_cross(x), &self.whitened_values))
    }

    /// `σ²_old(x)`, clamped at zero within roundoff.
    pub fn predict_variance(&self, x: &Point) -> Result<f64> {
        self.check_query(x)?;
        let w = self.whitened_cross(x);
        let prior = self.prior_cov(x, x);
        Ok(clamp_variance(prior - dot(&w, &w), prior))
    }

    /// `σ_old(x, y)`; exactly symmetric in its arguments.
    pub fn predict_cov(&self, x: &Point, y: &Point) -> Result<f64> {
        self.check_query(x)?;
        self.check_query(y)?;
        let wx = self.whitened_cross(x);
        let wy = self.whitened_cross(y);
        Ok(self.prior_cov(x, y) - dot(&wx, &wy))
    }

    pub fn predict(&self, x: &Point) -> Result<Prediction> {
        self.check_query(x)?;
        let w = self.whitened_cross(x);
        let prior = self.prior_cov(x, x);
        Ok(Prediction {
            mean: dot(&w, &self.whitened_values),
            variance: clamp_variance(prior - dot(&w, &w), prior),
        })
    }

    fn check_new_points(&self, new_points: &[Point]) -> Result<()> {
        if new_points.is_empty() {
            return Err(KrigingError::InvalidArgument("no new points".into()));
        }
        let d = self.kernel.check_design(new_points)?.expect("nonempty");
        match self.dim {
            Some(old) if old != d => Err(KrigingError::DimensionMismatch { expected: old, found: d }),
            _ => Ok(()),
        }
    }

    /// `Σ_new` and the data needed for `σ_old(X_new, ·)`.
    ///
    /// The state's jitter is added to the diagonal of `Σ_new`, matching the
    /// jittered Gram a full refit would factor.
    pub fn conditional_block(&self, new_points: &[Point]) -> Result<ConditionalBlock<'_>> {
        self.check_new_points(new_points)?;
        let k = new_points.len();
        let whitened_cross = if self.is_empty() {
            Array2::zeros((k, 0))
        } else {
            self.factor.whiten_columns(self.kernel.cross(&self.points, new_points)?.view())?
        };
        let mut sigma_new = self.kernel.gram(new_points)?;
        for i in 0..k {
            for j in 0..=i {
                let v = sigma_new[(i, j)] - row_dot(&whitened_cross, i, j);
                sigma_new[(i, j)] = v;
                sigma_new[(j, i)] = v;
            }
            sigma_new[(i, i)] += self.jitter;
        }
        let factor = cholesky(sigma_new.view(), 0.0)?;
        Ok(ConditionalBlock { state: self, points: new_points.to_vec(), whitened_cross, sigma_new, factor })
    }

    /// Posterior given the old and the new observations. The old block of
    /// the Cholesky factor is reused as is; only the `k` new rows are
    /// computed.
    pub fn assimilate(&self, batch: &UpdateBatch) -> Result<KrigingState> {
        self.check_new_points(batch.points())?;
        let n = self.len();
        let k = batch.len();
        let cross =
            if n == 0 { Array2::zeros((0, k)) } else { self.kernel.cross(&self.points, batch.points())? };
        let corner = self.kernel.gram(batch.points())?;
        let factor = block_extend(&self.factor, cross.view(), corner.view(), self.jitter)?;

        let mut points = self.points.clone();
        points.extend_from_slice(batch.points());
        let mut values = self.values.clone();
        values.extend_from_slice(batch.values());
        let mut whitened_values = self.whitened_values.clone();
        whitened_values.extend_from_slice(batch.values());
        factor.forward_in_place_from(&mut whitened_values, n);

        Ok(KrigingState {
            kernel: self.kernel,
            points,
            values,
            factor,
            whitened_values,
            jitter: self.jitter,
            dim: Some(batch.points()[0].dim()),
        })
    }

    /// Classic one-point update of the posterior at `x` after observing
    /// `z_new` at `x_new`.
    pub fn single_point_update(&self, x_new: &Point, z_new: f64, x: &Point) -> Result<Prediction> {
        self.check_new_points(std::slice::from_ref(x_new))?;
        self.check_query(x)?;
        if !z_new.is_finite() {
            return Err(KrigingError::InvalidArgument(format!("non-finite observation {z_new}")));
        }
        let w_new = self.whitened_cross(x_new);
        let w_x = self.whitened_cross(x);
        let prior_new = self.prior_cov(x_new, x_new);
        let var_new = prior_new - dot(&w_new, &w_new) + self.jitter;
        if var_new.is_nan() || var_new <= DEGENERATE_RTOL * (prior_new + self.jitter) {
            return Err(KrigingError::DegenerateNewPoint { variance: var_new });
        }
        let cov = self.prior_cov(x_new, x) - dot(&w_new, &w_x);
        let lambda = cov / var_new;
        let mean_new = dot(&w_new, &self.whitened_values);
        let mean_x = dot(&w_x, &self.whitened_values);
        let prior_x = self.prior_cov(x, x);
        let var_x = prior_x - dot(&w_x, &w_x);
        Ok(Prediction {
            mean: mean_x + lambda * (z_new - mean_new),
            variance: clamp_variance(var_x - lambda * lambda * var_new, prior_x),
        })
    }
}

fn row_dot(a: &Array2<f64>, i: usize, j: usize) -> f64 {
    dot(a.row(i).as_slice().expect("standard layout"), a.row(j).as_slice().expect("standard layout"))
}

fn clamp_variance(raw: f64, prior: f64) -> f64 {
    if raw >= 0.0 {
        raw
    } else if raw > -VARIANCE_CLAMP_RTOL * prior {
        log::warn!("clamping variance {raw:e} to 0");
        0.0
    } else {
        log::warn!("variance {raw:e} is negative beyond roundoff (prior {prior:e})");
        raw
    }
}

/// Per-query quantities shared by the update formulas.
struct QueryTerms {
    /// `L⁻¹ c(x)`
    whitened: Vec<f64>,
    /// `σ_old(X_new, x)`
    cross_old: Vec<f64>,
    /// `M⁻¹ σ_old(X_new, x)` with `M Mᵀ = Σ_new`
    projected: Vec<f64>,
    prior: f64,
}

/// Conditional covariance of a batch of new points given a fitted state.
#[derive(Debug, Clone)]
pub struct ConditionalBlock<'s> {
    state: &'s KrigingState,
    points: Vec<Point>,
    /// Row `i` is `L⁻¹ k(X_old, x_new_i)`.
    whitened_cross: Array2<f64>,
    sigma_new: Array2<f64>,
    factor: CholeskyFactor,
}

impl<'s> ConditionalBlock<'s> {
    pub fn state(&self) -> &'s KrigingState {
        self.state
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `Σ_new` (including the state's jitter on the diagonal).
    pub fn sigma_new(&self) -> ArrayView2<'_, f64> {
        self.sigma_new.view()
    }

    pub fn sigma_new_factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// Same block with the off-diagonal of `Σ_new` set to zero.
    pub fn decorrelated(&self) -> Result<ConditionalBlock<'s>> {
        let k = self.len();
        let sigma_new =
            Array2::from_shape_fn((k, k), |(i, j)| if i == j { self.sigma_new[(i, i)] } else { 0.0 });
        let factor = cholesky(sigma_new.view(), 0.0)?;
        Ok(ConditionalBlock { sigma_new, factor, ..self.clone() })
    }

    fn terms(&self, x: &Point) -> Result<QueryTerms> {
        self.state.check_query(x)?;
        if x.dim() != self.points[0].dim() {
            return Err(KrigingError::DimensionMismatch { expected: self.points[0].dim(), found: x.dim() });
        }
        let whitened = self.state.whitened_cross(x);
        let cross_old: Vec<f64> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let w = self.whitened_cross.row(i);
                self.state.prior_cov(p, x) - dot(w.as_slice().expect("standard layout"), &whitened)
            })
            .collect();
        let mut projected = cross_old.clone();
        self.factor.forward_in_place(&mut projected);
        let prior = self.state.prior_cov(x, x);
        Ok(QueryTerms { whitened, cross_old, projected, prior })
    }

    /// `σ_old(X_new, x)`.
    pub fn cross_old(&self, x: &Point) -> Result<Vec<f64>> {
        Ok(self.terms(x)?.cross_old)
    }

    /// `m_old(X_new)`.
    pub fn old_means(&self) -> Vec<f64> {
        self.whitened_cross
            .rows()
            .into_iter()
            .map(|w| dot(w.as_slice().expect("standard layout"), &self.state.whitened_values))
            .collect()
    }

    /// Solves `Σ_new λ = σ_old(X_new, x)`.
    pub fn weights_new(&self, x: &Point) -> Result<KrigingWeights> {
        let t = self.terms(x)?;
        let mut lambda_new = t.projected;
        self.factor.backward_in_place(&mut lambda_new);
        Ok(KrigingWeights { lambda_new })
    }

    fn check_batch(&self, batch: &UpdateBatch) -> Result<()> {
        if batch.points() != self.points.as_slice() {
            return Err(KrigingError::ShapeMismatch(
                "batch points differ from the conditional block's points".into(),
            ));
        }
        Ok(())
    }

    /// Updated mean `m_new(x)`.
    pub fn update_mean(&self, batch: &UpdateBatch, x: &Point) -> Result<f64> {
        self.check_batch(batch)?;
        let t = self.terms(x)?;
        let mut innovation: Vec<f64> =
            batch.values().iter().zip(self.old_means()).map(|(z, m)| z - m).collect();
        self.factor.forward_in_place(&mut innovation);
        let old_mean = dot(&t.whitened, &self.state.whitened_values);
        Ok(old_mean + dot(&t.projected, &innovation))
    }

    /// Updated variance `σ²_new(x)`, clamped at zero within roundoff.
    pub fn update_variance_corrected(&self, x: &Point) -> Result<f64> {
        let t = self.terms(x)?;
        let old = t.prior - dot(&t.whitened, &t.whitened);
        Ok(clamp_variance(old - dot(&t.projected, &t.projected), t.prior))
    }

    /// Updated covariance `σ_new(x, y)`; exactly symmetric.
    pub fn update_cov_corrected(&self, x: &Point, y: &Point) -> Result<f64> {
        let tx = self.terms(x)?;
        let ty = self.terms(y)?;
        let old = self.state.prior_cov(x, y) - dot(&tx.whitened, &ty.whitened);
        Ok(old - dot(&tx.projected, &ty.projected))
    }

    fn naive_correction(&self, lx: &[f64], ly: &[f64]) -> f64 {
        (0..self.len()).map(|i| lx[i] * ly[i] * self.sigma_new[(i, i)]).sum()
    }

    /// `σ²_old(x) - Σᵢ λᵢ(x)² σ²_old(x_new_i)`. Incorrect for `k > 1`.
    pub fn update_variance_naive(&self, x: &Point) -> Result<NaiveUpdate> {
        let t = self.terms(x)?;
        let old = t.prior - dot(&t.whitened, &t.whitened);
        let mut lambda = t.projected;
        self.factor.backward_in_place(&mut lambda);
        Ok(NaiveUpdate { value: old - self.naive_correction(&lambda, &lambda) })
    }

    /// `σ_old(x, y) - Σᵢ λᵢ(x) λᵢ(y) σ²_old(x_new_i)`. Incorrect for `k > 1`.
    pub fn update_cov_naive(&self, x: &Point, y: &Point) -> Result<NaiveUpdate> {
        let tx = self.terms(x)?;
        let ty = self.terms(y)?;
        let old = self.state.prior_cov(x, y) - dot(&tx.whitened, &ty.whitened);
        let mut lx = tx.projected;
        self.factor.backward_in_place(&mut lx);
        let mut ly = ty.projected;
        self.factor.backward_in_place(&mut ly);
        Ok(NaiveUpdate { value: old - self.naive_correction(&lx, &ly) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64) -> Point {
        Point::scalar(x)
    }

    fn pts(xs: &[f64]) -> Vec<Point> {
        xs.iter().map(|&x| p(x)).collect()
    }

    fn random_points(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Vec<Point> {
        (0..m).map(|_| Point::new((0..d).map(|_| rng.random()).collect()).unwrap()).collect()
    }

    fn random_values(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
        (0..m).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    /// Counter-example setup: Wiener kernel, no old data, new points 0.5 and 1.
    fn counterexample() -> (KrigingState, UpdateBatch) {
        let prior = KrigingState::prior(Kernel::brownian(), 0.0).unwrap();
        let batch = UpdateBatch::new(pts(&[0.5, 1.0]), vec![1.0, 2.0]).unwrap();
        (prior, batch)
    }

    #[test]
    fn prior_state() {
        let s = KrigingState::prior(Kernel::brownian(), 0.0).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.dim(), None);
        assert_eq!(s.predict_mean(&p(0.75)).unwrap(), 0.0);
        assert_eq!(s.predict_variance(&p(0.75)).unwrap(), 0.75);
        assert_eq!(s.predict_cov(&p(0.5), &p(1.0)).unwrap(), 0.5);
    }

    #[test]
    fn fitted_counterexample() {
        let s = KrigingState::fit(Kernel::brownian(), pts(&[0.5, 1.0]), vec![1.0, 2.0], 0.0).unwrap();
        assert_abs_diff_eq!(s.predict_mean(&p(0.75)).unwrap(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.predict_variance(&p(0.75)).unwrap(), 0.125, epsilon = 1e-15);
        // z1/2 + z2/2 for arbitrary values
        let s = KrigingState::fit(Kernel::brownian(), pts(&[0.5, 1.0]), vec![-3.0, 0.4], 0.0).unwrap();
        assert_abs_diff_eq!(s.predict_mean(&p(0.75)).unwrap(), -1.3, epsilon = 1e-15);
    }

    #[test]
    fn interpolates_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = Kernel::matern52(1.0, 0.4).unwrap();
        let x = random_points(&mut rng, 6, 2);
        let z = random_values(&mut rng, 6);
        let s = KrigingState::fit(k, x.clone(), z.clone(), 0.0).unwrap();
        for (xi, zi) in x.iter().zip(&z) {
            assert_abs_diff_eq!(s.predict_mean(xi).unwrap(), *zi, epsilon = 1e-10);
            assert_abs_diff_eq!(s.predict_variance(xi).unwrap(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn repeated_point_without_jitter_fails() {
        let k = Kernel::squared_exponential(1.0, 0.3).unwrap();
        let x = vec![Point::new(vec![0.2, 0.3]).unwrap(), Point::new(vec![0.2, 0.3]).unwrap()];
        assert!(matches!(
            KrigingState::fit(k, x, vec![1.0, 1.0], 0.0),
            Err(KrigingError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn fit_validation() {
        let k = Kernel::brownian();
        assert!(matches!(
            KrigingState::fit(k, pts(&[0.5]), vec![], 0.0),
            Err(KrigingError::ShapeMismatch(_))
        ));
        assert!(KrigingState::fit(k, pts(&[0.5]), vec![f64::NAN], 0.0).is_err());
        assert!(KrigingState::fit(k, pts(&[0.5]), vec![1.0], -1.0).is_err());
        let s = KrigingState::fit(k, pts(&[0.5]), vec![1.0], 0.0).unwrap();
        let x2 = Point::new(vec![0.1, 0.2]).unwrap();
        assert!(s.predict_mean(&x2).is_err());
        assert!(UpdateBatch::new(vec![], vec![]).is_err());
        assert!(UpdateBatch::new(pts(&[0.1]), vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn conditional_block_counterexample() {
        let (prior, _) = counterexample();
        let block = prior.conditional_block(&pts(&[0.5, 1.0])).unwrap();
        assert_eq!(block.sigma_new(), Kernel::brownian().gram(&pts(&[0.5, 1.0])).unwrap());
        let w = block.weights_new(&p(0.75)).unwrap();
        assert_abs_diff_eq!(w.lambda_new[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w.lambda_new[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn corrected_and_naive_on_counterexample() {
        let (prior, batch) = counterexample();
        let block = prior.conditional_block(batch.points()).unwrap();
        let x = p(0.75);
        assert_abs_diff_eq!(block.update_variance_corrected(&x).unwrap(), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(block.update_variance_naive(&x).unwrap().value, 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(block.update_cov_corrected(&x, &x).unwrap(), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(block.update_cov_naive(&x, &x).unwrap().value, 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(block.update_mean(&batch, &x).unwrap(), 1.5, epsilon = 1e-15);
        let gap =
            block.update_variance_naive(&x).unwrap().value - block.update_variance_corrected(&x).unwrap();
        assert_abs_diff_eq!(gap, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn assimilated_counterexample() {
        let (prior, batch) = counterexample();
        let s = prior.assimilate(&batch).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.dim(), Some(1));
        assert_abs_diff_eq!(s.predict_variance(&p(0.75)).unwrap(), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(s.predict_mean(&p(0.75)).unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn weights_at_new_point_are_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = Kernel::squared_exponential(1.0, 0.3).unwrap();
        let s = KrigingState::fit(k, random_points(&mut rng, 5, 2), random_values(&mut rng, 5), 0.0).unwrap();
        let xn = random_points(&mut rng, 3, 2);
        let block = s.conditional_block(&xn).unwrap();
        for (i, x) in xn.iter().enumerate() {
            let w = block.weights_new(x).unwrap().lambda_new;
            for (j, wj) in w.iter().enumerate() {
                assert_abs_diff_eq!(*wj, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-9);
            }
            // conditioning on Z_new pins Z(x_new_i)
            let y = Point::new(vec![0.5, 0.5]).unwrap();
            assert_abs_diff_eq!(block.update_cov_corrected(&y, x).unwrap(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = Kernel::matern52(1.0, 0.3).unwrap();
        let s = KrigingState::fit(k, random_points(&mut rng, 6, 2), random_values(&mut rng, 6), 0.0).unwrap();
        let xn = random_points(&mut rng, 3, 2);
        let block = s.conditional_block(&xn).unwrap();
        let batch = UpdateBatch::new(xn.clone(), block.old_means()).unwrap();
        let x = Point::new(vec![0.3, 0.9]).unwrap();
        assert_abs_diff_eq!(
            block.update_mean(&batch, &x).unwrap(),
            s.predict_mean(&x).unwrap(),
            epsilon = 1e-12
        );
        let single = s.single_point_update(&xn[0], block.old_means()[0], &x).unwrap();
        assert_abs_diff_eq!(single.mean, s.predict_mean(&x).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn far_query_is_unchanged() {
        let k = Kernel::squared_exponential(1.0, 0.1).unwrap();
        let s = KrigingState::fit(k, pts(&[0.0, 0.2]), vec![1.0, -1.0], 0.0).unwrap();
        let block = s.conditional_block(&pts(&[100.0, 100.3])).unwrap();
        let x = p(0.1);
        assert_eq!(block.cross_old(&x).unwrap(), vec![0.0, 0.0]);
        assert_eq!(block.update_variance_corrected(&x).unwrap(), s.predict_variance(&x).unwrap());
    }

    #[test]
    fn single_point_brownian_by_hand() {
        // λ = min(0.75, 0.5) / 0.5 = 1, variance 0.75 - 0.5 = 0.25
        let prior = KrigingState::prior(Kernel::brownian(), 0.0).unwrap();
        let r = prior.single_point_update(&p(0.5), 2.0, &p(0.75)).unwrap();
        assert_abs_diff_eq!(r.variance, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(r.mean, 2.0, epsilon = 1e-15);
        let refit =
            oracle::refit_predict(&Kernel::brownian(), &pts(&[0.5]), &[2.0], &p(0.75), None, 0.0).unwrap();
        assert_abs_diff_eq!(r.variance, refit.variance, epsilon = 1e-15);
    }

    #[test]
    fn single_point_degenerate() {
        let s = KrigingState::fit(Kernel::brownian(), pts(&[0.5]), vec![1.0], 0.0).unwrap();
        assert!(matches!(
            s.single_point_update(&p(0.5), 1.0, &p(0.75)),
            Err(KrigingError::DegenerateNewPoint { .. })
        ));
    }

    #[test]
    fn k1_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = Kernel::squared_exponential(1.3, 0.4).unwrap();
        for _ in 0..20 {
            let s =
                KrigingState::fit(k, random_points(&mut rng, 8, 3), random_values(&mut rng, 8), 0.0).unwrap();
            let xn = random_points(&mut rng, 1, 3);
            let zn = rng.random_range(-1.0..1.0);
            let block = s.conditional_block(&xn).unwrap();
            let batch = UpdateBatch::new(xn.clone(), vec![zn]).unwrap();
            let x = random_points(&mut rng, 1, 3).pop().unwrap();
            let y = random_points(&mut rng, 1, 3).pop().unwrap();
            let corrected = block.update_variance_corrected(&x).unwrap();
            assert_abs_diff_eq!(block.update_variance_naive(&x).unwrap().value, corrected, epsilon = 1e-14);
            assert_abs_diff_eq!(
                block.update_cov_naive(&x, &y).unwrap().value,
                block.update_cov_corrected(&x, &y).unwrap(),
                epsilon = 1e-14
            );
            let single = s.single_point_update(&xn[0], zn, &x).unwrap();
            assert_abs_diff_eq!(single.variance, corrected, epsilon = 1e-14);
            assert_abs_diff_eq!(single.mean, block.update_mean(&batch, &x).unwrap(), epsilon = 1e-13);
        }
    }

    #[test]
    fn covariance_symmetry_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let k = Kernel::matern52(0.8, 0.5).unwrap();
        let s = KrigingState::fit(k, random_points(&mut rng, 7, 2), random_values(&mut rng, 7), 0.0).unwrap();
        let block = s.conditional_block(&random_points(&mut rng, 3, 2)).unwrap();
        for _ in 0..10 {
            let q = random_points(&mut rng, 2, 2);
            assert_eq!(
                s.predict_cov(&q[0], &q[1]).unwrap().to_bits(),
                s.predict_cov(&q[1], &q[0]).unwrap().to_bits()
            );
            assert_eq!(
                block.update_cov_corrected(&q[0], &q[1]).unwrap().to_bits(),
                block.update_cov_corrected(&q[1], &q[0]).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn duplicate_batch_points_fail() {
        let k = Kernel::squared_exponential(1.0, 0.3).unwrap();
        let s = KrigingState::fit(k, pts(&[0.1, 0.6]), vec![1.0, 0.0], 0.0).unwrap();
        let dup_old = UpdateBatch::new(pts(&[0.6]), vec![0.0]).unwrap();
        assert!(matches!(s.assimilate(&dup_old), Err(KrigingError::NotPositiveDefinite { .. })));
        assert!(matches!(s.conditional_block(&pts(&[0.6])), Err(KrigingError::NotPositiveDefinite { .. })));
        let dup_new = UpdateBatch::new(pts(&[0.3, 0.3]), vec![0.0, 0.0]).unwrap();
        assert!(s.assimilate(&dup_new).is_err());
    }

    #[test]
    fn batch_dimension_mismatch() {
        let k = Kernel::squared_exponential(1.0, 0.3).unwrap();
        let s = KrigingState::fit(k, pts(&[0.1]), vec![1.0], 0.0).unwrap();
        let b = UpdateBatch::new(vec![Point::new(vec![0.1, 0.2]).unwrap()], vec![0.0]).unwrap();
        assert!(matches!(s.assimilate(&b), Err(KrigingError::DimensionMismatch { .. })));
        let block = s.conditional_block(&pts(&[0.4])).unwrap();
        let other = UpdateBatch::new(pts(&[0.5]), vec![0.0]).unwrap();
        assert!(matches!(block.update_mean(&other, &p(0.2)), Err(KrigingError::ShapeMismatch(_))));
    }

    #[test]
    fn sequential_and_batch_assimilation_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = Kernel::matern52(1.0, 0.3).unwrap();
        let s = KrigingState::fit(k, random_points(&mut rng, 4, 2), random_values(&mut rng, 4), 0.0).unwrap();
        let xn = random_points(&mut rng, 5, 2);
        let zn = random_values(&mut rng, 5);
        let batch = s.assimilate(&UpdateBatch::new(xn.clone(), zn.clone()).unwrap()).unwrap();
        let mut seq = s.clone();
        for (x, z) in xn.iter().zip(&zn) {
            seq = seq.assimilate(&UpdateBatch::new(vec![x.clone()], vec![*z]).unwrap()).unwrap();
        }
        for q in random_points(&mut rng, 10, 2) {
            let (a, b) = (batch.predict(&q).unwrap(), seq.predict(&q).unwrap());
            assert_abs_diff_eq!(a.mean, b.mean, epsilon = 1e-9);
            assert_abs_diff_eq!(a.variance, b.variance, epsilon = 1e-9);
        }
        // Same factor, built either way.
        assert_abs_diff_eq!(batch.factor().lower(), seq.factor().lower(), epsilon = 1e-10);
    }

    #[test]
    fn schur_complement_matches_sigma_new() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let k = Kernel::squared_exponential(1.0, 0.3).unwrap();
        let x_old = random_points(&mut rng, 5, 2);
        let x_new = random_points(&mut rng, 3, 2);
        let s = KrigingState::fit(k, x_old.clone(), random_values(&mut rng, 5), 0.0).unwrap();
        let block = s.conditional_block(&x_new).unwrap();
        let cross = k.cross(&x_old, &x_new).unwrap();
        let corner = k.gram(&x_new).unwrap();
        let schur = crate::linalg::schur_complement(s.factor(), cross.view(), corner.view()).unwrap();
        assert_abs_diff_eq!(block.sigma_new(), schur.view(), epsilon = 1e-10);
        let ext = block_extend(s.factor(), cross.view(), corner.view(), 0.0).unwrap();
        let l22 = ext.lower().slice(ndarray::s![5.., 5..]).to_owned();
        assert_abs_diff_eq!(l22.dot(&l22.t()), schur, epsilon = 1e-10);
    }

    #[test]
    fn jitter_is_consistent_with_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let k = Kernel::squared_exponential(1.0, 0.3).unwrap();
        let jitter = 1e-3;
        let x_old = random_points(&mut rng, 6, 2);
        let x_new = random_points(&mut rng, 3, 2);
        let z_old = random_values(&mut rng, 6);
        let z_new = random_values(&mut rng, 3);
        let s = KrigingState::fit(k, x_old.clone(), z_old.clone(), jitter).unwrap();
        let block = s.conditional_block(&x_new).unwrap();
        let batch = UpdateBatch::new(x_new.clone(), z_new.clone()).unwrap();
        let all: Vec<Point> = x_old.iter().chain(&x_new).cloned().collect();
        let zs: Vec<f64> = z_old.iter().chain(&z_new).copied().collect();
        for q in random_points(&mut rng, 5, 2) {
            let r = oracle::refit_predict(&k, &all, &zs, &q, None, jitter).unwrap();
            assert_abs_diff_eq!(block.update_mean(&batch, &q).unwrap(), r.mean, epsilon = 1e-10);
            assert_abs_diff_eq!(block.update_variance_corrected(&q).unwrap(), r.variance, epsilon = 1e-10);
        }
    }

    #[test]
    fn decorrelated_block_makes_naive_exact() {
        let (prior, batch) = counterexample();
        let block = prior.conditional_block(batch.points()).unwrap().decorrelated().unwrap();
        let x = p(0.75);
        assert_abs_diff_eq!(
            block.update_variance_naive(&x).unwrap().value,
            block.update_cov_corrected(&x, &x).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn clamp_policy() {
        assert_eq!(clamp_variance(0.5, 1.0), 0.5);
        assert_eq!(clamp_variance(-1e-12, 1.0), 0.0);
        assert_eq!(clamp_variance(-1e-6, 1.0), -1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn setup(seed: u64, n: usize, k: usize) -> (KrigingState, Vec<Point>, Vec<Point>) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kernel = Kernel::matern52(1.0, 0.25).unwrap();
            let x_old = random_points(&mut rng, n, 2);
            let z_old = random_values(&mut rng, n);
            let s = KrigingState::fit(kernel, x_old, z_old, 1e-10).unwrap();
            (s, random_points(&mut rng, k, 2), random_points(&mut rng, 4, 2))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn total_variance_holds(seed in any::<u64>(), n in 0usize..12, k in 1usize..5) {
                let (s, x_new, queries) = setup(seed, n, k);
                let block = s.conditional_block(&x_new).unwrap();
                for q in &queries {
                    let lam = block.weights_new(q).unwrap().lambda_new;
                    let sig = block.sigma_new();
                    let mut quad = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            quad += lam[i] * sig[[i, j]] * lam[j];
                        }
                    }
                    let old = s.predict_cov(q, q).unwrap();
                    let new = block.update_cov_corrected(q, q).unwrap();
                    prop_assert!((old - new - quad).abs() <= 1e-9);
                    prop_assert!(new <= old + 1e-12);
                }
            }

            #[test]
            fn naive_gap_is_off_diagonal(seed in any::<u64>(), n in 0usize..12, k in 1usize..5) {
                let (s, x_new, queries) = setup(seed, n, k);
                let block = s.conditional_block(&x_new).unwrap();
                let sig = block.sigma_new();
                for q in &queries {
                    let lam = block.weights_new(q).unwrap().lambda_new;
                    let mut off = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            if i != j {
                                off += lam[i] * sig[[i, j]] * lam[j];
                            }
                        }
                    }
                    let gap = block.update_cov_naive(q, q).unwrap().value - block.update_cov_corrected(q, q).unwrap();
                    prop_assert!((gap - off).abs() <= 1e-9);
                }
            }

            #[test]
            fn updated_cov_symmetric(seed in any::<u64>(), n in 0usize..10, k in 1usize..4) {
                let (s, x_new, q) = setup(seed, n, k);
                let block = s.conditional_block(&x_new).unwrap();
                prop_assert_eq!(
                    block.update_cov_corrected(&q[0], &q[1]).unwrap(),
                    block.update_cov_corrected(&q[1], &q[0]).unwrap()
                );
            }
        }
    }
}
