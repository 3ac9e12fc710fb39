//! Dense SPD factorization, triangular solves and block Cholesky extension.
//!
//! Factors are stored row-major so that the inner products in both the
//! factorization and forward substitution run over contiguous slices.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{KrigingError, Result};

/// Pivots at or below `PIVOT_RTOL * max(n, 16) * diag` are treated as zero.
const PIVOT_RTOL: f64 = f64::EPSILON;

/// Lower-triangular `L` with `L Lᵀ = A + jitter I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: Array2<f64>,
}

impl CholeskyFactor {
    /// The factor of a 0×0 matrix.
    pub fn empty() -> Self {
        CholeskyFactor { lower: Array2::zeros((0, 0)) }
    }

    pub fn size(&self) -> usize {
        self.lower.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }

    pub fn lower(&self) -> ArrayView2<'_, f64> {
        self.lower.view()
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> Array2<f64> {
        self.lower.dot(&self.lower.t())
    }

    fn row(&self, i: usize) -> &[f64] {
        let n = self.size();
        &self.lower.as_slice().expect("standard layout")[i * n..i * n + i + 1]
    }

    /// Forward substitution `b <- L⁻¹ b`, starting at row `start`. Rows
    /// before `start` must already hold their solved values.
    pub(crate) fn forward_in_place_from(&self, b: &mut [f64], start: usize) {
        debug_assert_eq!(b.len(), self.size());
        for i in start..b.len() {
            let row = self.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// `b <- L⁻¹ b`.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        self.forward_in_place_from(b, 0);
    }

    /// `b <- L⁻ᵀ b`.
    pub fn backward_in_place(&self, b: &mut [f64]) {
        let n = self.size();
        let l = self.lower.as_slice().expect("standard layout");
        for i in (0..n).rev() {
            b[i] /= l[i * n + i];
            let bi = b[i];
            for (j, bj) in b[..i].iter_mut().enumerate() {
                *bj -= l[i * n + j] * bi;
            }
        }
    }

    /// `A⁻¹ b` for a single right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.size() {
            return Err(KrigingError::ShapeMismatch(format!(
                "right-hand side has {} rows, factor has {}",
                b.len(),
                self.size()
            )));
        }
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        Ok(x)
    }

    /// `A⁻¹ B`, column by column.
    pub fn solve(&self, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if b.nrows() != self.size() {
            return Err(KrigingError::ShapeMismatch(format!(
                "right-hand side has {} rows, factor has {}",
                b.nrows(),
                self.size()
            )));
        }
        let mut out = Array2::zeros(b.raw_dim());
        let mut col = vec![0.0; self.size()];
        for (j, bj) in b.columns().into_iter().enumerate() {
            col.iter_mut().zip(bj.iter()).for_each(|(c, v)| *c = *v);
            self.forward_in_place(&mut col);
            self.backward_in_place(&mut col);
            out.column_mut(j).iter_mut().zip(&col).for_each(|(o, v)| *o = *v);
        }
        Ok(out)
    }

    /// `(L⁻¹ B)ᵀ` for an `n × k` block `B`, returned as `k × n`.
    pub fn whiten_columns(&self, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if b.nrows() != self.size() {
            return Err(KrigingError::ShapeMismatch(format!(
                "block has {} rows, factor has {}",
                b.nrows(),
                self.size()
            )));
        }
        let mut w = b.t().as_standard_layout().into_owned();
        for mut row in w.rows_mut() {
            self.forward_in_place(row.as_slice_mut().expect("standard layout"));
        }
        Ok(w)
    }
}

/// Inner product with four independent accumulators.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_square(a: ArrayView2<'_, f64>, what: &str) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(KrigingError::ShapeMismatch(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows())
}

fn check_jitter(jitter: f64) -> Result<()> {
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(KrigingError::InvalidArgument(format!(
            "jitter must be finite and nonnegative, got {jitter}"
        )));
    }
    Ok(())
}

/// Factors rows `start..` of `l` in place. Rows before `start` must already
/// be final, and so must columns before `start` of the remaining rows; the
/// rest of the lower triangle holds the matrix to factor (jitter not yet
/// added).
fn factor_rows_from(l: &mut Array2<f64>, start: usize, jitter: f64) -> Result<()> {
    let n = l.nrows();
    let tol = PIVOT_RTOL * n.max(16) as f64;
    let data = l.as_slice_mut().expect("standard layout");
    for i in start..n {
        let (head, tail) = data.split_at_mut(i * n);
        let row_i = &mut tail[..n];
        for j in start..i {
            let row_j = &head[j * n..j * n + j + 1];
            let s = row_i[j] - dot(&row_i[..j], &row_j[..j]);
            row_i[j] = s / row_j[j];
        }
        let diag = row_i[i] + jitter;
        let pivot = diag - dot(&row_i[..i], &row_i[..i]);
        if !(pivot.is_finite() && pivot > tol * diag.abs()) {
            return Err(KrigingError::NotPositiveDefinite { index: i, pivot });
        }
        row_i[i] = pivot.sqrt();
        row_i[i + 1..].iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(())
}

/// Cholesky factorization of `a + jitter I`. Only the lower triangle of `a`
/// is read.
pub fn cholesky(a: ArrayView2<'_, f64>, jitter: f64) -> Result<CholeskyFactor> {
    check_square(a, "matrix")?;
    check_jitter(jitter)?;
    let mut l = a.as_standard_layout().into_owned();
    factor_rows_from(&mut l, 0, jitter)?;
    Ok(CholeskyFactor { lower: l })
}

/// `C - Bᵀ A⁻¹ B` where `factor` factors `A`, `B` is `n × k` and `C` is `k × k`.
pub fn schur_complement(
    factor: &CholeskyFactor,
    cross: ArrayView2<'_, f64>,
    corner: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let k = check_block_shapes(factor, cross, corner)?;
    let w = factor.whiten_columns(cross)?;
    let mut out = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..=i {
            let v = corner[(i, j)] - dot(w.row(i).as_slice().unwrap(), w.row(j).as_slice().unwrap());
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

fn check_block_shapes(
    factor: &CholeskyFactor,
    cross: ArrayView2<'_, f64>,
    corner: ArrayView2<'_, f64>,
) -> Result<usize> {
    let k = check_square(corner, "new block")?;
    if k == 0 {
        return Err(KrigingError::ShapeMismatch("block extension needs k >= 1".into()));
    }
    if cross.nrows() != factor.size() || cross.ncols() != k {
        return Err(KrigingError::ShapeMismatch(format!(
            "cross block is {}x{}, expected {}x{}",
            cross.nrows(),
            cross.ncols(),
            factor.size(),
            k
        )));
    }
    Ok(k)
}

/// Factor of `[[A, B], [Bᵀ, C]] + jitter I` from the factor of `A + jitter I`.
///
/// The old block is copied, never refactored. The off-diagonal block is
/// `(L⁻¹ B)ᵀ` and the trailing block is the Cholesky factor of the Schur
/// complement `C + jitter I - Bᵀ (A + jitter I)⁻¹ B`. Cost is
/// `O(n²k + nk² + k³)` plus the `O(n²)` copy.
pub fn block_extend(
    factor: &CholeskyFactor,
    cross: ArrayView2<'_, f64>,
    corner: ArrayView2<'_, f64>,
    jitter: f64,
) -> Result<CholeskyFactor> {
    let k = check_block_shapes(factor, cross, corner)?;
    check_jitter(jitter)?;
    let n = factor.size();
    let w = factor.whiten_columns(cross)?;
    let mut l = Array2::zeros((n + k, n + k));
    l.slice_mut(s![..n, ..n]).assign(&factor.lower);
    l.slice_mut(s![n.., ..n]).assign(&w);
    for i in 0..k {
        for j in 0..=i {
            l[(n + i, n + j)] = corner[(i, j)];
        }
    }
    // Leading n entries of rows n.. are final, so factoring the trailing
    // rows subtracts W Wᵀ from C on the way.
    factor_rows_from(&mut l, n, jitter)?;
    Ok(CholeskyFactor { lower: l })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut impl Rng, n: usize) -> Array2<f64> {
        let g = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        let mut a = g.dot(&g.t());
        for i in 0..n {
            a[(i, i)] += n as f64 * 0.1;
        }
        a
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn scalar_factor() {
        let f = cholesky(array![[4.0]].view(), 0.0).unwrap();
        assert_eq!(f.lower(), array![[2.0]]);
    }

    #[test]
    fn counterexample_gram_factor() {
        let a = array![[0.5, 0.5], [0.5, 1.0]];
        let f = cholesky(a.view(), 0.0).unwrap();
        let r = 0.5f64.sqrt();
        assert_abs_diff_eq!(f.lower(), array![[r, 0.0], [r, r]].view(), epsilon = 1e-15);
        assert_abs_diff_eq!(f.reconstruct(), a, epsilon = 1e-15);
    }

    #[test]
    fn counterexample_weights() {
        let f = cholesky(array![[0.5, 0.5], [0.5, 1.0]].view(), 0.0).unwrap();
        let w = f.solve_vec(&[0.5, 0.75]).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let a = array![[0.5, 0.5], [0.5, 0.5]];
        assert!(matches!(cholesky(a.view(), 0.0), Err(KrigingError::NotPositiveDefinite { index: 1, .. })));
        // jitter makes it definite
        assert!(cholesky(a.view(), 1e-8).is_ok());
        let indefinite = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(indefinite.view(), 0.0).is_err());
    }

    #[test]
    fn shape_and_argument_errors() {
        let rect = Array2::<f64>::zeros((2, 3));
        assert!(matches!(cholesky(rect.view(), 0.0), Err(KrigingError::ShapeMismatch(_))));
        assert!(matches!(cholesky(array![[1.0]].view(), -1.0), Err(KrigingError::InvalidArgument(_))));
        let f = cholesky(array![[1.0]].view(), 0.0).unwrap();
        assert!(f.solve_vec(&[1.0, 2.0]).is_err());
        assert!(f.solve(Array2::zeros((3, 1)).view()).is_err());
        let empty_corner = Array2::<f64>::zeros((0, 0));
        assert!(block_extend(&f, Array2::zeros((1, 0)).view(), empty_corner.view(), 0.0).is_err());
        assert!(block_extend(&f, Array2::zeros((2, 1)).view(), array![[1.0]].view(), 0.0).is_err());
    }

    #[test]
    fn solve_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_spd(&mut rng, 7);
        let f = cholesky(a.view(), 0.0).unwrap();
        let x = f.solve(a.view()).unwrap();
        assert_abs_diff_eq!(x, Array2::eye(7), epsilon = 1e-10);
    }

    #[test]
    fn solve_residual_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let a = random_spd(&mut rng, 8);
            let b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = cholesky(a.view(), 0.0).unwrap().solve_vec(&b).unwrap();
            let ax = a.dot(&ndarray::Array1::from(x));
            for (r, bi) in ax.iter().zip(&b) {
                assert!((r - bi).abs() <= 1e-9 * (1.0 + bi.abs()));
            }
        }
    }

    #[test]
    fn extend_from_empty_is_plain_cholesky() {
        let c = array![[2.0, 0.3], [0.3, 1.0]];
        let ext =
            block_extend(&CholeskyFactor::empty(), Array2::zeros((0, 2)).view(), c.view(), 0.0).unwrap();
        assert_eq!(ext, cholesky(c.view(), 0.0).unwrap());
    }

    #[test]
    fn extend_6_plus_3_matches_fresh() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let full = random_spd(&mut rng, 9);
        let a = full.slice(s![..6, ..6]);
        let f = cholesky(a, 0.0).unwrap();
        let ext = block_extend(&f, full.slice(s![..6, 6..]), full.slice(s![6.., 6..]), 0.0).unwrap();
        let fresh = cholesky(full.view(), 0.0).unwrap();
        assert_abs_diff_eq!(ext.lower(), fresh.lower(), epsilon = 1e-9);
    }

    #[test]
    fn extend_rejects_duplicate_rows() {
        let a = array![[1.0, 0.5], [0.5, 1.0]];
        let f = cholesky(a.view(), 0.0).unwrap();
        // New point identical to old point 0.
        let cross = array![[1.0], [0.5]];
        let corner = array![[1.0]];
        assert!(matches!(
            block_extend(&f, cross.view(), corner.view(), 0.0),
            Err(KrigingError::NotPositiveDefinite { index: 2, .. })
        ));
    }

    #[test]
    fn trailing_block_is_schur_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let full = random_spd(&mut rng, 8);
        let f = cholesky(full.slice(s![..5, ..5]), 0.0).unwrap();
        let (b, c) = (full.slice(s![..5, 5..]), full.slice(s![5.., 5..]));
        let schur = schur_complement(&f, b, c).unwrap();
        let ext = block_extend(&f, b, c, 0.0).unwrap();
        let l22 = ext.lower().slice(s![5.., 5..]).to_owned();
        assert_abs_diff_eq!(l22.dot(&l22.t()), schur, epsilon = 1e-10);
        // oracle: C - Bᵀ A⁻¹ B with a general solve
        let ainv_b = f.solve(b).unwrap();
        assert_abs_diff_eq!(c.to_owned() - b.t().dot(&ainv_b), schur, epsilon = 1e-10);
    }

    #[test]
    fn jitter_lands_on_trailing_diagonal_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let full = random_spd(&mut rng, 5);
        let j = 0.25;
        let f = cholesky(full.slice(s![..3, ..3]), j).unwrap();
        let ext = block_extend(&f, full.slice(s![..3, 3..]), full.slice(s![3.., 3..]), j).unwrap();
        let fresh = cholesky(full.view(), j).unwrap();
        assert_abs_diff_eq!(ext.lower(), fresh.lower(), epsilon = 1e-12);
        let expected = &full + &(Array2::<f64>::eye(5) * j);
        assert_abs_diff_eq!(ext.reconstruct(), expected, epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reconstruction_holds(seed in any::<u64>(), n in 1usize..30, jitter in prop::sample::select(vec![0.0, 1e-10, 1e-3])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(&mut rng, n);
            let f = cholesky(a.view(), jitter).unwrap();
            for i in 0..n {
                prop_assert!(f.lower()[(i, i)] > 0.0);
                for j in i + 1..n {
                    prop_assert_eq!(f.lower()[(i, j)], 0.0);
                }
            }
            let err = max_abs(&(f.reconstruct() - &a - Array2::<f64>::eye(n) * jitter));
            prop_assert!(err <= 1e-10 * (1.0 + max_abs(&a)));
        }

        #[test]
        fn block_extend_matches_fresh(seed in any::<u64>(), n in 0usize..=50, k in 1usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let full = random_spd(&mut rng, n + k);
            let f = if n == 0 {
                CholeskyFactor::empty()
            } else {
                cholesky(full.slice(s![..n, ..n]), 0.0).unwrap()
            };
            let ext = block_extend(&f, full.slice(s![..n, n..]), full.slice(s![n.., n..]), 0.0).unwrap();
            let fresh = cholesky(full.view(), 0.0).unwrap();
            let scale = max_abs(&fresh.lower().to_owned());
            let err = max_abs(&(ext.lower().to_owned() - fresh.lower()));
            prop_assert!(err <= 1e-9 * scale, "err {err}");
        }

        #[test]
        fn solve_then_multiply_is_identity(seed in any::<u64>(), n in 1usize..25, m in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(&mut rng, n);
            let b = Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0));
            let x = cholesky(a.view(), 0.0).unwrap().solve(b.view()).unwrap();
            let err = max_abs(&(a.dot(&x) - &b));
            prop_assert!(err <= 1e-9 * (1.0 + max_abs(&b)));
        }

        #[test]
        fn whitening_matches_forward_solves(seed in any::<u64>(), n in 1usize..20, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(&mut rng, n);
            let b = Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0..1.0));
            let f = cholesky(a.view(), 0.0).unwrap();
            let w = f.whiten_columns(b.view()).unwrap();
            // L (L⁻¹ B) = B
            let back = f.lower().dot(&w.t());
            prop_assert!(max_abs(&(back - &b)) <= 1e-10 * (1.0 + max_abs(&b)));
        }
    }
}
