//! Small dense linear-algebra helpers shared by the solver and the oracles.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix. Returns `+inf` for an empty matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Largest absolute entry (`0` for an empty matrix).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest absolute entry of `a - b`; shapes must agree.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Symmetry test with tolerance relative to the Frobenius norm.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    (m - m.transpose()).norm() <= rel_tol * scale
}

/// Positive semidefinite up to `min eigenvalue >= -rel_tol * ‖m‖_F`.
pub fn is_psd(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    min_eigenvalue(m) >= -rel_tol * m.norm()
}

/// `xᵀ M y`.
pub fn bilinear(x: &DVector<f64>, m: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    x.dot(&(m * y))
}

/// Bounds for the Levenberg-style shift applied when a Hessian block fails to factor.
///
/// The shift is `factor * trace(H) / dim`, starting at `initial` and growing by
/// `growth` until it exceeds `maximum`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub initial: f64,
    pub maximum: f64,
    pub growth: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            initial: 1e-8,
            maximum: 1e-2,
            growth: 10.0,
        }
    }
}

/// A successful positive-definite factorization, with the shift that was needed.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    pub cholesky: Cholesky<f64, Dyn>,
    /// Shift added to the diagonal (0 when none was needed).
    pub shift: f64,
}

impl SpdFactor {
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.cholesky.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.cholesky.solve(rhs)
    }

    /// The factored matrix, i.e. the input plus any shift.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.cholesky.l() * self.cholesky.l().transpose()
    }
}

/// Factors a symmetric matrix as positive definite, shifting the diagonal
/// per `reg` if plain Cholesky fails. On failure returns the smallest
/// eigenvalue of the unshifted matrix.
pub fn factor_spd(h: &DMatrix<f64>, reg: &Regularization) -> Result<SpdFactor, f64> {
    if let Some(cholesky) = Cholesky::new(h.clone()) {
        return Ok(SpdFactor {
            cholesky,
            shift: 0.0,
        });
    }
    let dim = h.nrows().max(1) as f64;
    let base = h.trace() / dim;
    if base > 0.0 && base.is_finite() {
        let mut factor = reg.initial;
        while factor <= reg.maximum * (1.0 + 1e-12) {
            let shift = factor * base;
            let mut shifted = h.clone();
            for i in 0..h.nrows() {
                shifted[(i, i)] += shift;
            }
            if let Some(cholesky) = Cholesky::new(shifted) {
                return Ok(SpdFactor { cholesky, shift });
            }
            factor *= reg.growth;
        }
    }
    Err(min_eigenvalue(h))
}
