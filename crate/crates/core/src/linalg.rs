//! Small dense helpers on top of nalgebra: log-determinants of Gram
//! matrices, symmetric solves with a condition estimate, column selection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Condition number above which a system is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;
/// Condition number above which results carry a conditioning warning.
pub const WARN_CONDITION: f64 = 1e8;

/// `ln det(M'M)` for an n x k matrix with n >= k, from the R factor of a
/// Householder QR. Returns `-inf` when M is numerically rank deficient.
pub fn log_det_gram(m: &DMatrix<f64>) -> f64 {
    let (n, k) = m.shape();
    debug_assert!(n >= k);
    if k == 0 {
        return 0.0;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let r = m.clone().qr().r();
    let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
    let largest = diag.iter().copied().fold(0.0, f64::max);
    let tol = largest * 1e3 * (n.max(k) as f64) * f64::EPSILON;
    if largest == 0.0 || diag.iter().any(|&d| d <= tol) {
        return f64::NEG_INFINITY;
    }
    diag.iter().map(|d| 2.0 * d.ln()).sum()
}

/// Columns `idx` of `m`, in the given order.
pub fn columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

/// Eigen-decomposition based solver for a small symmetric (possibly
/// indefinite) system.
pub struct SymmetricSolve {
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
    condition: f64,
}

impl SymmetricSolve {
    pub fn new(h: &DMatrix<f64>) -> Self {
        let eigen = h.clone().symmetric_eigen();
        let abs = eigen.eigenvalues.iter().map(|v| v.abs());
        let (lo, hi) = abs.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let condition = if h.nrows() == 0 {
            1.0
        } else if lo == 0.0 || !lo.is_finite() {
            f64::INFINITY
        } else {
            hi / lo
        };
        Self { eigen, condition }
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn is_singular(&self) -> bool {
        !(self.condition <= SINGULAR_CONDITION)
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let q = &self.eigen.eigenvectors;
        let mut coeffs = q.transpose() * rhs;
        for (c, l) in coeffs.iter_mut().zip(self.eigen.eigenvalues.iter()) {
            *c /= *l;
        }
        q * coeffs
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let q = &self.eigen.eigenvectors;
        let mut coeffs = q.transpose() * rhs;
        for (mut row, l) in coeffs.row_iter_mut().zip(self.eigen.eigenvalues.iter()) {
            row /= *l;
        }
        q * coeffs
    }
}

/// `(V'V)^{-1}` computed from the QR factor of V, with the condition number
/// of `V'V`. `None` when V is rank deficient beyond the singular threshold.
pub fn gram_inverse(v: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let (n, k) = v.shape();
    if n < k || k == 0 {
        return None;
    }
    let sv = v.clone().svd(false, false).singular_values;
    let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let condition = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
    if !(condition <= SINGULAR_CONDITION) {
        return None;
    }
    let r = v.clone().qr().r();
    let r_inv = r.try_inverse()?;
    let inv = &r_inv * r_inv.transpose();
    // symmetrize away rounding
    let inv = (&inv + inv.transpose()) * 0.5;
    Some((inv, condition))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_identity_is_zero() {
        assert_eq!(log_det_gram(&DMatrix::identity(2, 2)), 0.0);
    }

    #[test]
    fn log_det_detects_duplicate_rows_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, -1.7, 0.3, -1.7]);
        assert_eq!(log_det_gram(&m), f64::NEG_INFINITY);
    }

    #[test]
    fn log_det_matches_direct_determinant() {
        let m = DMatrix::<f64>::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.25]);
        let direct = (m.transpose() * &m).determinant().ln();
        assert!((log_det_gram(&m) - direct).abs() < 1e-12);
    }

    #[test]
    fn symmetric_solve_indefinite() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let s = SymmetricSolve::new(&h);
        assert!((s.condition() - 3.0).abs() < 1e-12);
        let x = s.solve(&DVector::from_vec(vec![3.0, 3.0]));
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
        assert!(SymmetricSolve::new(&DMatrix::zeros(2, 2)).is_singular());
    }

    #[test]
    fn gram_inverse_matches_direct() {
        let v = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.4, 1.0, 2.0, 0.7]);
        let (inv, _) = gram_inverse(&v).unwrap();
        let direct = (v.transpose() * &v).try_inverse().unwrap();
        assert!((inv - direct).amax() < 1e-12);
        let rank1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(gram_inverse(&rank1).is_none());
    }
}
