//! Small dense helpers on symmetric matrices shared by the other modules.

use nalgebra::{DMatrix, DVector, SVD};

use crate::scalar::{c, Scalar};

pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * c::<T>(0.5)
}

/// Eigenvalues are returned in nalgebra's order, which is unspecified.
pub fn sym_eigen<T: Scalar>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let e = symmetrize(m).symmetric_eigen();
    (e.eigenvalues, e.eigenvectors)
}

pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let (vals, _) = sym_eigen(m);
    vals.iter().copied().fold(vals[0], |a, b| a.min(b))
}

fn spectral_map<T: Scalar>(m: &DMatrix<T>, f: impl Fn(T) -> T) -> DMatrix<T> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let (vals, vecs) = sym_eigen(m);
    let mut scaled = vecs.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(vals[k]);
    }
    symmetrize(&(scaled * vecs.transpose()))
}

/// Eigenvalue cutoff `rel * |trace|`.
pub fn cutoff<T: Scalar>(m: &DMatrix<T>, rel: f64) -> T {
    c::<T>(rel) * m.trace().abs()
}

/// Moore-Penrose inverse of a symmetric PSD matrix, dropping eigenvalues at or
/// below `rel * trace`.
pub fn pinv_sym<T: Scalar>(m: &DMatrix<T>, rel: f64) -> DMatrix<T> {
    let cut = cutoff(m, rel);
    spectral_map(m, |v| if v > cut { T::one() / v } else { T::zero() })
}

/// Principal square root of a PSD matrix with negative eigenvalues clamped.
pub fn sqrt_psd<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    spectral_map(m, |v| v.max(T::zero()).sqrt())
}

/// Sum of square roots of the clamped eigenvalues; `tr(sqrt(m))` without
/// forming the root.
pub fn trace_sqrt_psd<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let (vals, _) = sym_eigen(m);
    vals.iter().fold(T::zero(), |acc, &v| acc + v.max(T::zero()).sqrt())
}

/// Parametrisation `w = particular + null_basis * z` of the solution set of `a w = b`.
#[derive(Debug, Clone)]
pub struct AffineSet<T: Scalar> {
    pub particular: DVector<T>,
    pub null_basis: DMatrix<T>,
    /// `|a * particular - b|`; large values mean the system is inconsistent.
    pub inconsistency: T,
}

/// Minimum-norm solution and orthonormal null-space basis of `a w = b` via SVD,
/// treating singular values below `rel * max` as zero.
pub fn affine_solutions<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>, rel: f64) -> AffineSet<T> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return AffineSet {
            particular: DVector::zeros(n),
            null_basis: DMatrix::identity(n, n),
            inconsistency: T::zero(),
        };
    }
    // Pad to square so the SVD exposes a full right basis.
    let rows = a.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, a.nrows()).copy_from(b);

    let svd = SVD::new(padded, true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let cut = c::<T>(rel) * smax;

    let mut particular = DVector::zeros(n);
    let mut null_cols = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let vk = v_t.row(k).transpose();
        if s > cut && s > T::zero() {
            let coef = u.column(k).dot(&rhs) / s;
            particular += vk * coef;
        } else {
            null_cols.push(vk);
        }
    }
    let null_basis = if null_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    let inconsistency = (a * &particular - b).norm();
    AffineSet {
        particular,
        null_basis,
        inconsistency,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv_sym(&m, 1e-12);
        assert_relative_eq!(p, DMatrix::from_element(2, 2, 0.25), epsilon = 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = sqrt_psd(&m);
        assert_relative_eq!(&r * &r, m, epsilon = 1e-12);
        assert_relative_eq!(trace_sqrt_psd(&m), r.trace(), epsilon = 1e-12);
    }

    #[test]
    fn affine_set_of_one_equation() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let s = affine_solutions(&a, &b, 1e-12);
        assert_relative_eq!(s.particular, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-12);
        assert_eq!(s.null_basis.ncols(), 1);
        assert_relative_eq!((&a * &s.null_basis).norm(), 0.0, epsilon = 1e-12);
        assert!(s.inconsistency < 1e-12);
    }

    #[test]
    fn inconsistent_system_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let s = affine_solutions(&a, &b, 1e-12);
        assert!(s.inconsistency > 0.5);
    }

    #[test]
    fn empty_system_is_free() {
        let a = DMatrix::<f64>::zeros(0, 3);
        let s = affine_solutions(&a, &DVector::zeros(0), 1e-12);
        assert_eq!(s.null_basis, DMatrix::identity(3, 3));
    }
}
