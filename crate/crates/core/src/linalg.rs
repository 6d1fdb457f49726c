//! Small dense linear-algebra helpers shared by the model and solver.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for pseudo-inverses and rank tests.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse, dropping singular values below
/// `RANK_CUTOFF * sigma_max`.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = (RANK_CUTOFF * sigma_max).max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(eps)
        .expect("both singular vector sets were computed")
}

/// Every singular value of `m` viewed as a map on its column space, sorted
/// descending. Wide matrices are padded with the zero singular values of
/// their null space, so the result has at least `cols` entries.
pub fn singular_spectrum(m: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut values: Vec<f64> = if rows == 0 || cols == 0 {
        Vec::new()
    } else {
        m.singular_values().iter().copied().collect()
    };
    values.resize(cols.max(values.len()), 0.0);
    values.sort_unstable_by(|a, b| b.total_cmp(a));
    values
}

/// Affine parametrisation `{x : A x = b} = {x_p + Z z}` of a linear equality
/// system, with `Z` orthonormal.
#[derive(Debug, Clone)]
pub struct AffineSubspace {
    pub particular: DVector<f64>,
    pub basis: DMatrix<f64>,
    /// `‖A x_p − b‖∞`; nonzero when the system is inconsistent.
    pub residual: f64,
    pub rank: usize,
}

pub fn affine_solution_set(a: &DMatrix<f64>, b: &DVector<f64>) -> AffineSubspace {
    let (rows, n) = a.shape();
    if rows == 0 {
        return AffineSubspace {
            particular: DVector::zeros(n),
            basis: DMatrix::identity(n, n),
            residual: 0.0,
            rank: 0,
        };
    }
    // Pad with zero rows so the SVD returns a full right basis.
    let square = rows.max(n);
    let mut padded = DMatrix::zeros(square, n);
    padded.rows_mut(0, rows).copy_from(a);
    let mut rhs = DVector::zeros(square);
    rhs.rows_mut(0, rows).copy_from(b);

    let svd = padded.svd(true, true);
    let u = svd.u.as_ref().expect("computed");
    let v_t = svd.v_t.as_ref().expect("computed");
    let sigma_max = svd.singular_values.max();
    let cutoff = RANK_CUTOFF * sigma_max;

    let mut particular = DVector::zeros(n);
    let mut null_cols = Vec::new();
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            let coeff = u.column(i).dot(&rhs) / s;
            particular += v_t.row(i).transpose() * coeff;
        } else {
            null_cols.push(v_t.row(i).transpose());
        }
    }
    let basis = if null_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    let residual = (a * &particular - b).amax();
    AffineSubspace {
        particular,
        basis,
        residual,
        rank,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pseudo_inverse_of_tall_full_rank_is_left_inverse() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]);
        let p = pseudo_inverse(&m);
        assert_relative_eq!(p * m, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn spectrum_pads_wide_matrices() {
        let m = DMatrix::from_row_slice(1, 3, &[3.0, 0.0, 4.0]);
        let s = singular_spectrum(&m);
        assert_eq!(s.len(), 3);
        assert_relative_eq!(s[0], 5.0, epsilon = 1e-12);
        assert_eq!(&s[1..], &[0.0, 0.0]);
    }

    #[test]
    fn affine_set_of_consistent_system() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let b = DVector::from_vec(alloc::vec![2.0]);
        let s = affine_solution_set(&a, &b);
        assert_eq!(s.rank, 1);
        assert_eq!(s.basis.ncols(), 2);
        assert!(s.residual < 1e-12);
        assert!((&a * &s.basis).amax() < 1e-12);
        assert_relative_eq!(s.basis.transpose() * &s.basis, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn inconsistent_system_reports_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let b = DVector::from_vec(alloc::vec![1.0, 2.0]);
        let s = affine_solution_set(&a, &b);
        assert!(s.residual > 0.4);
    }
}
