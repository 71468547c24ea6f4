//! Small dense linear-algebra helpers shared by the geometry modules.

use crate::error::{GeomError, Result};
use nalgebra::{DMatrix, DVector};

/// Relative singularity threshold: |det| < 1e-12 * scale^n flags an error,
/// where scale is the largest absolute entry. Coordinate singularities
/// (sphere poles, horizon charts) must fail loudly instead of producing
/// garbage inverses.
pub const SINGULARITY_FACTOR: f64 = 1e-12;

pub fn invert_metric(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    let scale = g.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let det = g.clone().determinant();
    let threshold = SINGULARITY_FACTOR * scale.powi(n as i32);
    if det.abs() < threshold || !det.is_finite() {
        return Err(GeomError::SingularMetric { det, threshold });
    }
    g.clone()
        .try_inverse()
        .ok_or(GeomError::SingularMetric { det, threshold })
}

/// Eigen-pairs of a symmetric matrix with deterministically fixed vector
/// signs (first component above 1e-12 of the vector norm is made positive).
pub fn sym_eigen(g: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(g.clone());
    let mut vecs = eig.eigenvectors;
    let vals = eig.eigenvalues;
    for j in 0..vecs.ncols() {
        let col = vecs.column(j);
        let norm = col.norm();
        let lead = col.iter().find(|v| v.abs() > 1e-12 * norm);
        if let Some(&v) = lead {
            if v < 0.0 {
                for i in 0..vecs.nrows() {
                    vecs[(i, j)] = -vecs[(i, j)];
                }
            }
        }
    }
    (vals, vecs)
}

/// Max |a - b| entrywise.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut m = 0.0_f64;
    for (x, y) in a.iter().zip(b.iter()) {
        m = m.max((x - y).abs());
    }
    m
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_matrix_is_rejected() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            invert_metric(&g),
            Err(GeomError::SingularMetric { .. })
        ));
    }

    #[test]
    fn eigenvectors_have_fixed_signs() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let (_, v1) = sym_eigen(&g);
        let (_, v2) = sym_eigen(&(-g));
        for j in 0..2 {
            let lead1 = v1.column(j).iter().find(|x| x.abs() > 1e-9).copied().unwrap();
            let lead2 = v2.column(j).iter().find(|x| x.abs() > 1e-9).copied().unwrap();
            assert!(lead1 > 0.0);
            assert!(lead2 > 0.0);
        }
    }
}
