//! Principal angles and the Grassmannian geodesic distance.
//!
//! Subspaces are given as the span of the leading `p` columns of a matrix.
//! Those columns are orthonormalized by modified Gram–Schmidt with one full
//! re-orthogonalization pass; a column whose residual norm falls below
//! `1e-10` times its original norm (or is exactly zero) is rank deficient.
//! The cosines of the principal angles are the singular values of
//! `Q_Aᵀ Q_B`, clamped to `[-1, 1]` before `acos`.

use super::matrix::Matrix;
use super::svd::svd;
use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis (as columns) of the span of the leading `p` columns.
pub fn orthonormal_basis(a: &Matrix, p: usize) -> Result<Matrix> {
    if p == 0 || a.cols() < p || a.rows() < p {
        return Err(Error::RankDeficient { required: p });
    }
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let mut v = a.column(j);
        let orig = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..2 {
            for c in &q {
                let d: f64 = v.iter().zip(c).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(c) {
                    *x -= d * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if orig == 0.0 || norm <= RANK_TOL * orig {
            return Err(Error::RankDeficient { required: p });
        }
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }
    Ok(Matrix::from_fn(a.rows(), p, |i, j| q[j][i]))
}

/// Principal angles `θ₁ ≤ … ≤ θ_p` in `[0, π/2]`.
///
/// The pair is put in a canonical order (lexicographic on the leading `p`
/// columns) before the product is formed, so the result is bitwise
/// symmetric in `a` and `b`.
pub fn principal_angles(a: &Matrix, b: &Matrix, p: usize) -> Result<Vec<f64>> {
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch(format!("ambient dimensions differ: {} vs {}", a.rows(), b.rows())));
    }
    let qa = orthonormal_basis(a, p)?;
    let qb = orthonormal_basis(b, p)?;
    let (first, second) = if leading_cmp(a, b, p).is_le() { (&qa, &qb) } else { (&qb, &qa) };
    let cross = first.transpose().matmul(second)?;
    let sv = svd(&cross)?;
    // Singular values descend, so the angles ascend.
    Ok(sv.s.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect())
}

/// `√(Σ θₖ²)` over the `p` principal angles.
pub fn geodesic_distance(a: &Matrix, b: &Matrix, p: usize) -> Result<f64> {
    let theta = principal_angles(a, b, p)?;
    Ok(theta.iter().map(|t| t * t).sum::<f64>().sqrt())
}

fn leading_cmp(a: &Matrix, b: &Matrix, p: usize) -> std::cmp::Ordering {
    for i in 0..a.rows() {
        for j in 0..p {
            let o = a[(i, j)].total_cmp(&b[(i, j)]);
            if o.is_ne() {
                return o;
            }
        }
    }
    std::cmp::Ordering::Equal
}
