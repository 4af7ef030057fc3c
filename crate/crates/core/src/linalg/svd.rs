//! One-sided (Hestenes) Jacobi SVD.
//!
//! The factorization is returned as `M = U · diag(S) · V`, with the right
//! singular vectors stored as the ROWS of `V`. In textbook notation
//! `M = U Σ Wᵀ`, this crate's `V` is `Wᵀ`.
//!
//! Conventions:
//! - `U` is `m×m`, `V` is `n×n`, `S` has `min(m, n)` entries, nonincreasing.
//! - Sweeps visit column pairs `(p, q)`, `p < q`, in row-cyclic order. A pair
//!   is rotated while `|⟨a_p, a_q⟩| > 1e-12 · ‖a_p‖‖a_q‖`; at most 60 sweeps.
//! - Equal singular values keep the order of the source columns they came
//!   from (stable sort). The order among ties carries no meaning.
//! - In each column of `U` the entry of largest magnitude (first one on ties)
//!   is nonnegative; the matching row of `V` absorbs the sign.
//! - Columns of `U` for numerically zero singular values are completed to an
//!   orthonormal basis by Gram–Schmidt against the standard basis.

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const JACOBI_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 60;

#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdTriple {
    pub fn reconstruct(&self) -> Matrix {
        super::matrix::reconstruct(&self.u, &self.s, &self.v).expect("svd triple shapes are consistent")
    }

    pub fn max_singular_value(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }
}

pub fn svd(m: &Matrix) -> Result<SvdTriple> {
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    if m.rows() >= m.cols() {
        let (u, s, v) = jacobi_tall(m)?;
        Ok(finish(u, s, v))
    } else {
        // Mᵀ = U' S V'  ⇒  M = V'ᵀ S U'ᵀ
        let (u_t, s, v_t) = jacobi_tall(&m.transpose())?;
        Ok(finish(v_t.transpose(), s, u_t.transpose()))
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    Ok(svd(m)?.max_singular_value())
}

/// Column-major working copy of a tall matrix.
struct Columns {
    len: usize,
    data: Vec<f64>,
}

impl Columns {
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.len..(j + 1) * self.len]
    }

    fn pair_mut(&mut self, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(p < q);
        let (lo, hi) = self.data.split_at_mut(q * self.len);
        (&mut lo[p * self.len..(p + 1) * self.len], &mut hi[..self.len])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Returns `(U, S, V)` for `m ≥ n`, sorted, before the sign convention.
fn jacobi_tall(m: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (rows, n) = m.shape();
    let mut work = Columns {
        len: rows,
        data: (0..n).flat_map(|j| (0..rows).map(move |i| (i, j))).map(|(i, j)| m[(i, j)]).collect(),
    };
    let mut rot = Columns { len: n, data: (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 }).collect() };

    let mut norms: Vec<f64> = (0..n).map(|j| dot(work.col(j), work.col(j))).collect();
    let mut converged = n < 2;
    let mut residual = 0.0;
    for _sweep in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        residual = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(work.col(p), work.col(q));
                let scale = (alpha * beta).sqrt();
                let off = gamma.abs() / scale;
                residual = residual.max(off);
                if off <= JACOBI_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (wp, wq) = work.pair_mut(p, q);
                rotate(wp, wq, c, s);
                let (rp, rq) = rot.pair_mut(p, q);
                rotate(rp, rq, c, s);
                norms[p] = dot(work.col(p), work.col(p));
                norms[q] = dot(work.col(q), work.col(q));
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS, residual });
    }

    // Stable descending order by singular value.
    let sigma: Vec<f64> = (0..n).map(|j| dot(work.col(j), work.col(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let s: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let cutoff = smax * (rows.max(n) as f64) * f64::EPSILON;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(rows);
    for &j in &order {
        if sigma[j] > cutoff && sigma[j] > 0.0 {
            u_cols.push(work.col(j).iter().map(|x| x / sigma[j]).collect());
        } else {
            break;
        }
    }
    complete_basis(&mut u_cols, rows);

    let u = Matrix::from_fn(rows, rows, |i, j| u_cols[j][i]);
    let v = Matrix::from_fn(n, n, |i, j| rot.col(order[i])[j]);
    Ok((u, s, v))
}

/// Extends orthonormal `cols` to a full basis of `R^dim` using the standard
/// basis vectors with the largest residual after two Gram–Schmidt passes.
fn complete_basis(cols: &mut Vec<Vec<f64>>, dim: usize) {
    while cols.len() < dim {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..dim {
            let mut v = vec![0.0; dim];
            v[e] = 1.0;
            for _ in 0..2 {
                for c in cols.iter() {
                    let d = dot(&v, c);
                    for (x, y) in v.iter_mut().zip(c) {
                        *x -= d * y;
                    }
                }
            }
            let norm = dot(&v, &v).sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, v));
            }
        }
        let (norm, mut v) = best.expect("dim > 0");
        for x in v.iter_mut() {
            *x /= norm;
        }
        cols.push(v);
    }
}

/// Applies the sign convention and packages the triple.
fn finish(mut u: Matrix, s: Vec<f64>, mut v: Matrix) -> SvdTriple {
    let r = s.len();
    for j in 0..u.cols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..u.rows() {
            let a = u[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if u[(best, j)] < 0.0 {
            for i in 0..u.rows() {
                u[(i, j)] = -u[(i, j)];
            }
            if j < v.rows() {
                for k in 0..v.cols() {
                    v[(j, k)] = -v[(j, k)];
                }
            }
        }
    }
    debug_assert!(r <= u.cols() && r <= v.rows());
    SvdTriple { u, s, v }
}
