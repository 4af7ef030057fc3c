//! Dense linear algebra: matrices, SVD, norms and subspace geometry.

mod matrix;
mod subspace;
mod svd;

pub use matrix::{frobenius_distance, reconstruct, reverse_columns, reverse_rows, Matrix};
pub use subspace::{geodesic_distance, orthonormal_basis, principal_angles};
pub use svd::{spectral_norm, svd, SvdTriple, JACOBI_TOL, MAX_SWEEPS};

/// Which matrix norm a distance is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Frobenius,
    Spectral,
}

impl Norm {
    pub fn distance(self, a: &Matrix, b: &Matrix) -> crate::Result<f64> {
        match self {
            Norm::Frobenius => frobenius_distance(a, b),
            Norm::Spectral => spectral_norm(&a.sub(b)?),
        }
    }
}
