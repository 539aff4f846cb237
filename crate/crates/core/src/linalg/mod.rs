//! Dense `f64` matrices and symmetric eigen-decomposition.

mod eigen;
mod jacobi;
mod matrix;
mod tridiagonal;

pub use eigen::{
    canonical_sign, eig_symmetric, eig_symmetric_with, rayleigh_quotient, EigenMethod, EigenPair,
    JACOBI_MAX_DIM, SYMMETRY_TOLERANCE,
};
pub use matrix::{dot, norm2, Matrix};

pub fn frobenius_norm_sq(a: &Matrix) -> f64 {
    a.frobenius_norm_sq()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> crate::Result<Matrix> {
    a.matmul(b)
}

pub fn transpose(a: &Matrix) -> Matrix {
    a.transpose()
}
