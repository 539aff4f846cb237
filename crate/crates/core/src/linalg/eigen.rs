use super::jacobi::jacobi_eigen;
use super::matrix::{dot, Matrix};
use super::tridiagonal::householder_ql_eigen;
use crate::error::{Error, Result};

/// Relative asymmetry accepted before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Largest dimension solved with Jacobi rotations under [`EigenMethod::Auto`].
pub const JACOBI_MAX_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// Unit-norm; the entry of largest magnitude is positive.
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMethod {
    /// Jacobi up to [`JACOBI_MAX_DIM`], Householder + QL above.
    #[default]
    Auto,
    Jacobi,
    HouseholderQl,
}

/// Eigen-decomposition of a symmetric matrix, sorted by eigenvalue descending.
pub fn eig_symmetric(c: &Matrix) -> Result<Vec<EigenPair>> {
    eig_symmetric_with(c, EigenMethod::Auto)
}

pub fn eig_symmetric_with(c: &Matrix, method: EigenMethod) -> Result<Vec<EigenPair>> {
    let sym = checked_symmetrize(c)?;
    let n = sym.rows();
    let mut work = sym.into_vec();

    let method = match method {
        EigenMethod::Auto if n <= JACOBI_MAX_DIM => EigenMethod::Jacobi,
        EigenMethod::Auto => EigenMethod::HouseholderQl,
        m => m,
    };
    let (values, vt) = match method {
        EigenMethod::Jacobi => jacobi_eigen(&mut work, n)?,
        _ => householder_ql_eigen(&mut work, n)?,
    };

    let mut pairs: Vec<EigenPair> = values
        .into_iter()
        .zip(vt.chunks_exact(n))
        .map(|(value, v)| EigenPair {
            value,
            vector: canonical_sign(normalized(v)),
        })
        .collect();
    // Stable sort keeps solver order among exact ties, so output is reproducible.
    pairs.sort_by(|a, b| b.value.total_cmp(&a.value));
    Ok(pairs)
}

/// `nᵀCn / nᵀn`.
pub fn rayleigh_quotient(c: &Matrix, n: &[f64]) -> Result<f64> {
    if !c.is_square() {
        return Err(Error::NotSquare {
            rows: c.rows(),
            cols: c.cols(),
        });
    }
    let nn = dot(n, n);
    if nn == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cn = c.mul_vec(n)?;
    Ok(dot(n, &cn) / nn)
}

/// Rejects non-square or visibly asymmetric input, then returns `(c + cᵀ)/2`.
pub(crate) fn checked_symmetrize(c: &Matrix) -> Result<Matrix> {
    let asymmetry = c.max_asymmetry()?;
    let tolerance = SYMMETRY_TOLERANCE * c.frobenius_norm();
    if asymmetry > tolerance {
        return Err(Error::NotSymmetric { asymmetry, tolerance });
    }
    c.symmetrized()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = dot(v, v).sqrt();
    v.iter().map(|x| x / norm).collect()
}

/// Flips `v` so that its largest-magnitude entry (first one on ties) is positive.
pub fn canonical_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    const METHODS: [EigenMethod; 2] = [EigenMethod::Jacobi, EigenMethod::HouseholderQl];

    #[test]
    fn scaled_identity() {
        for m in METHODS {
            let pairs = eig_symmetric_with(&Matrix::identity(4).scale(3.0), m).unwrap();
            assert_eq!(pairs.len(), 4);
            for p in &pairs {
                assert!((p.value - 3.0).abs() < 1e-14, "{m:?}");
            }
        }
    }

    #[test]
    fn diagonal_matrix() {
        for m in METHODS {
            let pairs = eig_symmetric_with(&Matrix::from_diag(&[1.0, 5.0, 2.0]), m).unwrap();
            let values: Vec<f64> = pairs.iter().map(|p| p.value).collect();
            assert_eq!(values, vec![5.0, 2.0, 1.0]);
            assert_eq!(pairs[0].vector, vec![0.0, 1.0, 0.0]);
            assert_eq!(pairs[1].vector, vec![0.0, 0.0, 1.0]);
            assert_eq!(pairs[2].vector, vec![1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn two_by_two_by_hand() {
        // λ² − 4λ + 3 = 0
        let c = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for m in METHODS {
            let pairs = eig_symmetric_with(&c, m).unwrap();
            assert!((pairs[0].value - 3.0).abs() < 1e-14);
            assert!((pairs[1].value - 1.0).abs() < 1e-14);
            assert!((pairs[0].vector[0] - h).abs() < 1e-14);
            assert!((pairs[0].vector[1] - h).abs() < 1e-14);
            assert!((pairs[1].vector[0].abs() - h).abs() < 1e-14);
            assert!((pairs[1].vector[0] + pairs[1].vector[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn one_by_one() {
        for m in METHODS {
            let pairs = eig_symmetric_with(&Matrix::from_diag(&[-2.5]), m).unwrap();
            assert_eq!(pairs[0].value, -2.5);
            assert_eq!(pairs[0].vector, vec![1.0]);
        }
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        assert!(matches!(
            eig_symmetric(&Matrix::zeros(2, 3)),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
        let c = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        match eig_symmetric(&c) {
            Err(Error::NotSymmetric { asymmetry, .. }) => assert_eq!(asymmetry, 2.0),
            other => panic!("expected asymmetry error, got {other:?}"),
        }
    }

    #[test]
    fn tiny_asymmetry_is_absorbed() {
        let c = Matrix::from_rows(&[[2.0, 1.0 + 1e-12], [1.0, 2.0]]).unwrap();
        let pairs = eig_symmetric(&c).unwrap();
        assert!((pairs[0].value - 3.0).abs() < 1e-11);
    }

    #[test]
    fn rayleigh_cases() {
        let id = Matrix::identity(3);
        assert!((rayleigh_quotient(&id, &[0.3, -2.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let d = Matrix::from_diag(&[5.0, 1.0]);
        assert_eq!(rayleigh_quotient(&d, &[1.0, 0.0]).unwrap(), 5.0);
        let c = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let r = rayleigh_quotient(&c, &[1.0, 0.0]).unwrap();
        assert_eq!(r, 2.0);
        assert!(r < 3.0);
        assert!(matches!(rayleigh_quotient(&c, &[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn sign_canonicalization() {
        assert_eq!(canonical_sign(vec![0.1, -0.9, 0.2]), vec![-0.1, 0.9, -0.2]);
        assert_eq!(canonical_sign(vec![0.6, -0.6]), vec![0.6, -0.6]);
        assert_eq!(canonical_sign(vec![-0.6, 0.6]), vec![0.6, -0.6]);
    }
}
