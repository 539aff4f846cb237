//! Cyclic Jacobi rotations for dense symmetric matrices.
//!
//! Each rotation annihilates one off-diagonal pair `(p, q)`. The working matrix
//! is kept exactly symmetric by updating rows `p` and `q` and mirroring them
//! into the corresponding columns, and the eigenvector basis is stored
//! transposed so that both updates run over contiguous memory.

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Diagonalizes a symmetric `n x n` row-major matrix in place.
///
/// Returns unsorted eigenvalues and an `n x n` row-major matrix whose row `r`
/// is the eigenvector for eigenvalue `r`.
pub(crate) fn jacobi_eigen(a: &mut [f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    debug_assert_eq!(a.len(), n * n);
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }

    let total = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = f64::EPSILON * total;

    for sweep in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(a, n);
        if off <= target {
            return Ok((diagonal(a, n), vt));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Negligible against both diagonal entries: drop it outright.
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                rotate(a, &mut vt, n, p, q);
            }
        }
    }

    Err(Error::NoConvergence {
        sweeps: MAX_SWEEPS,
        off_norm: off_diagonal_norm(a, n),
    })
}

#[inline]
fn rotate(a: &mut [f64], vt: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = a[p * n + q];
    let app = a[p * n + p];
    let aqq = a[q * n + q];

    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.is_finite() {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    } else {
        // |theta| overflowed: t ~ 1 / (2 theta).
        0.5 / theta
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    {
        let (lo, hi) = a.split_at_mut(q * n);
        let row_p = &mut lo[p * n..(p + 1) * n];
        let row_q = &mut hi[..n];
        for (x, y) in row_p.iter_mut().zip(row_q.iter_mut()) {
            let (xp, xq) = (*x, *y);
            *x = c * xp - s * xq;
            *y = s * xp + c * xq;
        }
    }
    a[p * n + p] = app - t * apq;
    a[q * n + q] = aqq + t * apq;
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;
    for k in 0..n {
        if k != p && k != q {
            a[k * n + p] = a[p * n + k];
            a[k * n + q] = a[q * n + k];
        }
    }

    let (lo, hi) = vt.split_at_mut(q * n);
    let row_p = &mut lo[p * n..(p + 1) * n];
    let row_q = &mut hi[..n];
    for (x, y) in row_p.iter_mut().zip(row_q.iter_mut()) {
        let (vp, vq) = (*x, *y);
        *x = c * vp - s * vq;
        *y = s * vp + c * vq;
    }
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            acc += a[i * n + j] * a[i * n + j];
        }
    }
    (2.0 * acc).sqrt()
}

fn diagonal(a: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| a[i * n + i]).collect()
}
