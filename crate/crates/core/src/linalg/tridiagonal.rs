//! Householder reduction to tridiagonal form followed by implicit-shift QL.
//!
//! Both phases are arranged so that the inner loops walk rows of row-major
//! storage: the reflectors read row `k` of the (symmetric) working matrix, and
//! the QL rotations act on rows of the transposed eigenvector basis.

use crate::error::{Error, Result};

const MAX_QL_ITERATIONS: usize = 60;

/// Diagonalizes a symmetric `n x n` row-major matrix in place.
///
/// Same contract as the Jacobi solver: unsorted eigenvalues plus a row-major
/// matrix whose row `r` is the eigenvector for eigenvalue `r`.
pub(crate) fn householder_ql_eigen(a: &mut [f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    debug_assert_eq!(a.len(), n * n);
    let (mut diag, mut off, mut zt) = tridiagonalize(a, n);
    tridiagonal_ql(&mut diag, &mut off, &mut zt, n)?;
    Ok((diag, zt))
}

struct Reflector {
    // Acts on indices `start..n`.
    start: usize,
    v: Vec<f64>,
    beta: f64,
}

/// Returns `(diag, off, qᵀ)` with `a = q·T·qᵀ`, `off[i] = T[i][i+1]`, `off[n-1] = 0`.
fn tridiagonalize(a: &mut [f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
    let mut p = vec![0.0; n];

    for k in 0..n.saturating_sub(2) {
        diag[k] = a[k * n + k];
        let start = k + 1;
        let m = n - start;
        let x = &a[k * n + start..(k + 1) * n];
        let alpha = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha == 0.0 {
            off[k] = 0.0;
            continue;
        }
        let r = if x[0] > 0.0 { -alpha } else { alpha };
        let mut v = x.to_vec();
        v[0] -= r;
        let beta = 1.0 / (alpha * (alpha + x[0].abs()));
        off[k] = r;

        // p = beta * A22 v, then w = p - (beta/2)(pᵀv) v.
        let p = &mut p[..m];
        for (i, pi) in p.iter_mut().enumerate() {
            let row = &a[(start + i) * n + start..(start + i + 1) * n];
            *pi = beta * row.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>();
        }
        let kappa = 0.5 * beta * p.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>();
        for (pi, vi) in p.iter_mut().zip(&v) {
            *pi -= kappa * vi;
        }
        // A22 -= v wᵀ + w vᵀ
        for i in 0..m {
            let (vi, wi) = (v[i], p[i]);
            let row = &mut a[(start + i) * n + start..(start + i + 1) * n];
            for ((x, &vj), &wj) in row.iter_mut().zip(&v).zip(p.iter()) {
                *x -= vi * wj + wi * vj;
            }
        }
        reflectors.push(Reflector { start, v, beta });
    }
    if n >= 2 {
        diag[n - 2] = a[(n - 2) * n + n - 2];
        off[n - 2] = a[(n - 2) * n + n - 1];
    }
    diag[n - 1] = a[(n - 1) * n + n - 1];
    off[n - 1] = 0.0;

    // Backward accumulation of q = H_0 H_1 ... H_last; each step touches only
    // the trailing block that later reflectors have filled.
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    let mut w = vec![0.0; n];
    for refl in reflectors.iter().rev() {
        let s = refl.start;
        let w = &mut w[s..];
        w.fill(0.0);
        for (i, &vi) in refl.v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let row = &q[(s + i) * n + s..(s + i + 1) * n];
            for (wj, &x) in w.iter_mut().zip(row) {
                *wj += vi * x;
            }
        }
        for (i, &vi) in refl.v.iter().enumerate() {
            let f = refl.beta * vi;
            if f == 0.0 {
                continue;
            }
            let row = &mut q[(s + i) * n + s..(s + i + 1) * n];
            for (x, &wj) in row.iter_mut().zip(w.iter()) {
                *x -= f * wj;
            }
        }
    }

    let mut qt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            qt[j * n + i] = q[i * n + j];
        }
    }
    (diag, off, qt)
}

/// Implicit-shift QL on a symmetric tridiagonal matrix, rotating the rows of `zt`.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], zt: &mut [f64], n: usize) -> Result<()> {
    let eps = f64::EPSILON;
    let mut shift = 0.0;
    let mut tst1 = 0.0f64;

    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }

        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return Err(Error::NoConvergence {
                        sweeps: iter,
                        off_norm: e[l].abs(),
                    });
                }

                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                shift += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (lo, hi) = zt.split_at_mut((i + 1) * n);
                    let zi = &mut lo[i * n..];
                    let zi1 = &mut hi[..n];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let hb = *b;
                        *b = s * *a + c * hb;
                        *a = c * *a - s * hb;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;

                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += shift;
        e[l] = 0.0;
    }
    Ok(())
}
