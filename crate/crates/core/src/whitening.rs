//! How far a set of latents is from the second-moment assumptions that turn
//! the attention response into a weight-only quadratic form.
//!
//! All second moments are per-token and uncentered:
//! `Ĉ = (1 / (M·N)) Σ_samples Σ_rows x xᵀ`. Deviations are reported as
//! `‖Ĉ - I‖_F / ‖I‖_F`.
//!
//! For the attention matrix, `E[SᵀS]` cannot equal `I` when `S` is
//! row-stochastic, so it is first rescaled to trace `N` and only its shape is
//! compared with the identity.

use serde::Serialize;

use crate::attention::{attention_pass, first_order_terms_from_pass, AttentionWeights, LatentTokens, PerturbationDirection};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WhiteningReport {
    pub n_samples: usize,
    /// Token second moment vs identity.
    pub dev_zz: f64,
    /// Value-row second moment vs identity.
    pub dev_vv: f64,
    /// Trace-normalized `E[SᵀS]` vs identity.
    pub dev_ss: f64,
    /// `|E tr((ΔS V)ᵀ(S ΔV))| / (E‖ΔS V‖² + E‖S ΔV‖²)`.
    pub cross_term_ratio: f64,
}

pub fn whitening_report(
    z_samples: &[LatentTokens],
    w: &AttentionWeights,
    direction: &PerturbationDirection,
    alpha: f64,
) -> Result<WhiteningReport> {
    if z_samples.len() < 2 {
        return Err(Error::invalid(format!(
            "whitening report needs at least 2 samples, got {}",
            z_samples.len()
        )));
    }
    let n_tokens = z_samples[0].n_tokens();
    let d = w.d();
    if let Some(bad) = z_samples.iter().find(|z| z.n_tokens() != n_tokens || z.d() != d) {
        return Err(Error::DimensionMismatch {
            op: "whitening_report",
            lhs: bad.z.shape(),
            rhs: (n_tokens, d),
        });
    }
    if direction.d() != d {
        return Err(Error::DimensionMismatch {
            op: "whitening_report",
            lhs: (1, direction.d()),
            rhs: (d, d),
        });
    }

    let mut zz = Matrix::zeros(d, d);
    let mut vv = Matrix::zeros(d, d);
    let mut ss = Matrix::zeros(n_tokens, n_tokens);
    let (mut a, mut b, mut cross) = (0.0, 0.0, 0.0);
    for z in z_samples {
        let pass = attention_pass(z, w)?;
        accumulate(&mut zz, &z.z.gram());
        accumulate(&mut vv, &pass.v.gram());
        accumulate(&mut ss, &pass.scores.gram());
        let terms = first_order_terms_from_pass(&pass, n_tokens, w, direction, alpha)?;
        a += terms.ds_v.frobenius_norm_sq();
        b += terms.s_dv.frobenius_norm_sq();
        cross += terms.ds_v.frobenius_dot(&terms.s_dv)?;
    }

    let m = z_samples.len() as f64;
    let per_token = 1.0 / (m * n_tokens as f64);
    let dev_zz = identity_deviation(&zz.scale(per_token));
    let dev_vv = identity_deviation(&vv.scale(per_token));

    let ss = ss.scale(1.0 / m);
    let trace: f64 = (0..n_tokens).map(|i| ss[(i, i)]).sum();
    let dev_ss = identity_deviation(&ss.scale(n_tokens as f64 / trace));

    let denom = a + b;
    let cross_term_ratio = if denom == 0.0 { 0.0 } else { (cross / m).abs() / (denom / m) };

    Ok(WhiteningReport {
        n_samples: z_samples.len(),
        dev_zz,
        dev_vv,
        dev_ss,
        cross_term_ratio,
    })
}

fn accumulate(acc: &mut Matrix, x: &Matrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *a += b;
    }
}

/// `‖c - I‖_F / ‖I‖_F`.
pub fn identity_deviation(c: &Matrix) -> f64 {
    let n = c.rows();
    let mut acc = 0.0;
    for (i, row) in c.row_iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            let e = if i == j { x - 1.0 } else { x };
            acc += e * e;
        }
    }
    (acc / n as f64).sqrt()
}
