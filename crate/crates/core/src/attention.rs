//! Reference single-head self-attention and its response to latent perturbations.
//!
//! A perturbation is one unit direction `n` added with strength `alpha` to every
//! token row, `Z' = Z + alpha 1_N nᵀ`. [`delta_attn_exact`] differences two full
//! forward passes; [`delta_attn_first_order`] propagates the perturbation
//! through the linearized chain
//!
//! ```text
//! ΔQ = α 1nᵀW_Q   ΔK = α 1nᵀW_K   ΔV = α 1nᵀW_V
//! ΔL = (Q ΔKᵀ + ΔQ Kᵀ) / √d
//! ΔS = J_softmax(L) ΔL          (row by row)
//! ΔAttn ≈ ΔS V + S ΔV
//! ```

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Tolerance on `‖n‖₂ - 1` for a [`PerturbationDirection`].
pub const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    w_q: Matrix,
    w_k: Matrix,
    w_v: Matrix,
}

impl AttentionWeights {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Result<Self> {
        let d = w_q.rows();
        for (w, name) in [(&w_q, "w_q"), (&w_k, "w_k"), (&w_v, "w_v")] {
            if w.shape() != (d, d) {
                return Err(Error::invalid(format!(
                    "{name} must be {d}x{d}, got {}x{}",
                    w.rows(),
                    w.cols()
                )));
            }
        }
        Ok(Self { w_q, w_k, w_v })
    }

    pub fn identity(d: usize) -> Self {
        let i = Matrix::identity(d);
        Self::new(i.clone(), i.clone(), i).expect("identity weights are square")
    }

    pub fn d(&self) -> usize {
        self.w_q.rows()
    }

    pub fn w_q(&self) -> &Matrix {
        &self.w_q
    }

    pub fn w_k(&self) -> &Matrix {
        &self.w_k
    }

    pub fn w_v(&self) -> &Matrix {
        &self.w_v
    }

    /// All three projections multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            w_q: self.w_q.scale(s),
            w_k: self.w_k.scale(s),
            w_v: self.w_v.scale(s),
        }
    }
}

/// `N x d` tokens entering a self-attention block, optionally tagged with the
/// denoising timestep they were captured at.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTokens {
    pub z: Matrix,
    pub timestep: Option<u32>,
}

impl LatentTokens {
    pub fn new(z: Matrix) -> Self {
        Self { z, timestep: None }
    }

    pub fn at_timestep(z: Matrix, timestep: u32) -> Self {
        Self {
            z,
            timestep: Some(timestep),
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.z.rows()
    }

    pub fn d(&self) -> usize {
        self.z.cols()
    }
}

/// Unit vector in token-feature space, broadcast to every token row.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDirection(Vec<f64>);

impl PerturbationDirection {
    pub fn new(n: Vec<f64>) -> Result<Self> {
        let norm = dot(&n, &n).sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE || n.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotUnit { norm });
        }
        Ok(Self(n))
    }

    /// Scales `n` to unit length.
    pub fn normalized(n: Vec<f64>) -> Result<Self> {
        let norm = dot(&n, &n).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(Self(n.into_iter().map(|x| x / norm).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn d(&self) -> usize {
        self.0.len()
    }
}

fn check_dims(z: &LatentTokens, w: &AttentionWeights) -> Result<()> {
    if z.d() != w.d() {
        return Err(Error::DimensionMismatch {
            op: "attention",
            lhs: z.z.shape(),
            rhs: (w.d(), w.d()),
        });
    }
    Ok(())
}

fn check_direction(w: &AttentionWeights, n: &PerturbationDirection) -> Result<()> {
    if n.d() != w.d() {
        return Err(Error::DimensionMismatch {
            op: "perturbation",
            lhs: (1, n.d()),
            rhs: (w.d(), w.d()),
        });
    }
    Ok(())
}

/// `(Q, K, V) = (Z W_Q, Z W_K, Z W_V)`.
pub fn project_qkv(z: &LatentTokens, w: &AttentionWeights) -> Result<(Matrix, Matrix, Matrix)> {
    check_dims(z, w)?;
    Ok((z.z.matmul(&w.w_q)?, z.z.matmul(&w.w_k)?, z.z.matmul(&w.w_v)?))
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(l: &Matrix) -> Matrix {
    let mut out = l.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Applies the softmax Jacobian at `l` to `dl`, row by row:
/// `ΔS_i = (diag(s) - s sᵀ) ΔL_i` with `s = softmax(l_i)`.
pub fn softmax_jacobian_apply(l: &Matrix, dl: &Matrix) -> Result<Matrix> {
    if l.shape() != dl.shape() {
        return Err(Error::DimensionMismatch {
            op: "softmax_jacobian_apply",
            lhs: l.shape(),
            rhs: dl.shape(),
        });
    }
    let s = softmax_rows(l);
    Ok(jacobian_apply_at(&s, dl))
}

fn jacobian_apply_at(s: &Matrix, dl: &Matrix) -> Matrix {
    let mut out = dl.clone();
    for i in 0..s.rows() {
        let si = s.row(i);
        let mean = dot(si, dl.row(i));
        for (o, &sj) in out.row_mut(i).iter_mut().zip(si) {
            *o = sj * (*o - mean);
        }
    }
    out
}

/// Intermediate quantities of one forward pass.
#[derive(Debug, Clone)]
pub struct AttentionPass {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Scaled logits `QKᵀ/√d`.
    pub logits: Matrix,
    /// Row-stochastic attention matrix.
    pub scores: Matrix,
    pub output: Matrix,
}

pub fn attention_pass(z: &LatentTokens, w: &AttentionWeights) -> Result<AttentionPass> {
    let (q, k, v) = project_qkv(z, w)?;
    let logits = q.matmul_transpose(&k)?.scale(1.0 / (w.d() as f64).sqrt());
    let scores = softmax_rows(&logits);
    let output = scores.matmul(&v)?;
    Ok(AttentionPass {
        q,
        k,
        v,
        logits,
        scores,
        output,
    })
}

/// `softmax(QKᵀ/√d) V`.
pub fn attention_forward(z: &LatentTokens, w: &AttentionWeights) -> Result<Matrix> {
    Ok(attention_pass(z, w)?.output)
}

fn perturbed(z: &LatentTokens, n: &PerturbationDirection, alpha: f64) -> LatentTokens {
    let mut zp = z.clone();
    for i in 0..zp.z.rows() {
        for (x, &nj) in zp.z.row_mut(i).iter_mut().zip(n.as_slice()) {
            *x += alpha * nj;
        }
    }
    zp
}

/// `Attn(Z + α 1nᵀ) - Attn(Z)` from two full forward passes.
pub fn delta_attn_exact(
    z: &LatentTokens,
    w: &AttentionWeights,
    n: &PerturbationDirection,
    alpha: f64,
) -> Result<Matrix> {
    check_dims(z, w)?;
    check_direction(w, n)?;
    let base = attention_forward(z, w)?;
    let moved = attention_forward(&perturbed(z, n, alpha), w)?;
    moved.sub(&base)
}

/// The two pieces of the linearized response, `ΔS V` and `S ΔV`.
#[derive(Debug, Clone)]
pub struct FirstOrderTerms {
    pub ds_v: Matrix,
    pub s_dv: Matrix,
}

impl FirstOrderTerms {
    pub fn total(&self) -> Matrix {
        self.ds_v.add(&self.s_dv).expect("terms share a shape")
    }
}

pub fn first_order_terms(
    z: &LatentTokens,
    w: &AttentionWeights,
    n: &PerturbationDirection,
    alpha: f64,
) -> Result<FirstOrderTerms> {
    let pass = attention_pass(z, w)?;
    first_order_terms_from_pass(&pass, z.n_tokens(), w, n, alpha)
}

pub(crate) fn first_order_terms_from_pass(
    pass: &AttentionPass,
    n_tokens: usize,
    w: &AttentionWeights,
    n: &PerturbationDirection,
    alpha: f64,
) -> Result<FirstOrderTerms> {
    check_direction(w, n)?;
    let broadcast = Matrix::broadcast_row(n_tokens, n.as_slice()).scale(alpha);
    let dq = broadcast.matmul(&w.w_q)?;
    let dk = broadcast.matmul(&w.w_k)?;
    let dv = broadcast.matmul(&w.w_v)?;

    let dl = pass
        .q
        .matmul_transpose(&dk)?
        .add(&dq.matmul_transpose(&pass.k)?)?
        .scale(1.0 / (w.d() as f64).sqrt());
    let ds = jacobian_apply_at(&pass.scores, &dl);

    Ok(FirstOrderTerms {
        ds_v: ds.matmul(&pass.v)?,
        s_dv: pass.scores.matmul(&dv)?,
    })
}

/// First-order prediction `ΔS V + S ΔV` of [`delta_attn_exact`].
pub fn delta_attn_first_order(
    z: &LatentTokens,
    w: &AttentionWeights,
    n: &PerturbationDirection,
    alpha: f64,
) -> Result<Matrix> {
    Ok(first_order_terms(z, w, n, alpha)?.total())
}

/// Monte-Carlo estimate of `E‖ΔAttn‖_F²` with the decomposition used to
/// justify dropping the cross term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityEstimate {
    pub n_samples: usize,
    /// Mean of `‖ΔAttn_exact‖_F²`.
    pub mean_sq_norm: f64,
    /// Mean of `‖ΔS V‖_F²` (first order).
    pub ds_v_sq: f64,
    /// Mean of `‖S ΔV‖_F²` (first order).
    pub s_dv_sq: f64,
    /// Mean of `tr((ΔS V)ᵀ (S ΔV))`; the expansion of the squared norm carries
    /// it twice.
    pub cross_trace: f64,
}

impl SensitivityEstimate {
    /// `|E tr((ΔS V)ᵀ(S ΔV))| / (E‖ΔS V‖² + E‖S ΔV‖²)`, in `[0, 1/2]`.
    pub fn cross_term_ratio(&self) -> f64 {
        let denom = self.ds_v_sq + self.s_dv_sq;
        if denom == 0.0 {
            0.0
        } else {
            self.cross_trace.abs() / denom
        }
    }
}

/// Averages the exact squared response and its first-order pieces over samples.
///
/// Samples are accumulated in order, so the result is bit-reproducible.
pub fn empirical_sensitivity(
    z_samples: &[LatentTokens],
    w: &AttentionWeights,
    n: &PerturbationDirection,
    alpha: f64,
) -> Result<SensitivityEstimate> {
    if z_samples.is_empty() {
        return Err(Error::invalid("empirical_sensitivity needs at least one sample"));
    }
    check_direction(w, n)?;
    let (mut total, mut a, mut b, mut cross) = (0.0, 0.0, 0.0, 0.0);
    for z in z_samples {
        check_dims(z, w)?;
        let pass = attention_pass(z, w)?;
        let moved = attention_forward(&perturbed(z, n, alpha), w)?;
        total += moved.sub(&pass.output)?.frobenius_norm_sq();
        let terms = first_order_terms_from_pass(&pass, z.n_tokens(), w, n, alpha)?;
        a += terms.ds_v.frobenius_norm_sq();
        b += terms.s_dv.frobenius_norm_sq();
        cross += terms.ds_v.frobenius_dot(&terms.s_dv)?;
    }
    let m = z_samples.len() as f64;
    Ok(SensitivityEstimate {
        n_samples: z_samples.len(),
        mean_sq_norm: total / m,
        ds_v_sq: a / m,
        s_dv_sq: b / m,
        cross_trace: cross / m,
    })
}

/// Mean `‖ΔAttn_exact‖_F²` alone; cheaper than [`empirical_sensitivity`]
/// when the decomposition is not needed. `bases` holds precomputed forward
/// outputs for `z_samples`.
pub fn mean_exact_sq_norm(
    z_samples: &[LatentTokens],
    bases: &[Matrix],
    w: &AttentionWeights,
    n: &PerturbationDirection,
    alpha: f64,
) -> Result<f64> {
    if z_samples.is_empty() || z_samples.len() != bases.len() {
        return Err(Error::invalid("need one base output per nonempty sample"));
    }
    check_direction(w, n)?;
    let mut total = 0.0;
    for (z, base) in z_samples.iter().zip(bases) {
        let moved = attention_forward(&perturbed(z, n, alpha), w)?;
        total += moved.sub(base)?.frobenius_norm_sq();
    }
    Ok(total / z_samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{gaussian_weights, random_direction, stream_rng, whitened_tokens};

    /// Entry-by-entry attention written without any shared helpers.
    fn naive_attention(z: &Matrix, w: &AttentionWeights) -> Matrix {
        let (n, d) = z.shape();
        let proj = |m: &Matrix| {
            let mut out = vec![vec![0.0; d]; n];
            for (i, row) in out.iter_mut().enumerate() {
                for (j, x) in row.iter_mut().enumerate() {
                    for k in 0..d {
                        *x += z[(i, k)] * m[(k, j)];
                    }
                }
            }
            out
        };
        let (q, k, v) = (proj(w.w_q()), proj(w.w_k()), proj(w.w_v()));
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| (0..d).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
            let total: f64 = e.iter().sum();
            for c in 0..d {
                out[(i, c)] = (0..n).map(|j| e[j] / total * v[j][c]).sum();
            }
        }
        out
    }

    fn random_instance(seed: u64, n: usize, d: usize) -> (LatentTokens, AttentionWeights, PerturbationDirection) {
        let mut rng = stream_rng(seed, 0);
        let w = gaussian_weights(&mut rng, d);
        let z = whitened_tokens(&mut rng, n, d);
        let dir = random_direction(&mut rng, d);
        (z, w, dir)
    }

    #[test]
    fn projections_identity_and_scaling() {
        let z = LatentTokens::new(Matrix::identity(4));
        let (q, k, v) = project_qkv(&z, &AttentionWeights::identity(4)).unwrap();
        assert_eq!(q, Matrix::identity(4));
        assert_eq!(k, Matrix::identity(4));
        assert_eq!(v, Matrix::identity(4));

        let (zr, w, _) = random_instance(1, 5, 4);
        let w2 = AttentionWeights::new(Matrix::identity(4).scale(2.0), w.w_k().clone(), w.w_v().clone()).unwrap();
        let (q, _, _) = project_qkv(&zr, &w2).unwrap();
        assert_eq!(q, zr.z.scale(2.0));
    }

    #[test]
    fn projections_match_per_entry_oracle() {
        let (z, w, _) = random_instance(2, 6, 5);
        let (q, _, _) = project_qkv(&z, &w).unwrap();
        for i in 0..6 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += z.z[(i, k)] * w.w_q()[(k, j)];
                }
                assert_eq!(q[(i, j)], acc);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let z = LatentTokens::new(Matrix::zeros(3, 4));
        let w = AttentionWeights::identity(5);
        assert!(matches!(project_qkv(&z, &w), Err(Error::DimensionMismatch { .. })));
        assert!(attention_forward(&z, &w).is_err());
        assert!(AttentionWeights::new(Matrix::zeros(2, 2), Matrix::zeros(2, 3), Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn single_token_passes_value_row_through() {
        let z = LatentTokens::new(Matrix::from_rows(&[[0.3, -1.2, 2.0]]).unwrap());
        let out = attention_forward(&z, &AttentionWeights::identity(3)).unwrap();
        assert_eq!(out, z.z);
    }

    #[test]
    fn zero_logits_average_values() {
        let (z, w, _) = random_instance(3, 6, 4);
        let zero = Matrix::zeros(4, 4);
        let w0 = AttentionWeights::new(zero.clone(), zero, w.w_v().clone()).unwrap();
        let pass = attention_pass(&z, &w0).unwrap();
        for x in pass.scores.as_slice() {
            assert!((x - 1.0 / 6.0).abs() < 1e-15);
        }
        for c in 0..4 {
            let mean = pass.v.column(c).iter().sum::<f64>() / 6.0;
            for i in 0..6 {
                assert!((pass.output[(i, c)] - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let (z, w, _) = random_instance(4, 8, 4);
        let diff = attention_forward(&z, &w).unwrap().max_abs_diff(&naive_attention(&z.z, &w)).unwrap();
        assert!(diff <= 1e-12, "diff {diff}");
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_rows(&Matrix::from_rows(&[[0.0, 0.0]]).unwrap());
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
        let s = softmax_rows(&Matrix::from_rows(&[[1000.0, 0.0]]).unwrap());
        assert_eq!(s[(0, 0)], 1.0);
        assert!(s[(0, 1)] >= 0.0 && s[(0, 1)] < 1e-300);
        let s = softmax_rows(&Matrix::from_rows(&[[1f64.ln(), 2f64.ln(), 3f64.ln()]]).unwrap());
        for (x, e) in s.as_slice().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((x - e).abs() < 1e-15);
        }
    }

    #[test]
    fn jacobian_by_hand_and_zero() {
        let l = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let eps = 1e-3;
        let out = softmax_jacobian_apply(&l, &Matrix::from_rows(&[[eps, 0.0]]).unwrap()).unwrap();
        assert!((out[(0, 0)] - eps / 4.0).abs() < 1e-18);
        assert!((out[(0, 1)] + eps / 4.0).abs() < 1e-18);

        let l = Matrix::from_rows(&[[0.3, -2.0, 1.0]]).unwrap();
        let zero = softmax_jacobian_apply(&l, &Matrix::zeros(1, 3)).unwrap();
        assert_eq!(zero.frobenius_norm_sq(), 0.0);
        assert!(softmax_jacobian_apply(&l, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn exact_delta_trivial_cases() {
        let (z, w, n) = random_instance(5, 6, 4);
        assert_eq!(delta_attn_exact(&z, &w, &n, 0.0).unwrap().frobenius_norm_sq(), 0.0);
        let zero = Matrix::zeros(4, 4);
        let w0 = AttentionWeights::new(zero.clone(), zero.clone(), zero).unwrap();
        assert_eq!(delta_attn_exact(&z, &w0, &n, 0.7).unwrap().frobenius_norm_sq(), 0.0);
    }

    #[test]
    fn first_order_value_only_path() {
        let (z, _, n) = random_instance(6, 5, 3);
        let zero = Matrix::zeros(3, 3);
        let w = AttentionWeights::new(zero.clone(), zero, Matrix::identity(3)).unwrap();
        let alpha = 0.25;
        let terms = first_order_terms(&z, &w, &n, alpha).unwrap();
        assert_eq!(terms.ds_v.frobenius_norm_sq(), 0.0);
        // S is row-stochastic, so S·(α 1nᵀ) = α 1nᵀ.
        let expected = Matrix::broadcast_row(5, n.as_slice()).scale(alpha);
        assert!(terms.total().max_abs_diff(&expected).unwrap() < 1e-15);
        assert_eq!(delta_attn_first_order(&z, &w, &n, 0.0).unwrap().frobenius_norm_sq(), 0.0);
    }

    #[test]
    fn first_order_error_shrinks_linearly_relative() {
        let (z, w, n) = random_instance(7, 12, 6);
        let rel = |alpha: f64| {
            let exact = delta_attn_exact(&z, &w, &n, alpha).unwrap();
            let lin = delta_attn_first_order(&z, &w, &n, alpha).unwrap();
            exact.sub(&lin).unwrap().frobenius_norm() / exact.frobenius_norm()
        };
        let ratio = rel(1e-2) / rel(5e-3);
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn empirical_sensitivity_single_sample_and_zero_alpha() {
        let (z, w, n) = random_instance(8, 7, 4);
        let est = empirical_sensitivity(std::slice::from_ref(&z), &w, &n, 0.05).unwrap();
        let direct = delta_attn_exact(&z, &w, &n, 0.05).unwrap().frobenius_norm_sq();
        assert_eq!(est.mean_sq_norm, direct);
        let est0 = empirical_sensitivity(std::slice::from_ref(&z), &w, &n, 0.0).unwrap();
        assert_eq!(est0.mean_sq_norm, 0.0);
        assert_eq!(est0.cross_term_ratio(), 0.0);
        assert!(empirical_sensitivity(&[], &w, &n, 0.1).is_err());
    }

    #[test]
    fn perturbation_direction_validation() {
        assert!(PerturbationDirection::new(vec![0.6, 0.8]).is_ok());
        assert!(matches!(PerturbationDirection::new(vec![1.0, 1.0]), Err(Error::NotUnit { .. })));
        assert!(matches!(PerturbationDirection::normalized(vec![0.0; 3]), Err(Error::ZeroVector)));
    }
}
