//! Numerical checks of the first-order sensitivity argument on one layer.
//!
//! Each check compares an analytic step against a brute-force route and
//! records a pass/fail verdict against the fixed thresholds below.

use serde::Serialize;

use crate::attention::{
    attention_forward, delta_attn_exact, delta_attn_first_order, empirical_sensitivity, mean_exact_sq_norm,
    softmax_jacobian_apply, softmax_rows, AttentionWeights, PerturbationDirection,
};
use crate::directions::{extract_directions, variant_audit, AuditConfig, AuditReport, CombinedVariant};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampling::{derive_seed, gaussian_vec, random_direction, random_unit_vector, stream_rng, whitened_samples, whitened_tokens};
use crate::stats::{fraction_below, quantile};
use rand::Rng;

pub mod thresholds {
    /// Central finite-difference step for the softmax Jacobian check.
    pub const FD_STEP: f64 = 1e-5;
    pub const JACOBIAN_MAX_ABS_ERROR: f64 = 1e-6;
    pub const FIRST_ORDER_MAX_REL_GAP: f64 = 5e-3;
    /// Minimum shrink of `‖exact - first_order‖_F` when alpha is halved.
    pub const FIRST_ORDER_MIN_SHRINK: f64 = 3.5;
    pub const SPEARMAN_MIN: f64 = 0.8;
    pub const DOMINANCE_QUANTILE: f64 = 0.95;
    pub const CROSS_TERM_MAX: f64 = 0.25;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationConfig {
    pub alpha: f64,
    pub n_tokens: usize,
    pub m_samples: usize,
    pub n_directions: usize,
    pub n_dominance_directions: usize,
    pub n_jacobian_rows: usize,
    pub max_row_len: usize,
    pub n_first_order_instances: usize,
    /// Random directions whose cross term is also audited.
    pub n_cross_term_directions: usize,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            n_tokens: 32,
            m_samples: 256,
            n_directions: 200,
            n_dominance_directions: 500,
            n_jacobian_rows: 100,
            max_row_len: 32,
            n_first_order_instances: 10,
            n_cross_term_directions: 20,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianCheck {
    pub rows: usize,
    pub max_abs_error: f64,
    pub passed: bool,
}

/// `softmax_jacobian_apply` against central differences of `softmax_rows` on
/// random rows of length `2..=max_len`.
pub fn jacobian_check(seed: u64, rows: usize, max_len: usize) -> JacobianCheck {
    let mut rng = stream_rng(seed, 0);
    let h = thresholds::FD_STEP;
    let mut worst = 0.0f64;
    for _ in 0..rows {
        let len = rng.random_range(2..=max_len.max(2));
        let l: Vec<f64> = gaussian_vec(&mut rng, len).into_iter().map(|x| 3.0 * x).collect();
        let dl = gaussian_vec(&mut rng, len);
        let row = |v: Vec<f64>| Matrix::new(1, len, v).expect("finite row");
        let analytic = softmax_jacobian_apply(&row(l.clone()), &row(dl.clone())).expect("same shape");
        let shifted = |sign: f64| softmax_rows(&row(l.iter().zip(&dl).map(|(a, b)| a + sign * h * b).collect()));
        let fd = shifted(1.0).sub(&shifted(-1.0)).expect("same shape").scale(0.5 / h);
        worst = worst.max(analytic.max_abs_diff(&fd).expect("same shape"));
    }
    JacobianCheck {
        rows,
        max_abs_error: worst,
        passed: worst <= thresholds::JACOBIAN_MAX_ABS_ERROR,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstOrderCheck {
    pub alpha: f64,
    pub instances: usize,
    /// Largest `‖exact - first_order‖_F / ‖exact‖_F` at `alpha`.
    pub max_rel_gap: f64,
    /// Smallest `gap(alpha) / gap(alpha / 2)`.
    pub min_shrink: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderGap {
    pub rel_gap: f64,
    pub gap: f64,
    pub gap_half: f64,
}

impl FirstOrderGap {
    pub fn shrink(&self) -> f64 {
        self.gap / self.gap_half
    }
}

pub fn first_order_gap(
    z: &crate::attention::LatentTokens,
    w: &AttentionWeights,
    n: &PerturbationDirection,
    alpha: f64,
) -> Result<FirstOrderGap> {
    let gap = |a: f64| -> Result<(f64, f64)> {
        let exact = delta_attn_exact(z, w, n, a)?;
        let lin = delta_attn_first_order(z, w, n, a)?;
        Ok((exact.sub(&lin)?.frobenius_norm(), exact.frobenius_norm()))
    };
    let (g, norm) = gap(alpha)?;
    let (g_half, _) = gap(alpha / 2.0)?;
    Ok(FirstOrderGap {
        rel_gap: g / norm,
        gap: g,
        gap_half: g_half,
    })
}

/// First-order fidelity over random whitened instances for fixed weights.
pub fn first_order_check(w: &AttentionWeights, alpha: f64, n_tokens: usize, instances: usize, seed: u64) -> Result<FirstOrderCheck> {
    if alpha <= 0.0 {
        return Err(Error::invalid("first-order check needs alpha > 0"));
    }
    let mut rng = stream_rng(seed, 2);
    let (mut max_rel, mut min_shrink) = (0.0f64, f64::INFINITY);
    for _ in 0..instances {
        let z = whitened_tokens(&mut rng, n_tokens, w.d());
        let n = random_direction(&mut rng, w.d());
        let g = first_order_gap(&z, w, &n, alpha)?;
        max_rel = max_rel.max(g.rel_gap);
        min_shrink = min_shrink.min(g.shrink());
    }
    Ok(FirstOrderCheck {
        alpha,
        instances,
        max_rel_gap: max_rel,
        min_shrink,
        passed: max_rel <= thresholds::FIRST_ORDER_MAX_REL_GAP && min_shrink >= thresholds::FIRST_ORDER_MIN_SHRINK,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossTermCheck {
    pub principal_ratio: f64,
    pub principal_ds_v_sq: f64,
    pub principal_s_dv_sq: f64,
    pub principal_cross_trace: f64,
    /// Largest ratio over the audited random directions.
    pub max_random_ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceCheck {
    pub variant: CombinedVariant,
    pub principal_sensitivity: f64,
    pub random_quantile: f64,
    /// Fraction of random directions with strictly smaller sensitivity.
    pub fraction_below: f64,
    pub n_random: usize,
    pub passed: bool,
}

/// Empirical sensitivity of the rank-0 direction against random unit directions.
pub fn principal_dominance(
    w: &AttentionWeights,
    variant: CombinedVariant,
    alpha: f64,
    n_tokens: usize,
    m_samples: usize,
    n_random: usize,
    seed: u64,
) -> Result<DominanceCheck> {
    let samples = whitened_samples(derive_seed(seed, 0), m_samples, n_tokens, w.d());
    let bases = samples.iter().map(|z| attention_forward(z, w)).collect::<Result<Vec<_>>>()?;
    let principal = &extract_directions("", w, 1, variant)?[0];
    let principal_sensitivity = mean_exact_sq_norm(&samples, &bases, w, &principal.as_perturbation()?, alpha)?;

    let mut rng = stream_rng(seed, 3);
    let random = (0..n_random)
        .map(|_| {
            let n = PerturbationDirection::normalized(random_unit_vector(&mut rng, w.d()))?;
            mean_exact_sq_norm(&samples, &bases, w, &n, alpha)
        })
        .collect::<Result<Vec<f64>>>()?;
    let q = quantile(&random, thresholds::DOMINANCE_QUANTILE);
    Ok(DominanceCheck {
        variant,
        principal_sensitivity,
        random_quantile: q,
        fraction_below: fraction_below(&random, principal_sensitivity),
        n_random,
        passed: principal_sensitivity >= q,
    })
}

pub fn cross_term_check(
    w: &AttentionWeights,
    variant: CombinedVariant,
    alpha: f64,
    n_tokens: usize,
    m_samples: usize,
    n_random: usize,
    seed: u64,
) -> Result<CrossTermCheck> {
    let samples = whitened_samples(derive_seed(seed, 0), m_samples, n_tokens, w.d());
    let principal = extract_directions("", w, 1, variant)?[0].as_perturbation()?;
    let est = empirical_sensitivity(&samples, w, &principal, alpha)?;
    let mut rng = stream_rng(seed, 4);
    let mut max_random = 0.0f64;
    for _ in 0..n_random {
        let n = random_direction(&mut rng, w.d());
        max_random = max_random.max(empirical_sensitivity(&samples, w, &n, alpha)?.cross_term_ratio());
    }
    let ratio = est.cross_term_ratio();
    Ok(CrossTermCheck {
        principal_ratio: ratio,
        principal_ds_v_sq: est.ds_v_sq,
        principal_s_dv_sq: est.s_dv_sq,
        principal_cross_trace: est.cross_trace,
        max_random_ratio: max_random,
        passed: ratio <= thresholds::CROSS_TERM_MAX && max_random <= thresholds::CROSS_TERM_MAX,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityCheck {
    pub better: CombinedVariant,
    pub spearman_final: f64,
    pub spearman_eqc: f64,
    pub mean_relative_error_final: f64,
    pub mean_relative_error_eqc: f64,
    pub passed: bool,
}

impl SensitivityCheck {
    fn from_audit(audit: &AuditReport) -> Self {
        let f = audit.score(CombinedVariant::FinalExpr);
        let e = audit.score(CombinedVariant::EqC);
        Self {
            better: audit.better,
            spearman_final: f.spearman,
            spearman_eqc: e.spearman,
            mean_relative_error_final: f.mean_relative_error,
            mean_relative_error_eqc: e.mean_relative_error,
            passed: audit.best_score().spearman >= thresholds::SPEARMAN_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub config: ValidationConfig,
    pub jacobian: JacobianCheck,
    pub first_order: FirstOrderCheck,
    pub sensitivity: SensitivityCheck,
    pub cross_term: CrossTermCheck,
    pub dominance: DominanceCheck,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.jacobian.passed
            && self.first_order.passed
            && self.sensitivity.passed
            && self.cross_term.passed
            && self.dominance.passed
    }
}

/// Runs every check for one layer. Latents, directions and finite-difference
/// rows are drawn from separate streams of `config.seed`.
pub fn run_validation(w: &AttentionWeights, config: &ValidationConfig) -> Result<ValidationReport> {
    if !(config.alpha > 0.0 && config.alpha.is_finite()) {
        return Err(Error::invalid("validation needs alpha > 0"));
    }
    let jacobian = jacobian_check(derive_seed(config.seed, 10), config.n_jacobian_rows, config.max_row_len);
    let first_order = first_order_check(
        w,
        config.alpha,
        config.n_tokens,
        config.n_first_order_instances,
        derive_seed(config.seed, 11),
    )?;
    let audit = variant_audit(
        w,
        &AuditConfig {
            alpha: config.alpha,
            n_tokens: config.n_tokens,
            m_samples: config.m_samples,
            n_directions: config.n_directions,
            seed: config.seed,
        },
    )?;
    let sensitivity = SensitivityCheck::from_audit(&audit);
    let cross_term = cross_term_check(
        w,
        audit.better,
        config.alpha,
        config.n_tokens,
        config.m_samples,
        config.n_cross_term_directions,
        config.seed,
    )?;
    let dominance = principal_dominance(
        w,
        audit.better,
        config.alpha,
        config.n_tokens,
        config.m_samples,
        config.n_dominance_directions,
        config.seed,
    )?;
    Ok(ValidationReport {
        config: *config,
        jacobian,
        first_order,
        sensitivity,
        cross_term,
        dominance,
    })
}
