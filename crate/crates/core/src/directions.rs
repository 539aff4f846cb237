//! Editing directions as eigenvectors of a combined projection matrix.
//!
//! For a unit direction `n`, the first-order response of the attention output
//! to `Z + α 1nᵀ` is approximated by the quadratic form `α² nᵀ C n` with
//!
//! ```text
//! C = W_QᵀW_Q + W_KᵀW_K + W_V W_Vᵀ     (CombinedVariant::FinalExpr)
//! C = W_QᵀW_Q + W_KᵀW_K + W_VᵀW_V      (CombinedVariant::EqC)
//! ```
//!
//! The two variants differ only in the value term. Both are kept, and
//! [`variant_audit`] measures which one tracks the empirical response better
//! for a given layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_forward, mean_exact_sq_norm, AttentionWeights, PerturbationDirection,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, eig_symmetric, Matrix};
use crate::sampling::{random_unit_vector, stream_rng, whitened_samples};
use crate::stats::{pearson, spearman};

pub const DEFAULT_TOP_K: usize = 8;

/// Adjacent eigenvalues closer than this fraction of the largest are treated
/// as one degenerate cluster.
pub const DEGENERACY_REL_GAP: f64 = 1e-8;

/// Tolerance on `‖n‖₂ - 1` accepted by [`predicted_sensitivity`].
pub const PREDICT_UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum CombinedVariant {
    /// Value term `W_V W_Vᵀ`.
    #[default]
    #[serde(rename = "final")]
    FinalExpr,
    /// Value term `W_VᵀW_V`.
    #[serde(rename = "eqc")]
    EqC,
}

impl CombinedVariant {
    pub const ALL: [CombinedVariant; 2] = [CombinedVariant::FinalExpr, CombinedVariant::EqC];

    pub fn as_str(self) -> &'static str {
        match self {
            CombinedVariant::FinalExpr => "final",
            CombinedVariant::EqC => "eqc",
        }
    }
}

impl fmt::Display for CombinedVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CombinedVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(CombinedVariant::FinalExpr),
            "eqc" => Ok(CombinedVariant::EqC),
            other => Err(Error::invalid(format!(
                "unknown variant {other:?}, expected \"final\" or \"eqc\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditDirection {
    pub layer_id: String,
    /// 0 is the principal direction.
    pub rank: usize,
    pub eigenvalue: f64,
    pub vector: Vec<f64>,
    pub variant: CombinedVariant,
    /// Part of a cluster of (numerically) equal eigenvalues, so the vector is
    /// one arbitrary choice from an eigenspace.
    pub degenerate_cluster: bool,
}

impl EditDirection {
    pub fn d(&self) -> usize {
        self.vector.len()
    }

    pub fn as_perturbation(&self) -> Result<PerturbationDirection> {
        PerturbationDirection::normalized(self.vector.clone())
    }
}

/// The symmetric positive-semidefinite matrix for `variant`, symmetrized.
pub fn combined_matrix(w: &AttentionWeights, variant: CombinedVariant) -> Matrix {
    let value = match variant {
        CombinedVariant::FinalExpr => w.w_v().outer_gram(),
        CombinedVariant::EqC => w.w_v().gram(),
    };
    let c = w
        .w_q()
        .gram()
        .add(&w.w_k().gram())
        .and_then(|c| c.add(&value))
        .expect("all terms are d x d");
    c.symmetrized().expect("square")
}

/// Leading `top_k` eigenvectors of the combined matrix, sign-canonicalized.
pub fn extract_directions(
    layer_id: &str,
    w: &AttentionWeights,
    top_k: usize,
    variant: CombinedVariant,
) -> Result<Vec<EditDirection>> {
    let d = w.d();
    if top_k == 0 || top_k > d {
        return Err(Error::invalid(format!("top_k must be in 1..={d}, got {top_k}")));
    }
    let pairs = eig_symmetric(&combined_matrix(w, variant))?;
    let values: Vec<f64> = pairs.iter().map(|p| p.value).collect();
    let degenerate = degenerate_flags(&values);

    Ok(pairs
        .into_iter()
        .zip(degenerate)
        .take(top_k)
        .enumerate()
        .map(|(rank, (pair, degenerate_cluster))| EditDirection {
            layer_id: layer_id.to_owned(),
            rank,
            eigenvalue: pair.value,
            vector: pair.vector,
            variant,
            degenerate_cluster,
        })
        .collect())
}

/// Flags each eigenvalue (sorted descending) that lies within the relative gap
/// of a neighbour.
pub fn degenerate_flags(values: &[f64]) -> Vec<bool> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = DEGENERACY_REL_GAP * scale;
    let close: Vec<bool> = values.windows(2).map(|w| (w[0] - w[1]).abs() <= tol).collect();
    (0..values.len())
        .map(|i| (i > 0 && close[i - 1]) || close.get(i).copied().unwrap_or(false))
        .collect()
}

/// `α² nᵀ C n` for a unit `n`.
pub fn predicted_sensitivity(c: &Matrix, n: &[f64], alpha: f64) -> Result<f64> {
    if !c.is_square() || c.rows() != n.len() {
        return Err(Error::DimensionMismatch {
            op: "predicted_sensitivity",
            lhs: c.shape(),
            rhs: (n.len(), 1),
        });
    }
    let norm = dot(n, n).sqrt();
    if (norm - 1.0).abs() > PREDICT_UNIT_TOLERANCE {
        return Err(Error::NotUnit { norm });
    }
    Ok(alpha * alpha * dot(n, &c.mul_vec(n)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub alpha: f64,
    pub n_tokens: usize,
    pub m_samples: usize,
    pub n_directions: usize,
    pub seed: u64,
}

impl AuditConfig {
    pub const MIN_SAMPLES: usize = 32;
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            n_tokens: 32,
            m_samples: 256,
            n_directions: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariantScore {
    pub variant: CombinedVariant,
    pub spearman: f64,
    pub pearson: f64,
    /// Mean of `|predicted - empirical| / empirical`.
    pub mean_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub config_alpha: f64,
    pub n_tokens: usize,
    pub m_samples: usize,
    pub n_directions: usize,
    pub seed: u64,
    pub scores: [VariantScore; 2],
    /// Variant with the higher Spearman correlation; `final` on ties.
    pub better: CombinedVariant,
    #[serde(skip)]
    pub directions: Vec<Vec<f64>>,
    #[serde(skip)]
    pub empirical: Vec<f64>,
    #[serde(skip)]
    pub predicted: [Vec<f64>; 2],
}

impl AuditReport {
    pub fn score(&self, variant: CombinedVariant) -> &VariantScore {
        &self.scores[variant as usize]
    }

    pub fn best_score(&self) -> &VariantScore {
        self.score(self.better)
    }
}

/// Compares how well each variant's `α² nᵀCn` ranks the measured
/// `E‖ΔAttn‖_F²` over random unit directions and whitened Gaussian latents.
///
/// Latents come from stream 0 of `config.seed`, directions from stream 1, so
/// both variants are scored against identical measurements.
pub fn variant_audit(w: &AttentionWeights, config: &AuditConfig) -> Result<AuditReport> {
    if config.m_samples < AuditConfig::MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "variant audit needs at least {} samples, got {}",
            AuditConfig::MIN_SAMPLES,
            config.m_samples
        )));
    }
    if config.n_directions < 2 || config.n_tokens == 0 {
        return Err(Error::invalid("variant audit needs >= 2 directions and >= 1 token"));
    }
    let d = w.d();
    let samples = whitened_samples(crate::sampling::derive_seed(config.seed, 0), config.m_samples, config.n_tokens, d);
    let bases = samples
        .iter()
        .map(|z| attention_forward(z, w))
        .collect::<Result<Vec<_>>>()?;

    let mut dir_rng = stream_rng(config.seed, 1);
    let directions: Vec<Vec<f64>> = (0..config.n_directions)
        .map(|_| random_unit_vector(&mut dir_rng, d))
        .collect();

    let empirical = directions
        .iter()
        .map(|n| {
            let n = PerturbationDirection::normalized(n.clone())?;
            mean_exact_sq_norm(&samples, &bases, w, &n, config.alpha)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut predicted: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut scores = Vec::with_capacity(2);
    for variant in CombinedVariant::ALL {
        let c = combined_matrix(w, variant);
        let pred = directions
            .iter()
            .map(|n| predicted_sensitivity(&c, n, config.alpha))
            .collect::<Result<Vec<f64>>>()?;
        let mre = pred
            .iter()
            .zip(&empirical)
            .map(|(p, e)| if *e == 0.0 { 0.0 } else { (p - e).abs() / e })
            .sum::<f64>()
            / pred.len() as f64;
        scores.push(VariantScore {
            variant,
            spearman: spearman(&pred, &empirical).unwrap_or(0.0),
            pearson: pearson(&pred, &empirical).unwrap_or(0.0),
            mean_relative_error: mre,
        });
        predicted[variant as usize] = pred;
    }
    let scores: [VariantScore; 2] = [scores[0], scores[1]];
    let better = if scores[1].spearman > scores[0].spearman {
        CombinedVariant::EqC
    } else {
        CombinedVariant::FinalExpr
    };

    Ok(AuditReport {
        config_alpha: config.alpha,
        n_tokens: config.n_tokens,
        m_samples: config.m_samples,
        n_directions: config.n_directions,
        seed: config.seed,
        scores,
        better,
        directions,
        empirical,
        predicted,
    })
}
