//! Timestep-gated application of an editing direction.
//!
//! An edit adds `alpha * n` to every token row when the latents were captured
//! at a timestep strictly inside `(t_low_frac·T, t_high_frac·T)`, and leaves
//! them untouched otherwise.

use serde::Serialize;

use crate::attention::LatentTokens;
use crate::directions::EditDirection;
use crate::error::{Error, Result};

pub const DEFAULT_TOTAL_STEPS: u32 = 1000;
pub const DEFAULT_T_LOW_FRAC: f64 = 0.5;
pub const DEFAULT_T_HIGH_FRAC: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InjectionSchedule {
    total_steps: u32,
    t_low_frac: f64,
    t_high_frac: f64,
    alpha: f64,
}

impl InjectionSchedule {
    pub fn new(total_steps: u32, t_low_frac: f64, t_high_frac: f64, alpha: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::invalid("total_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&t_low_frac) || !(0.0..=1.0).contains(&t_high_frac) || t_low_frac >= t_high_frac {
            return Err(Error::invalid(format!(
                "need 0 <= t_low ({t_low_frac}) < t_high ({t_high_frac}) <= 1"
            )));
        }
        if !alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        Ok(Self {
            total_steps,
            t_low_frac,
            t_high_frac,
            alpha,
        })
    }

    /// Default window `(0.5T, 0.8T)` with `T = 1000`.
    pub fn with_alpha(alpha: f64) -> Result<Self> {
        Self::new(DEFAULT_TOTAL_STEPS, DEFAULT_T_LOW_FRAC, DEFAULT_T_HIGH_FRAC, alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn total_steps(&self) -> u32 {
        self.total_steps
    }

    pub fn t_low_frac(&self) -> f64 {
        self.t_low_frac
    }

    pub fn t_high_frac(&self) -> f64 {
        self.t_high_frac
    }

    pub fn at_alpha(&self, alpha: f64) -> Self {
        Self { alpha, ..*self }
    }

    pub fn is_active(&self, t: u32) -> bool {
        let t = f64::from(t);
        let total = f64::from(self.total_steps);
        self.t_low_frac * total < t && t < self.t_high_frac * total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSpec {
    alpha_min: f64,
    alpha_max: f64,
    n_points: usize,
}

impl SweepSpec {
    pub fn new(alpha_min: f64, alpha_max: f64, n_points: usize) -> Result<Self> {
        if !(alpha_min.is_finite() && alpha_max.is_finite()) || alpha_min >= alpha_max {
            return Err(Error::invalid(format!(
                "sweep needs alpha_min ({alpha_min}) < alpha_max ({alpha_max})"
            )));
        }
        if n_points < 2 {
            return Err(Error::invalid("sweep needs at least 2 points"));
        }
        Ok(Self {
            alpha_min,
            alpha_max,
            n_points,
        })
    }

    /// Evenly spaced strengths including both endpoints.
    ///
    /// Points are placed symmetrically about the midpoint, so a range
    /// symmetric about zero yields exactly negated pairs and an exact zero.
    pub fn alphas(&self) -> Vec<f64> {
        let last = self.n_points - 1;
        let mid = 0.5 * (self.alpha_min + self.alpha_max);
        let half = 0.5 * (self.alpha_max - self.alpha_min);
        (0..self.n_points)
            .map(|i| match i {
                0 => self.alpha_min,
                i if i == last => self.alpha_max,
                i => {
                    let offset = (2 * i) as f64 - last as f64;
                    mid + half * (offset / last as f64)
                }
            })
            .collect()
    }
}

/// Adds `alpha * dir.vector` to every token row if the latents' timestep is
/// inside the schedule's window; otherwise returns an exact copy.
pub fn apply_edit(z: &LatentTokens, dir: &EditDirection, sched: &InjectionSchedule) -> Result<LatentTokens> {
    apply_vector(z, &dir.vector, sched)
}

pub fn apply_vector(z: &LatentTokens, vector: &[f64], sched: &InjectionSchedule) -> Result<LatentTokens> {
    let t = z
        .timestep
        .ok_or_else(|| Error::invalid("latents carry no timestep; cannot gate the edit"))?;
    if vector.len() != z.d() {
        return Err(Error::DimensionMismatch {
            op: "apply_edit",
            lhs: z.z.shape(),
            rhs: (1, vector.len()),
        });
    }
    if !sched.is_active(t) || sched.alpha() == 0.0 {
        return Ok(z.clone());
    }
    let step: Vec<f64> = vector.iter().map(|v| sched.alpha() * v).collect();
    let mut out = z.clone();
    for i in 0..out.z.rows() {
        for (x, s) in out.z.row_mut(i).iter_mut().zip(&step) {
            *x += s;
        }
    }
    Ok(out)
}

/// One edit per sweep strength, each computed from the unedited latents.
pub fn sweep_edits(
    z: &LatentTokens,
    dir: &EditDirection,
    sched: &InjectionSchedule,
    sweep: &SweepSpec,
) -> Result<Vec<(f64, LatentTokens)>> {
    sweep
        .alphas()
        .into_iter()
        .map(|alpha| Ok((alpha, apply_edit(z, dir, &sched.at_alpha(alpha))?)))
        .collect()
}
