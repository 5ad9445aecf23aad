use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dot;

/// Lower (exclusive) and upper (inclusive) bound of the blend weights.
pub const WEIGHT_RANGE: (f64, f64) = (0.05, 1.0);

pub fn weight_in_range(w: f64) -> bool {
    w > WEIGHT_RANGE.0 && w <= WEIGHT_RANGE.1
}

/// Cosine similarity clamped to `[-1, 1]`; 0 when either vector is all zeros.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine",
            lhs: vec![u.len()],
            rhs: vec![v.len()],
        });
    }
    let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Per-example reward components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r1: f64,
    pub r2: f64,
    pub r_tilde: f64,
    pub r: f64,
    pub alpha: f64,
}

/// `r̃ = α·r1 + (1−α)·r2`, normalised to `r = (r̃ + 1 − α)/(2 − α)`.
pub fn reward(r1: f64, r2: f64, alpha: f64) -> Result<RewardBreakdown> {
    if !(0.0..=1.0).contains(&r1) {
        return Err(Error::invalid(format!("r1 = {r1} outside [0, 1]")));
    }
    if !(-1.0..=1.0).contains(&r2) {
        return Err(Error::invalid(format!("r2 = {r2} outside [-1, 1]")));
    }
    if !weight_in_range(alpha) {
        return Err(Error::invalid(format!("alpha = {alpha} outside (0.05, 1]")));
    }
    let r_tilde = alpha * r1 + (1.0 - alpha) * r2;
    let r = ((r_tilde + (1.0 - alpha)) / (2.0 - alpha)).clamp(0.0, 1.0);
    Ok(RewardBreakdown {
        r1,
        r2,
        r_tilde,
        r,
        alpha,
    })
}

/// Reward from BLEU alone: the blend at `α = 1`, so `r = r̃ = r1`.
pub fn bleu_reward(r1: f64) -> Result<RewardBreakdown> {
    reward(r1, 0.0, 1.0)
}
