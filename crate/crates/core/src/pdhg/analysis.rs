//! Admissible blinding coefficients and the linear-rate bound.

use serde::{Deserialize, Serialize};

use super::PdhgError;

/// Discriminants this close to zero select the boundary condition.
const DISCRIMINANT_ZERO: f64 = 1e-12;

/// Everything the range and rate formulas depend on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeInputs {
    /// Strong-convexity constant of the agent's cost.
    pub rho: f64,
    /// Smoothness constant of the agent's cost.
    pub delta: f64,
    pub mu: f64,
    pub xi_a: f64,
    pub xi_b: f64,
    pub eta: f64,
    pub sigma_a_max: f64,
    pub sigma_a_min: f64,
    pub sigma_b_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// Discriminant positive: only upper bounds.
    One,
    /// Discriminant negative: lower and upper bound.
    Two,
    /// Discriminant zero: only the `k1` cap.
    Three,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRange {
    pub condition: Condition,
    /// Discriminant `xi_a sigma_max(A)^2 - (eta - xi_a) sigma_min(A)^2`.
    pub discriminant: f64,
    pub k1: f64,
    pub k2: Option<f64>,
    /// Closed interval of admissible coefficients; `None` when empty. A lower
    /// end of 0 is exclusive.
    pub range: Option<(f64, f64)>,
    pub inputs: RangeInputs,
}

impl FeasibleRange {
    pub fn is_empty(&self) -> bool {
        self.range.is_none()
    }

    pub fn contains(&self, r: f64) -> bool {
        self.range.is_some_and(|(lo, hi)| r > 0.0 && r >= lo && r <= hi)
    }
}

/// Range of the blinding coefficient that keeps the blinded iteration linearly convergent.
pub fn feasible_range(inputs: RangeInputs) -> Result<FeasibleRange, PdhgError> {
    let RangeInputs { rho, delta, mu, xi_a, xi_b, eta, sigma_a_max, sigma_a_min, sigma_b_max } =
        inputs;
    if eta - xi_a <= 0.0 {
        return Err(PdhgError::Precondition(format!(
            "penalty {eta} must exceed the initial dual step {xi_a}"
        )));
    }
    if 1.0 - mu * delta <= 0.0 {
        return Err(PdhgError::Precondition(format!("mu * delta = {} is not below 1", mu * delta)));
    }
    if sigma_a_max <= 0.0 {
        return Err(PdhgError::Precondition("global block has no rows".into()));
    }
    let amax2 = sigma_a_max * sigma_a_max;
    let amin2 = sigma_a_min * sigma_a_min;
    let bmax2 = sigma_b_max * sigma_b_max;
    let s = xi_a * amax2 - (eta - xi_a) * amin2;
    let k1 = (1.0 - mu * delta) / (mu * (eta - xi_a) * amax2);
    let threshold = rho / bmax2;
    let (condition, k2, range) = if s > DISCRIMINANT_ZERO {
        let k2 = (rho - xi_b * bmax2) / s;
        let range = (xi_b < threshold && k2 > 0.0).then_some((0.0, k1.min(k2)));
        (Condition::One, Some(k2), range)
    } else if s < -DISCRIMINANT_ZERO {
        let k2 = (xi_b * bmax2 - rho) / (-s);
        let range = (xi_b > threshold && k2 <= k1).then_some((k2, k1));
        (Condition::Two, Some(k2), range)
    } else {
        (Condition::Three, None, (xi_b <= threshold).then_some((0.0, k1)))
    };
    Ok(FeasibleRange { condition, discriminant: s, k1, k2, range, inputs })
}

/// `l = max(theta, 1 - mu xi_a r sigma_min(M)^2, 1 - mu xi_b sigma_min(M)^2)` for coefficient `r`.
pub fn linear_rate_bound(inputs: &RangeInputs, sigma_m_min: f64, r: f64) -> Result<f64, PdhgError> {
    let RangeInputs { rho, delta, mu, xi_a, xi_b, eta, sigma_a_max, sigma_a_min, .. } = *inputs;
    let eff = (eta - xi_a) * r;
    let delta_eta = delta + eff * sigma_a_max * sigma_a_max;
    let rho_eta = rho + eff * sigma_a_min * sigma_a_min;
    let theta = 1.0 + (mu * mu * delta_eta - mu) * rho_eta;
    let m2 = sigma_m_min * sigma_m_min;
    let l = theta.max(1.0 - mu * xi_a * r * m2).max(1.0 - mu * xi_b * m2);
    if !(l < 1.0) {
        return Err(PdhgError::RateBound(l));
    }
    Ok(l)
}
