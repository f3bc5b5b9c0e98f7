use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::PdhgError;
use crate::grid::{ConstraintBlocks, ProsumerSpec, Role, VarLayout};

/// Step sizes shared by all agents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    /// Primal step.
    pub mu: f64,
    /// Global-row dual step (initial value in the blinded scheme).
    pub xi_a: f64,
    /// Local-row dual step.
    pub xi_b: f64,
    /// Penalty weight on global-row residuals.
    pub eta: f64,
}

impl Default for StepParams {
    fn default() -> Self {
        Self { mu: 0.07, xi_a: 0.02, xi_b: 0.015, eta: 1.6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub phi: Vec<f64>,
    pub lambda_a: Vec<f64>,
    pub lambda_b: Vec<f64>,
}

impl AgentState {
    pub fn zeros(blocks: &ConstraintBlocks) -> Self {
        Self {
            phi: vec![0.0; blocks.dim()],
            lambda_a: vec![0.0; blocks.n_global()],
            lambda_b: vec![0.0; blocks.n_local()],
        }
    }
}

/// Blinded global-row residuals decrypted in a given round.
#[derive(Clone, Debug, PartialEq)]
pub struct BlindedResidual {
    pub round: u64,
    pub values: Vec<f64>,
}

/// Role-dependent utility price and sign of the utility settlement term.
fn settlement(role: Role, omega_b: f64, omega_s: f64) -> f64 {
    match role {
        Role::Buyer => omega_b,
        Role::Seller => omega_s,
        Role::Inactive => 0.0,
    }
}

/// Operating cost of one agent, with the utility settlement `[.]^+` as written.
pub fn cost(
    blocks: &ConstraintBlocks,
    params: &ProsumerSpec,
    omega_b: f64,
    omega_s: f64,
    phi: &[f64],
) -> f64 {
    if blocks.role == Role::Inactive {
        return 0.0;
    }
    let p = phi[VarLayout::P];
    let trades = &phi[blocks.layout.trades()];
    let sum_e: f64 = trades.iter().sum();
    let utility: f64 = trades.iter().map(|e| params.alpha * e * e + params.beta * e).sum();
    let discomfort = params.epsilon * (p - params.p_desired).powi(2);
    let settle = match blocks.role {
        Role::Buyer => omega_b * (sum_e - p).max(0.0),
        _ => -omega_s * (p - sum_e).max(0.0),
    };
    utility + discomfort + settle
}

/// Gradient of [`cost`] on the side of the settlement kink where the local
/// balance row holds, so the settlement term is linear there.
pub fn cost_gradient(
    blocks: &ConstraintBlocks,
    params: &ProsumerSpec,
    omega_b: f64,
    omega_s: f64,
    phi: &[f64],
) -> Vec<f64> {
    let mut g = vec![0.0; phi.len()];
    if blocks.role == Role::Inactive {
        return g;
    }
    let w = settlement(blocks.role, omega_b, omega_s);
    g[VarLayout::P] = 2.0 * params.epsilon * (phi[VarLayout::P] - params.p_desired) - w;
    for k in blocks.layout.trades() {
        g[k] = 2.0 * params.alpha * phi[k] + params.beta + w;
    }
    g
}

/// `grad G + A^T (lambda_a + eta * rho) + B^T lambda_b`, where `rho` is the
/// global-row residual as known to the agent (exact, or blinded by `r`).
pub fn grad_primal(
    blocks: &ConstraintBlocks,
    params: &ProsumerSpec,
    omega_b: f64,
    omega_s: f64,
    eta: f64,
    state: &AgentState,
    rho: &[f64],
) -> Result<Vec<f64>, PdhgError> {
    if rho.len() != blocks.n_global() {
        return Err(PdhgError::MissingCoupling {
            agent: blocks.agent,
            expected: blocks.n_global(),
            got: rho.len(),
        });
    }
    let mut g = cost_gradient(blocks, params, omega_b, omega_s, &state.phi);
    for (r, row) in blocks.global_rows.iter().enumerate() {
        let w = state.lambda_a[r] + eta * rho[r];
        for &(k, c) in &row.coeffs {
            g[k] += c * w;
        }
    }
    let lb = DVector::from_column_slice(&state.lambda_b);
    let bt = blocks.b_mat.tr_mul(&lb);
    for (gk, v) in g.iter_mut().zip(bt.iter()) {
        *gk += v;
    }
    Ok(g)
}

/// Augmented Lagrangian of one agent with the foreign terms held fixed.
pub fn lagrangian(
    blocks: &ConstraintBlocks,
    params: &ProsumerSpec,
    omega_b: f64,
    omega_s: f64,
    eta: f64,
    state: &AgentState,
    foreign: &[f64],
) -> f64 {
    let res = blocks.global_residual(&state.phi, foreign);
    let slack = blocks.local_slack(&state.phi);
    cost(blocks, params, omega_b, omega_s, &state.phi)
        + res.iter().zip(&state.lambda_a).map(|(r, l)| l * r + 0.5 * eta * r * r).sum::<f64>()
        + slack.iter().zip(&state.lambda_b).map(|(s, l)| l * s).sum::<f64>()
}

pub fn primal_update(state: &mut AgentState, grad: &[f64], mu: f64) {
    for (x, g) in state.phi.iter_mut().zip(grad) {
        *x -= mu * g;
    }
}

/// `lambda_a += xi_a * residual(Phi^{k+1})`.
pub fn dual_update_global_incremental(state: &mut AgentState, residual_next: &[f64], xi_a: f64) {
    for (l, r) in state.lambda_a.iter_mut().zip(residual_next) {
        *l += xi_a * r;
    }
}

/// `lambda_a += xi_a * y`, with `y` already carrying the blinding coefficient.
pub fn dual_update_global_nonincremental(
    state: &mut AgentState,
    y: &BlindedResidual,
    round: u64,
    xi_a: f64,
) -> Result<(), PdhgError> {
    if y.round != round {
        return Err(PdhgError::StaleProduct { expected: round, got: y.round });
    }
    for (l, v) in state.lambda_a.iter_mut().zip(&y.values) {
        *l += xi_a * v;
    }
    Ok(())
}

/// `lambda_b = max(0, lambda_b + xi_b (B Phi - b))`.
pub fn dual_update_local(blocks: &ConstraintBlocks, state: &mut AgentState, xi_b: f64) {
    let slack = blocks.local_slack(&state.phi);
    for (l, s) in state.lambda_b.iter_mut().zip(slack) {
        *l = (*l + xi_b * s).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_constraint_blocks, generate, GridCase};

    fn toy() -> GridCase {
        GridCase::from_document(generate::toy_3bus()).unwrap()
    }

    #[test]
    fn buyer_trade_gradient_at_zero() {
        let case = toy();
        let blk = build_constraint_blocks(&case, 1).unwrap();
        let st = AgentState::zeros(&blk);
        let p = case.params(1);
        let g = grad_primal(&blk, p, case.omega_b, case.omega_s, 1.6, &st, &[0.0; 4]).unwrap();
        assert_eq!(g[5], p.beta + case.omega_b);
        let mut st2 = st.clone();
        primal_update(&mut st2, &g, 0.07);
        assert!((st2.phi[5] - (-0.07 * (2.0 + 8.0))).abs() < 1e-15);
        // the attack's first identity
        assert!((-st2.phi[5] / 0.07 - case.omega_b - p.beta).abs() < 1e-12);
    }

    #[test]
    fn balanced_voltage_row_has_no_penalty() {
        let case = toy();
        let blk = build_constraint_blocks(&case, 2).unwrap();
        let mut st = AgentState::zeros(&blk);
        let line = case.line(2);
        st.phi[VarLayout::V] = 1.0;
        // choose flows with R P + X Q = 0.025
        st.phi[VarLayout::FLOW_P] = 0.025 / line.r;
        st.phi[VarLayout::FLOW_Q] = 0.0;
        let row = blk.global_rows[1].own_value(&st.phi) + 1.05;
        assert!(row.abs() < 1e-12);
        let mut rho = vec![0.0; 4];
        rho[1] = row;
        let g = grad_primal(&blk, case.params(2), 8.0, 3.0, 1.0, &st, &rho).unwrap();
        assert!(g[VarLayout::V].abs() < 1e-12);
    }

    #[test]
    fn missing_coupling_is_reported() {
        let case = toy();
        let blk = build_constraint_blocks(&case, 1).unwrap();
        let st = AgentState::zeros(&blk);
        let err = grad_primal(&blk, case.params(1), 8.0, 3.0, 1.6, &st, &[0.0; 3]);
        assert!(matches!(err, Err(PdhgError::MissingCoupling { expected: 4, got: 3, .. })));
    }

    #[test]
    fn dual_updates() {
        let case = toy();
        let blk = build_constraint_blocks(&case, 1).unwrap();
        let mut st = AgentState::zeros(&blk);
        dual_update_global_incremental(&mut st, &[0.0; 4], 0.02);
        assert_eq!(st.lambda_a, vec![0.0; 4]);
        // reciprocity row with e_12 = -1, e_21 = 0.5 gives residual -0.5
        dual_update_global_incremental(&mut st, &[-0.5, 0.0, 0.0, 0.0], 0.02);
        assert!((st.lambda_a[0] + 0.01).abs() < 1e-15);

        let y = BlindedResidual { round: 3, values: vec![1.0, 0.0, 0.0, 0.0] };
        assert!(dual_update_global_nonincremental(&mut st, &y, 4, 0.02).is_err());
        dual_update_global_nonincremental(&mut st, &y, 3, 0.02).unwrap();
        assert!((st.lambda_a[0] - 0.01).abs() < 1e-15);

        // p = 1 violates the buyer's upper bound p <= 0 and its balance row
        st.phi[VarLayout::P] = 1.0;
        dual_update_local(&blk, &mut st, 0.015);
        assert!((st.lambda_b[1] - 0.015).abs() < 1e-15);
        assert!(st.lambda_b.iter().all(|l| *l >= 0.0));
        assert_eq!(st.lambda_b[2], 0.0);
    }
}
