use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{cost_gradient, AgentState};
use crate::grid::{ConstraintBlocks, ProsumerSpec};

/// Norms of the five optimality groups, stacked over agents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `grad G + A^T lambda_a + B^T lambda_b`.
    pub stationarity: f64,
    /// Global equality rows.
    pub primal_equality: f64,
    /// Positive part of `B Phi - b`.
    pub primal_inequality: f64,
    /// Negative part of `lambda_b`.
    pub dual_feasibility: f64,
    /// `lambda_b * (B Phi - b)`.
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        [
            self.stationarity,
            self.primal_equality,
            self.primal_inequality,
            self.dual_feasibility,
            self.complementarity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() < tol
    }

    /// Squared contributions of one agent, to be summed and square-rooted by [`KktReport::combine`].
    fn squares(
        blocks: &ConstraintBlocks,
        params: &ProsumerSpec,
        omega_b: f64,
        omega_s: f64,
        state: &AgentState,
        residual: &[f64],
    ) -> [f64; 5] {
        let mut g = cost_gradient(blocks, params, omega_b, omega_s, &state.phi);
        let la = DVector::from_column_slice(&state.lambda_a);
        let lb = DVector::from_column_slice(&state.lambda_b);
        let at = blocks.a.tr_mul(&la);
        let bt = blocks.b_mat.tr_mul(&lb);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += at[k] + bt[k];
        }
        let slack = blocks.local_slack(&state.phi);
        let sq = |it: &mut dyn Iterator<Item = f64>| it.map(|x| x * x).sum::<f64>();
        [
            sq(&mut g.iter().cloned()),
            sq(&mut residual.iter().cloned()),
            sq(&mut slack.iter().map(|s| s.max(0.0))),
            sq(&mut state.lambda_b.iter().map(|l| (-l).max(0.0))),
            sq(&mut slack.iter().zip(&state.lambda_b).map(|(s, l)| s * l)),
        ]
    }

    fn combine(parts: impl IntoIterator<Item = [f64; 5]>) -> Self {
        let mut acc = [0.0; 5];
        for p in parts {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        Self {
            stationarity: acc[0].sqrt(),
            primal_equality: acc[1].sqrt(),
            primal_inequality: acc[2].sqrt(),
            dual_feasibility: acc[3].sqrt(),
            complementarity: acc[4].sqrt(),
        }
    }
}

/// KKT residuals of a set of agents, each given with its exact global-row residual.
pub fn kkt_residual<'a>(
    agents: impl IntoIterator<
        Item = (&'a ConstraintBlocks, &'a ProsumerSpec, &'a AgentState, &'a [f64]),
    >,
    omega_b: f64,
    omega_s: f64,
) -> KktReport {
    KktReport::combine(agents.into_iter().map(|(blk, params, state, res)| {
        KktReport::squares(blk, params, omega_b, omega_s, state, res)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_constraint_blocks, generate, GridCase, VarLayout};

    #[test]
    fn interior_point_has_zero_slackness() {
        let case = GridCase::from_document(generate::toy_3bus()).unwrap();
        let blk = build_constraint_blocks(&case, 1).unwrap();
        let mut st = AgentState::zeros(&blk);
        st.phi[VarLayout::V] = 1.0;
        let res = [0.0; 4];
        let rep = kkt_residual([(&blk, case.params(1), &st, &res[..])], 8.0, 3.0);
        assert_eq!(rep.complementarity, 0.0);
        assert_eq!(rep.dual_feasibility, 0.0);

        st.phi[VarLayout::P] = 2.0;
        let rep = kkt_residual([(&blk, case.params(1), &st, &res[..])], 8.0, 3.0);
        assert!(rep.primal_inequality > 0.0);
    }
}
