use serde::{Deserialize, Serialize};

/// Stopping quantities of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub iteration: u64,
    pub gamma_p: f64,
    pub gamma_d: f64,
    pub traded_energy: f64,
}

impl ResidualReport {
    pub fn converged(&self, tol: f64) -> bool {
        self.gamma_p < tol && self.gamma_d < tol
    }
}

/// Euclidean norm of all agents' global-row residuals stacked together.
pub fn primal_residual<'a>(per_agent: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    per_agent.into_iter().flat_map(|r| r.iter()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean norm of the stacked primal change between two iterates.
pub fn dual_residual<'a>(pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> f64 {
    pairs
        .into_iter()
        .flat_map(|(new, old)| new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)))
        .sum::<f64>()
        .sqrt()
}
