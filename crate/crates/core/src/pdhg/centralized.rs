//! Centralized reference: the whole market as one convex QP.
//!
//! On the feasible set the utility settlement terms are linear (the balance
//! rows fix the sign of their argument), so the problem is an exact QP.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve, QpOptions, QpProblem};
use super::{AgentState, PdhgError};
use crate::grid::{GridCase, Role, VarLayout};

#[derive(Clone, Debug)]
pub struct CentralizedSolution {
    /// Per-agent primal vector and multipliers, indexed by bus (entry 0 unused).
    pub states: Vec<AgentState>,
    pub objective: f64,
    pub traded_energy: f64,
    pub iterations: usize,
}

struct Assembler {
    rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl Assembler {
    fn push(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.rows.push((coeffs, rhs));
        self.rows.len() - 1
    }

    fn matrices(&self, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut m = DMatrix::zeros(self.rows.len(), n);
        let mut v = DVector::zeros(self.rows.len());
        for (r, (coeffs, rhs)) in self.rows.iter().enumerate() {
            for &(k, c) in coeffs {
                m[(r, k)] += c;
            }
            v[r] = *rhs;
        }
        (m, v)
    }
}

pub fn solve_centralized(case: &GridCase) -> Result<CentralizedSolution, PdhgError> {
    let n_bus = case.n_agents() + 1;
    let layouts: Vec<VarLayout> =
        (0..n_bus).map(|i| VarLayout::new(if i == 0 { vec![] } else { case.partners(i).to_vec() })).collect();
    let mut offset = vec![0usize; n_bus];
    let mut n = 0;
    for i in case.agents() {
        offset[i] = n;
        n += layouts[i].dim();
    }
    let var = |i: usize, k: usize| offset[i] + k;

    let mut h = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    let mut constant = 0.0;
    for i in case.agents() {
        let role = case.role(i);
        if role == Role::Inactive {
            continue;
        }
        let pr = case.params(i);
        let w = if role == Role::Buyer { case.omega_b } else { case.omega_s };
        let ip = var(i, VarLayout::P);
        h[(ip, ip)] = 2.0 * pr.epsilon;
        c[ip] = -2.0 * pr.epsilon * pr.p_desired - w;
        constant += pr.epsilon * pr.p_desired * pr.p_desired;
        for k in layouts[i].trades() {
            let ie = var(i, k);
            h[(ie, ie)] = 2.0 * pr.alpha;
            c[ie] = pr.beta + w;
        }
    }

    let mut eq = Assembler { rows: Vec::new() };
    // row ids per agent: reciprocity per partner, voltage, flow P, flow Q
    let mut eq_rows: Vec<Vec<usize>> = vec![Vec::new(); n_bus];
    let mut pair_row = std::collections::BTreeMap::new();
    for i in case.agents() {
        for &j in case.partners(i) {
            let key = (i.min(j), i.max(j));
            let row = *pair_row.entry(key).or_insert_with(|| {
                let ei = var(key.0, layouts[key.0].trade_index(key.1).expect("partner"));
                let ej = var(key.1, layouts[key.1].trade_index(key.0).expect("partner"));
                eq.push(vec![(ei, 1.0), (ej, 1.0)], 0.0)
            });
            eq_rows[i].push(row);
        }
        let line = case.line(i);
        let mut volt = vec![
            (var(i, VarLayout::V), -1.0),
            (var(i, VarLayout::FLOW_P), -2.0 * line.r),
            (var(i, VarLayout::FLOW_Q), -2.0 * line.x),
        ];
        let rhs = match case.prosumer_parent(i) {
            Some(t) => {
                volt.push((var(t, VarLayout::V), 1.0));
                0.0
            }
            None => -case.v0,
        };
        eq_rows[i].push(eq.push(volt, rhs));
        for (flow, inj) in [(VarLayout::FLOW_P, VarLayout::P), (VarLayout::FLOW_Q, VarLayout::Q)] {
            let mut coeffs = vec![(var(i, flow), -1.0), (var(i, inj), -1.0)];
            coeffs.extend(case.children(i).iter().map(|&ch| (var(ch, flow), 1.0)));
            eq_rows[i].push(eq.push(coeffs, 0.0));
        }
    }

    let mut ineq = Assembler { rows: Vec::new() };
    let mut ineq_rows: Vec<Vec<usize>> = vec![Vec::new(); n_bus];
    for i in case.agents() {
        let bd = case.bounds(i);
        for (k, (lo, hi)) in [
            (VarLayout::P, bd.p),
            (VarLayout::Q, bd.q),
            (VarLayout::V, bd.v),
            (VarLayout::FLOW_P, bd.flow_p),
            (VarLayout::FLOW_Q, bd.flow_q),
        ] {
            ineq_rows[i].push(ineq.push(vec![(var(i, k), -1.0)], -lo));
            ineq_rows[i].push(ineq.push(vec![(var(i, k), 1.0)], hi));
        }
        let sign = match case.role(i) {
            Role::Buyer => 1.0,
            Role::Seller => -1.0,
            Role::Inactive => continue,
        };
        for k in layouts[i].trades() {
            ineq_rows[i].push(ineq.push(vec![(var(i, k), sign)], 0.0));
        }
        let mut bal = vec![(var(i, VarLayout::P), sign)];
        bal.extend(layouts[i].trades().map(|k| (var(i, k), -sign)));
        ineq_rows[i].push(ineq.push(bal, 0.0));
    }

    let (a, b) = eq.matrices(n);
    let (g, h_ineq) = ineq.matrices(n);
    let sol = solve(&QpProblem { h, c, a, b, g, h_ineq }, QpOptions::default())?;

    let mut states = vec![AgentState { phi: vec![], lambda_a: vec![], lambda_b: vec![] }];
    let mut traded = 0.0;
    for i in case.agents() {
        let phi: Vec<f64> = (0..layouts[i].dim()).map(|k| sol.x[var(i, k)]).collect();
        if case.role(i) == Role::Seller {
            traded += layouts[i].trades().map(|k| phi[k]).sum::<f64>();
        }
        states.push(AgentState {
            phi,
            lambda_a: eq_rows[i].iter().map(|&r| sol.y[r]).collect(),
            lambda_b: ineq_rows[i].iter().map(|&r| sol.z[r]).collect(),
        });
    }
    Ok(CentralizedSolution {
        states,
        objective: sol.objective + constant,
        traded_energy: traded,
        iterations: sol.iterations,
    })
}
