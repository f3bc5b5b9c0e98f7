use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{GridCase, GridError, Role};

/// A component of an agent's primal vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Var {
    /// Active injection p.
    P,
    /// Reactive injection q.
    Q,
    /// Active flow on the line from the parent.
    FlowP,
    /// Reactive flow on the line from the parent.
    FlowQ,
    /// Squared voltage magnitude.
    V,
    /// Energy traded with the given partner.
    Trade(usize),
}

/// Index map for `[p, q, P, Q, v, e_j...]` with partners in ascending order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarLayout {
    partners: Vec<usize>,
}

impl VarLayout {
    pub const P: usize = 0;
    pub const Q: usize = 1;
    pub const FLOW_P: usize = 2;
    pub const FLOW_Q: usize = 3;
    pub const V: usize = 4;

    pub fn new(partners: Vec<usize>) -> Self {
        Self { partners }
    }

    pub fn dim(&self) -> usize {
        5 + self.partners.len()
    }

    pub fn partners(&self) -> &[usize] {
        &self.partners
    }

    pub fn trade_index(&self, partner: usize) -> Option<usize> {
        self.partners.binary_search(&partner).ok().map(|k| 5 + k)
    }

    pub fn trades(&self) -> std::ops::Range<usize> {
        5..self.dim()
    }

    pub fn index(&self, var: Var) -> Option<usize> {
        match var {
            Var::P => Some(Self::P),
            Var::Q => Some(Self::Q),
            Var::FlowP => Some(Self::FLOW_P),
            Var::FlowQ => Some(Self::FLOW_Q),
            Var::V => Some(Self::V),
            Var::Trade(j) => self.trade_index(j),
        }
    }

    pub fn var(&self, idx: usize) -> Var {
        match idx {
            0 => Var::P,
            1 => Var::Q,
            2 => Var::FlowP,
            3 => Var::FlowQ,
            4 => Var::V,
            k => Var::Trade(self.partners[k - 5]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "row", rename_all = "snake_case")]
pub enum RowKind {
    /// `e_ij + e_ji = 0`.
    Reciprocity { partner: usize },
    /// `v_t - v_i - 2(R P_i + X Q_i) = 0`.
    VoltageDrop,
    /// `sum_c P_c - P_i - p_i = 0`.
    FlowActive,
    /// `sum_c Q_c - Q_i - q_i = 0`.
    FlowReactive,
}

/// Where the foreign part of a global row comes from. The foreign part always
/// enters the residual with coefficient +1.
#[derive(Clone, Debug, PartialEq)]
pub enum Coupling {
    /// Partner's trade variable towards this agent.
    Partner(usize),
    /// Parent prosumer's squared voltage.
    Parent(usize),
    /// Fixed substation voltage.
    Source(f64),
    /// Sum of the children's flows (empty for leaves).
    Children(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalRow {
    pub kind: RowKind,
    /// Own coefficients as `(layout index, value)`.
    pub coeffs: Vec<(usize, f64)>,
    pub coupling: Coupling,
}

impl GlobalRow {
    pub fn own_value(&self, phi: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(k, c)| c * phi[k]).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalRow {
    Lower(Var),
    Upper(Var),
    /// Buyer `e <= 0`, seller `-e <= 0`.
    TradeSign(usize),
    /// Buyer `p - sum e <= 0`, seller `sum e - p <= 0`.
    Balance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockSigma {
    /// `(sigma_max, sigma_min)` of the global block, absent when it has no rows.
    pub a: Option<(f64, f64)>,
    pub b_max: f64,
    /// Smallest singular value of `[A^T, B^T]`.
    pub m_min: f64,
}

impl BlockSigma {
    pub fn a_max(&self) -> f64 {
        self.a.map_or(0.0, |a| a.0)
    }

    pub fn a_min(&self) -> f64 {
        self.a.map_or(0.0, |a| a.1)
    }
}

/// Per-agent rows of the decomposed market: `A Phi - a = 0`, `B Phi - b <= 0`.
#[derive(Clone, Debug)]
pub struct ConstraintBlocks {
    pub agent: usize,
    pub role: Role,
    pub layout: VarLayout,
    pub global_rows: Vec<GlobalRow>,
    pub a: DMatrix<f64>,
    pub local_rows: Vec<LocalRow>,
    pub b_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    pub sigma: BlockSigma,
    pub warnings: Vec<String>,
}

fn extreme_singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (max, min)
}

pub fn build_constraint_blocks(case: &GridCase, agent: usize) -> Result<ConstraintBlocks, GridError> {
    if agent == 0 || agent > case.n_agents() {
        return Err(GridError::UnknownAgent(agent));
    }
    let role = case.role(agent);
    let layout = VarLayout::new(case.partners(agent).to_vec());
    let dim = layout.dim();
    let line = case.line(agent);

    let mut global_rows = Vec::new();
    for &j in layout.partners() {
        global_rows.push(GlobalRow {
            kind: RowKind::Reciprocity { partner: j },
            coeffs: vec![(layout.trade_index(j).expect("partner"), 1.0)],
            coupling: Coupling::Partner(j),
        });
    }
    global_rows.push(GlobalRow {
        kind: RowKind::VoltageDrop,
        coeffs: vec![
            (VarLayout::V, -1.0),
            (VarLayout::FLOW_P, -2.0 * line.r),
            (VarLayout::FLOW_Q, -2.0 * line.x),
        ],
        coupling: match case.prosumer_parent(agent) {
            Some(t) => Coupling::Parent(t),
            None => Coupling::Source(case.v0),
        },
    });
    let kids = case.children(agent).to_vec();
    global_rows.push(GlobalRow {
        kind: RowKind::FlowActive,
        coeffs: vec![(VarLayout::FLOW_P, -1.0), (VarLayout::P, -1.0)],
        coupling: Coupling::Children(kids.clone()),
    });
    global_rows.push(GlobalRow {
        kind: RowKind::FlowReactive,
        coeffs: vec![(VarLayout::FLOW_Q, -1.0), (VarLayout::Q, -1.0)],
        coupling: Coupling::Children(kids),
    });

    let mut a = DMatrix::zeros(global_rows.len(), dim);
    for (r, row) in global_rows.iter().enumerate() {
        for &(k, c) in &row.coeffs {
            a[(r, k)] += c;
        }
    }

    let bounds = case.bounds(agent);
    let mut local_rows = Vec::new();
    let mut b_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for (var, (lo, hi)) in [
        (Var::P, bounds.p),
        (Var::Q, bounds.q),
        (Var::V, bounds.v),
        (Var::FlowP, bounds.flow_p),
        (Var::FlowQ, bounds.flow_q),
    ] {
        let k = layout.index(var).expect("fixed var");
        local_rows.push(LocalRow::Lower(var));
        b_rows.push((vec![(k, -1.0)], -lo));
        local_rows.push(LocalRow::Upper(var));
        b_rows.push((vec![(k, 1.0)], hi));
    }
    let sign = match role {
        Role::Buyer => 1.0,
        Role::Seller => -1.0,
        Role::Inactive => 0.0,
    };
    if role != Role::Inactive {
        for &j in layout.partners() {
            local_rows.push(LocalRow::TradeSign(j));
            b_rows.push((vec![(layout.trade_index(j).expect("partner"), sign)], 0.0));
        }
        local_rows.push(LocalRow::Balance);
        let mut coeffs = vec![(VarLayout::P, sign)];
        coeffs.extend(layout.trades().map(|k| (k, -sign)));
        b_rows.push((coeffs, 0.0));
    }
    let mut b_mat = DMatrix::zeros(b_rows.len(), dim);
    let mut b_vec = DVector::zeros(b_rows.len());
    for (r, (coeffs, rhs)) in b_rows.iter().enumerate() {
        for &(k, c) in coeffs {
            b_mat[(r, k)] += c;
        }
        b_vec[r] = *rhs;
    }

    let a_sigma = if a.nrows() == 0 { None } else { Some(extreme_singular_values(&a)) };
    let (b_max, _) = extreme_singular_values(&b_mat);
    let gram = a.transpose() * &a + b_mat.transpose() * &b_mat;
    let m_min = gram.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min).max(0.0).sqrt();

    let mut warnings = Vec::new();
    if role != Role::Inactive && layout.partners().is_empty() {
        warnings.push(format!("agent {agent}: nonzero desired injection but no trading partners"));
    }

    Ok(ConstraintBlocks {
        agent,
        role,
        layout,
        global_rows,
        a,
        local_rows,
        b_mat,
        b_vec,
        sigma: BlockSigma { a: a_sigma, b_max, m_min },
        warnings,
    })
}

impl ConstraintBlocks {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn n_global(&self) -> usize {
        self.global_rows.len()
    }

    pub fn n_local(&self) -> usize {
        self.local_rows.len()
    }

    /// `a_i` for the given foreign contributions: the residual `A Phi - a` then
    /// equals own part plus foreign part row by row.
    pub fn a_vector(&self, foreign: &[f64]) -> DVector<f64> {
        DVector::from_iterator(foreign.len(), foreign.iter().map(|f| -f))
    }

    pub fn global_residual(&self, phi: &[f64], foreign: &[f64]) -> Vec<f64> {
        self.global_rows
            .iter()
            .zip(foreign)
            .map(|(row, f)| row.own_value(phi) + f)
            .collect()
    }

    /// `B Phi - b`.
    pub fn local_slack(&self, phi: &[f64]) -> Vec<f64> {
        let phi = DVector::from_column_slice(phi);
        (&self.b_mat * phi - &self.b_vec).iter().cloned().collect()
    }

    pub fn row_index(&self, kind: RowKind) -> Option<usize> {
        self.global_rows.iter().position(|r| r.kind == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BusSpec, CaseDocument, MarketSpec, PartnerSpec, ProsumerSpec};

    fn tiny_case(r_pu: f64) -> GridCase {
        let bus = |id, parent| BusSpec {
            id,
            parent,
            r_pu,
            x_pu: r_pu,
            v_min: 0.9,
            v_max: 1.1,
            p_flow_min: -50.0,
            p_flow_max: 50.0,
            q_flow_min: -50.0,
            q_flow_max: 50.0,
        };
        let pros = |b, pd| ProsumerSpec {
            bus: b,
            alpha: 0.05,
            beta: 1.0,
            epsilon: 3.0,
            p_desired: pd,
            p_min: -20.0,
            p_max: 20.0,
            q_min: -5.0,
            q_max: 5.0,
        };
        GridCase::from_document(CaseDocument {
            name: None,
            buses: vec![bus(0, None), bus(1, Some(0)), bus(2, Some(1))],
            prosumers: vec![pros(1, -4.0), pros(2, 3.0)],
            market: MarketSpec { omega_b: 10.0, omega_s: 4.0, partners: PartnerSpec::default() },
            seed: 0,
            base_kva: 1000.0,
            v0: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn buyer_with_one_partner_singular_values() {
        let case = tiny_case(1e-6);
        let blk = build_constraint_blocks(&case, 1).unwrap();
        let (amax, amin) = blk.sigma.a.unwrap();
        assert!((amin - 1.0).abs() < 1e-6, "{amin}");
        assert!((amax - 2f64.sqrt()).abs() < 1e-6, "{amax}");
        let expected_b = ((5.0 + 5f64.sqrt()) / 2.0).sqrt();
        assert!((blk.sigma.b_max - expected_b).abs() < 1e-12);
        assert!((blk.sigma.b_max - 1.9021).abs() < 1e-4);
    }

    #[test]
    fn row_layout() {
        let case = tiny_case(0.01);
        let blk = build_constraint_blocks(&case, 2).unwrap();
        assert_eq!(blk.dim(), 6);
        assert_eq!(blk.n_global(), 4);
        assert_eq!(blk.global_rows[1].coupling, Coupling::Parent(1));
        assert_eq!(blk.global_rows[2].coupling, Coupling::Children(vec![]));
        // 10 bounds + 1 sign + 1 balance
        assert_eq!(blk.n_local(), 12);
        // seller balance row: e - p <= 0
        let last = blk.b_mat.row(11);
        assert_eq!(last[VarLayout::P], -1.0);
        assert_eq!(last[5], 1.0);
        let root = build_constraint_blocks(&case, 1).unwrap();
        assert_eq!(root.global_rows[1].coupling, Coupling::Source(1.0));
        assert_eq!(root.global_rows[2].coupling, Coupling::Children(vec![2]));
    }

    #[test]
    fn residual_matches_matrix_form() {
        let case = tiny_case(0.02);
        let blk = build_constraint_blocks(&case, 2).unwrap();
        let phi = [1.0, -0.5, 2.0, 0.25, 0.98, 1.5];
        let foreign = [-1.4, 1.0, 0.0, 0.0];
        let direct = blk.global_residual(&phi, &foreign);
        let matrix = &blk.a * DVector::from_column_slice(&phi) - blk.a_vector(&foreign);
        for (x, y) in direct.iter().zip(matrix.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((direct[0] - 0.1).abs() < 1e-12);
    }
}
