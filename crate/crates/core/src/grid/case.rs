use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GridError;

fn default_base_kva() -> f64 {
    1000.0
}

fn default_v0() -> f64 {
    1.0
}

/// One bus and the line to its parent. Bus 0 is the utility and has no parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: usize,
    pub parent: Option<usize>,
    #[serde(default)]
    pub r_pu: f64,
    #[serde(default)]
    pub x_pu: f64,
    #[serde(default)]
    pub v_min: f64,
    #[serde(default)]
    pub v_max: f64,
    #[serde(default)]
    pub p_flow_min: f64,
    #[serde(default)]
    pub p_flow_max: f64,
    #[serde(default)]
    pub q_flow_min: f64,
    #[serde(default)]
    pub q_flow_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProsumerSpec {
    pub bus: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub p_desired: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PartnerSpec {
    /// Only `"complete"` is accepted: every buyer trades with every seller.
    Keyword(String),
    Pairs(Vec<[usize; 2]>),
}

impl Default for PartnerSpec {
    fn default() -> Self {
        PartnerSpec::Keyword("complete".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub omega_b: f64,
    pub omega_s: f64,
    #[serde(default)]
    pub partners: PartnerSpec,
}

/// On-disk case format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub buses: Vec<BusSpec>,
    pub prosumers: Vec<ProsumerSpec>,
    pub market: MarketSpec,
    pub seed: u64,
    /// Base power used to turn per-unit impedances into kW coefficients.
    #[serde(default = "default_base_kva")]
    pub base_kva: f64,
    /// Squared voltage magnitude at the substation.
    #[serde(default = "default_v0")]
    pub v0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Buyer,
    Seller,
    Inactive,
}

impl Role {
    pub fn from_desired(p_desired: f64) -> Self {
        if p_desired < 0.0 {
            Role::Buyer
        } else if p_desired > 0.0 {
            Role::Seller
        } else {
            Role::Inactive
        }
    }
}

/// Line coefficients in LinDistFlow units (p.u.² per kW / kvar).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineParams {
    pub r: f64,
    pub x: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeBounds {
    pub p: (f64, f64),
    pub q: (f64, f64),
    pub v: (f64, f64),
    pub flow_p: (f64, f64),
    pub flow_q: (f64, f64),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    pub buyers: Vec<usize>,
    pub sellers: Vec<usize>,
    pub inactive: Vec<usize>,
}

/// A validated case. Vectors indexed by bus id; entry 0 is the utility.
#[derive(Clone, Debug)]
pub struct GridCase {
    pub name: String,
    pub seed: u64,
    pub omega_b: f64,
    pub omega_s: f64,
    pub v0: f64,
    pub base_kva: f64,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    line: Vec<LineParams>,
    bounds: Vec<NodeBounds>,
    params: Vec<Option<ProsumerSpec>>,
    roles: Vec<Role>,
    partners: Vec<Vec<usize>>,
    warnings: Vec<String>,
    document: CaseDocument,
}

pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase, GridError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let doc: CaseDocument = serde_json::from_str(&text)?;
    GridCase::from_document(doc)
}

pub fn classify_agents(case: &GridCase) -> Partition {
    let mut part = Partition::default();
    for i in case.agents() {
        match case.role(i) {
            Role::Buyer => part.buyers.push(i),
            Role::Seller => part.sellers.push(i),
            Role::Inactive => part.inactive.push(i),
        }
    }
    part
}

impl GridCase {
    pub fn from_json(text: &str) -> Result<Self, GridError> {
        Self::from_document(serde_json::from_str(text)?)
    }

    pub fn from_document(doc: CaseDocument) -> Result<Self, GridError> {
        let mut errors = Vec::new();
        let n = doc.buses.len();
        if n < 2 {
            errors.push("a case needs the utility bus and at least one prosumer bus".to_string());
            return Err(GridError::Validation(errors));
        }

        let mut ids = BTreeSet::new();
        for b in &doc.buses {
            if b.id >= n {
                errors.push(format!("bus {}: ids must be 0..{}", b.id, n - 1));
            } else if !ids.insert(b.id) {
                errors.push(format!("bus {}: duplicate id", b.id));
            }
        }
        if !errors.is_empty() {
            return Err(GridError::Validation(errors));
        }

        let mut parent = vec![None; n];
        let mut line = vec![LineParams { r: 0.0, x: 0.0 }; n];
        let mut bounds = vec![
            NodeBounds {
                p: (0.0, 0.0),
                q: (0.0, 0.0),
                v: (0.0, 0.0),
                flow_p: (0.0, 0.0),
                flow_q: (0.0, 0.0)
            };
            n
        ];
        let base = doc.base_kva;
        if !(base > 0.0 && base.is_finite()) {
            errors.push(format!("base_kva must be positive, got {base}"));
        }
        for b in &doc.buses {
            match (b.id, b.parent) {
                (0, Some(p)) => errors.push(format!("bus 0: the utility bus cannot have parent {p}")),
                (0, None) => {}
                (id, None) => errors.push(format!("bus {id}: missing parent")),
                (id, Some(p)) if p == id => errors.push(format!("bus {id}: is its own parent")),
                (id, Some(p)) if p >= n => {
                    errors.push(format!("bus {id}: parent {p} does not exist"))
                }
                (id, Some(p)) => parent[id] = Some(p),
            }
            if b.id != 0 {
                line[b.id] = LineParams { r: b.r_pu / base, x: b.x_pu / base };
                if b.r_pu < 0.0 || b.x_pu < 0.0 {
                    errors.push(format!("bus {}: negative line impedance", b.id));
                }
                for (name, lo, hi) in [
                    ("v", b.v_min, b.v_max),
                    ("p_flow", b.p_flow_min, b.p_flow_max),
                    ("q_flow", b.q_flow_min, b.q_flow_max),
                ] {
                    if lo > hi {
                        errors.push(format!("bus {}: {name} bounds reversed", b.id));
                    }
                }
                bounds[b.id].v = (b.v_min, b.v_max);
                bounds[b.id].flow_p = (b.p_flow_min, b.p_flow_max);
                bounds[b.id].flow_q = (b.q_flow_min, b.q_flow_max);
            }
        }

        // every bus must reach the root within n steps
        for start in 1..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parent[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    errors.push(format!("bus {start}: on or behind a cycle"));
                    break;
                }
            }
        }

        let mut params: Vec<Option<ProsumerSpec>> = vec![None; n];
        for p in &doc.prosumers {
            if p.bus == 0 || p.bus >= n {
                errors.push(format!("prosumer at bus {}: not a prosumer bus", p.bus));
                continue;
            }
            if params[p.bus].is_some() {
                errors.push(format!("bus {}: more than one prosumer", p.bus));
            }
            if !(p.alpha > 0.0) {
                errors.push(format!("prosumer {}: alpha must be positive", p.bus));
            }
            if !(p.epsilon > 0.0) {
                errors.push(format!("prosumer {}: epsilon must be positive", p.bus));
            }
            if p.p_min > p.p_max || p.q_min > p.q_max {
                errors.push(format!("prosumer {}: injection bounds reversed", p.bus));
            }
            bounds[p.bus].p = (p.p_min, p.p_max);
            bounds[p.bus].q = (p.q_min, p.q_max);
            params[p.bus] = Some(p.clone());
        }
        for (i, slot) in params.iter().enumerate().skip(1) {
            if slot.is_none() {
                errors.push(format!("bus {i}: no prosumer"));
            }
        }

        let m = &doc.market;
        if m.omega_s > m.omega_b {
            errors.push(format!(
                "market: selling price {} exceeds buying price {}",
                m.omega_s, m.omega_b
            ));
        }
        if !errors.is_empty() {
            return Err(GridError::Validation(errors));
        }

        let roles: Vec<Role> = (0..n)
            .map(|i| params[i].as_ref().map_or(Role::Inactive, |p| Role::from_desired(p.p_desired)))
            .collect();

        let mut partners = vec![Vec::new(); n];
        match &m.partners {
            PartnerSpec::Keyword(k) if k == "complete" => {
                for i in 1..n {
                    for j in 1..n {
                        if (roles[i], roles[j]) == (Role::Buyer, Role::Seller)
                            || (roles[i], roles[j]) == (Role::Seller, Role::Buyer)
                        {
                            partners[i].push(j);
                        }
                    }
                }
            }
            PartnerSpec::Keyword(k) => errors.push(format!("market: unknown partner keyword {k:?}")),
            PartnerSpec::Pairs(pairs) => {
                let set: BTreeSet<(usize, usize)> = pairs.iter().map(|[a, b]| (*a, *b)).collect();
                for &(i, j) in &set {
                    if i == 0 || j == 0 || i >= n || j >= n || i == j {
                        errors.push(format!("partners: invalid pair ({i}, {j})"));
                        continue;
                    }
                    if !set.contains(&(j, i)) {
                        errors.push(format!("partners: ({i}, {j}) has no reverse pair"));
                    }
                    let ok = matches!(
                        (roles[i], roles[j]),
                        (Role::Buyer, Role::Seller) | (Role::Seller, Role::Buyer)
                    );
                    if !ok {
                        errors.push(format!(
                            "partners: ({i}, {j}) pairs {:?} with {:?}",
                            roles[i], roles[j]
                        ));
                    }
                    partners[i].push(j);
                }
            }
        }
        if !errors.is_empty() {
            return Err(GridError::Validation(errors));
        }
        for list in partners.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }

        let mut children = vec![Vec::new(); n];
        for i in 1..n {
            if let Some(p) = parent[i] {
                children[p].push(i);
            }
        }

        let mut warnings = Vec::new();
        for i in 1..n {
            if roles[i] != Role::Inactive && partners[i].is_empty() {
                warnings.push(format!(
                    "agent {i}: {:?} with nonzero desired injection but no trading partners",
                    roles[i]
                ));
            }
        }

        Ok(Self {
            name: doc.name.clone().unwrap_or_else(|| format!("{}-bus", n - 1)),
            seed: doc.seed,
            omega_b: m.omega_b,
            omega_s: m.omega_s,
            v0: doc.v0,
            base_kva: doc.base_kva,
            parent,
            children,
            line,
            bounds,
            params,
            roles,
            partners,
            warnings,
            document: doc,
        })
    }

    /// Number of prosumers (buses excluding the utility).
    pub fn n_agents(&self) -> usize {
        self.parent.len() - 1
    }

    pub fn agents(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.n_agents()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    /// Parent when it is a prosumer; `None` for children of the utility.
    pub fn prosumer_parent(&self, i: usize) -> Option<usize> {
        self.parent[i].filter(|&p| p != 0)
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn line(&self, i: usize) -> LineParams {
        self.line[i]
    }

    pub fn bounds(&self, i: usize) -> &NodeBounds {
        &self.bounds[i]
    }

    pub fn params(&self, i: usize) -> &ProsumerSpec {
        self.params[i].as_ref().expect("prosumer bus")
    }

    pub fn role(&self, i: usize) -> Role {
        self.roles[i]
    }

    pub fn partners(&self, i: usize) -> &[usize] {
        &self.partners[i]
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn document(&self) -> &CaseDocument {
        &self.document
    }

    /// Unordered trading pairs `(buyer, seller)`.
    pub fn trade_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in self.agents() {
            if self.roles[i] == Role::Buyer {
                for &j in &self.partners[i] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Conservative strong-convexity and smoothness constants over all active agents.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        let mut rho = f64::INFINITY;
        let mut delta: f64 = 0.0;
        for i in self.agents() {
            if self.roles[i] == Role::Inactive {
                continue;
            }
            let p = self.params(i);
            rho = rho.min(2.0 * p.alpha);
            delta = delta.max(2.0 * p.epsilon);
        }
        if rho.is_infinite() {
            rho = 0.0;
        }
        (rho, delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: usize, parent: Option<usize>) -> BusSpec {
        BusSpec {
            id,
            parent,
            r_pu: 0.01,
            x_pu: 0.01,
            v_min: 0.9,
            v_max: 1.1,
            p_flow_min: -100.0,
            p_flow_max: 100.0,
            q_flow_min: -100.0,
            q_flow_max: 100.0,
        }
    }

    fn prosumer(b: usize, p_desired: f64) -> ProsumerSpec {
        ProsumerSpec {
            bus: b,
            alpha: 0.05,
            beta: 1.0,
            epsilon: 3.0,
            p_desired,
            p_min: -20.0,
            p_max: 20.0,
            q_min: -5.0,
            q_max: 5.0,
        }
    }

    fn doc(parents: &[Option<usize>], pd: &[f64]) -> CaseDocument {
        CaseDocument {
            name: None,
            buses: parents.iter().enumerate().map(|(i, p)| bus(i, *p)).collect(),
            prosumers: pd.iter().enumerate().map(|(i, d)| prosumer(i + 1, *d)).collect(),
            market: MarketSpec { omega_b: 10.0, omega_s: 4.0, partners: PartnerSpec::default() },
            seed: 1,
            base_kva: 1000.0,
            v0: 1.0,
        }
    }

    #[test]
    fn line_topology() {
        let case = GridCase::from_document(doc(&[None, Some(0), Some(1)], &[-5.0, 3.0])).unwrap();
        assert_eq!(case.children(1), &[2]);
        assert_eq!(case.prosumer_parent(1), None);
        assert_eq!(case.prosumer_parent(2), Some(1));
        assert_eq!(case.partners(1), &[2]);
        let part = classify_agents(&case);
        assert_eq!(part.buyers, vec![1]);
        assert_eq!(part.sellers, vec![2]);
        assert!((case.line(1).r - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn inactive_agents_have_no_partners() {
        let case =
            GridCase::from_document(doc(&[None, Some(0), Some(1), Some(1)], &[-5.0, 0.0, 3.0]))
                .unwrap();
        assert_eq!(case.role(2), Role::Inactive);
        assert!(case.partners(2).is_empty());
        assert_eq!(case.partners(1), &[3]);
    }

    #[test]
    fn rejects_cycles_and_bad_pairs() {
        let err = GridCase::from_document(doc(&[None, Some(2), Some(1)], &[-5.0, 3.0]));
        match err {
            Err(GridError::Validation(v)) => assert!(v.iter().any(|e| e.contains("cycle")), "{v:?}"),
            other => panic!("{other:?}"),
        }
        let mut d = doc(&[None, Some(0), Some(1)], &[-5.0, 3.0]);
        d.market.partners = PartnerSpec::Pairs(vec![[1, 2]]);
        assert!(matches!(GridCase::from_document(d), Err(GridError::Validation(_))));
        let mut d = doc(&[None, Some(0), Some(1)], &[-5.0, -3.0]);
        d.market.partners = PartnerSpec::Pairs(vec![[1, 2], [2, 1]]);
        assert!(matches!(GridCase::from_document(d), Err(GridError::Validation(_))));
        let mut d = doc(&[None, Some(0), Some(1)], &[-5.0, 3.0]);
        d.market.omega_s = 11.0;
        assert!(matches!(GridCase::from_document(d), Err(GridError::Validation(_))));
    }

    #[test]
    fn warns_on_isolated_trader() {
        let mut d = doc(&[None, Some(0), Some(1), Some(1)], &[-5.0, 3.0, 2.0]);
        d.market.partners = PartnerSpec::Pairs(vec![[1, 2], [2, 1]]);
        let case = GridCase::from_document(d).unwrap();
        assert_eq!(case.warnings().len(), 1);
        assert!(case.warnings()[0].contains("agent 3"));
    }
}
