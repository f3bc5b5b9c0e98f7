//! Honest-but-curious inference attacks.
//!
//! Against the plaintext schemes a passive wiretap recovers injections and
//! utility parameters outright. Against the secure scheme the same attacks
//! face an underdetermined system, which [`attack_secured`] certifies.

mod report;
mod secure;

pub use report::{attack_report, AttackReport, InjectionRow, ParamErrors, ParamRow};
pub use secure::{
    attack_masked_stream, attack_secured, MaskedStreamReport, RankAnalysis, SecureAttack,
    StreamAnalysis,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{build_constraint_blocks, ConstraintBlocks, Coupling, GridCase, RowKind, VarLayout};
use crate::protocols::{Payload, Step, Topic, Transcript, TranscriptHeader};
use crate::sim::Mode;

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("{0} is not observable on any channel")]
    Unobservable(String),
    #[error("attack inconclusive: {0}")]
    Inconclusive(String),
}

/// Flow components as they appear on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Flow {
    Active,
    Reactive,
}

/// Everything a passive wiretap learns from one run, indexed by iteration.
///
/// Iteration `k` values travel in network round `k + 1`.
#[derive(Clone, Debug)]
pub struct AttackTranscript {
    pub header: TranscriptHeader,
    pub mode: Mode,
    /// `(iteration, sender, owner) -> e_{sender, owner}`.
    trades: BTreeMap<(usize, usize, usize), f64>,
    /// `(iteration, sender, flow) -> (owner, value)`.
    flows: BTreeMap<(usize, usize, Flow), (usize, f64)>,
    /// `(iteration, sender, owner) -> v_sender`.
    voltages: BTreeMap<(usize, usize, usize), f64>,
    /// Cleartext masked values `(iteration, child, holder, flow)`.
    masked: BTreeMap<(usize, usize, usize, Flow), f64>,
    ciphertexts: usize,
    /// Publicly known buyers, when the attacker has them.
    buyers: Option<BTreeSet<usize>>,
    /// Public network rows (topology, lines, operating limits) per agent.
    network: Option<Vec<ConstraintBlocks>>,
}

impl AttackTranscript {
    pub fn from_transcript(t: &Transcript) -> Result<Self, AttackError> {
        let mode: Mode = t.header.mode.parse().map_err(AttackError::Transcript)?;
        let mut view = Self {
            header: t.header.clone(),
            mode,
            trades: BTreeMap::new(),
            flows: BTreeMap::new(),
            voltages: BTreeMap::new(),
            masked: BTreeMap::new(),
            ciphertexts: 0,
            buyers: None,
            network: None,
        };
        for rec in &t.records {
            let env = &rec.envelope;
            let Some(k) = (env.round as usize).checked_sub(1) else {
                if matches!(env.payload, Payload::Ciphertext(_) | Payload::CiphertextPair(..)) {
                    view.ciphertexts += 1;
                }
                continue;
            };
            match (&env.topic, &env.payload) {
                (Topic::Row { owner, row, step: Step::Plain }, Payload::Plain(v)) => match row {
                    RowKind::Reciprocity { .. } => {
                        view.trades.insert((k, env.sender, *owner), *v);
                    }
                    RowKind::VoltageDrop => {
                        view.voltages.insert((k, env.sender, *owner), *v);
                    }
                    RowKind::FlowActive => {
                        view.flows.insert((k, env.sender, Flow::Active), (*owner, *v));
                    }
                    RowKind::FlowReactive => {
                        view.flows.insert((k, env.sender, Flow::Reactive), (*owner, *v));
                    }
                },
                (Topic::Masked { holder, component }, Payload::Masked(m)) => {
                    let flow = match component {
                        crate::protocols::Component::Active => Flow::Active,
                        crate::protocols::Component::Reactive => Flow::Reactive,
                    };
                    view.masked.insert((k, env.sender, *holder, flow), m.to_f64());
                }
                (_, Payload::Ciphertext(_) | Payload::CiphertextPair(..)) => view.ciphertexts += 1,
                _ => {}
            }
        }
        Ok(view)
    }

    /// Number of intercepted ciphertexts.
    pub fn ciphertexts(&self) -> usize {
        self.ciphertexts
    }

    pub fn iterations(&self) -> usize {
        let last = |m: Option<usize>| m.map_or(0, |k| k + 1);
        last(self.trades.keys().map(|k| k.0).max())
            .max(last(self.flows.keys().map(|k| k.0).max()))
            .max(last(self.masked.keys().map(|k| k.0).max()))
    }

    /// `e_{i,j}` at iteration `k`.
    pub fn trade(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        self.trades.get(&(k, i, j)).copied()
    }

    /// Trading partners of `i` seen at iteration `k`.
    pub fn partners(&self, i: usize, k: usize) -> Vec<usize> {
        self.trades.range((k, i, 0)..=(k, i, usize::MAX)).map(|(key, _)| key.2).collect()
    }

    fn flow(&self, i: usize, k: usize, f: Flow) -> Option<f64> {
        self.flows.get(&(k, i, f)).map(|&(_, v)| v)
    }

    /// `v_i` at iteration `k`, when `i` has a child to send it to.
    pub fn voltage(&self, i: usize, k: usize) -> Option<f64> {
        self.voltages.range((k, i, 0)..=(k, i, usize::MAX)).next().map(|(_, v)| *v)
    }

    /// Masked values received by `holder` on the active component at iteration `k`.
    pub fn masked_active(&self, holder: usize, child: usize, k: usize) -> Option<f64> {
        self.masked.get(&(k, child, holder, Flow::Active)).copied()
    }

    /// Attaches the public network data of `case`. Only topology, line
    /// impedances and operating limits are read, never prosumer parameters.
    pub fn with_network(mut self, case: &GridCase) -> Result<Self, AttackError> {
        let blocks = case
            .agents()
            .map(|i| build_constraint_blocks(case, i))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| AttackError::Transcript(e.to_string()))?;
        self.network = Some(blocks);
        Ok(self)
    }

    /// Market roles are public; supplying them spares the sign vote.
    pub fn with_buyers(mut self, buyers: impl IntoIterator<Item = usize>) -> Self {
        self.buyers = Some(buyers.into_iter().collect());
        self
    }

    /// Role of `i`, from the public buyer list or else from the trade signs
    /// at the last iteration: buyers settle on negative trades and every
    /// partner holds the opposite role, so both sides of the pair vote.
    pub fn is_buyer(&self, i: usize) -> Option<bool> {
        if let Some(b) = &self.buyers {
            return Some(b.contains(&i));
        }
        let k = self.trades.keys().map(|key| key.0).max()?;
        let mut vote = 0.0;
        for j in self.partners(i, k) {
            vote += self.trade(i, j, k).unwrap_or(0.0) - self.trade(j, i, k).unwrap_or(0.0);
        }
        (vote != 0.0).then_some(vote < 0.0)
    }

    fn has_plain_values(&self) -> bool {
        !self.trades.is_empty() || !self.flows.is_empty()
    }
}

/// Outcome of the injection attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum InjectionEstimate {
    Value { p: f64, q: f64 },
    /// The channel carries no cleartext flows.
    Underdetermined { reason: String },
}

fn rule_of(t: &AttackTranscript) -> Result<UpdateRule, AttackError> {
    match t.mode {
        Mode::PlaintextP3 => Ok(UpdateRule::Incremental),
        Mode::PlaintextP4 => Ok(UpdateRule::NonIncremental),
        other => Err(AttackError::Transcript(format!("no cleartext values in a {other} transcript"))),
    }
}

/// Running dual of one global row, fed with exact residuals.
struct RowDual {
    rule: UpdateRule,
    xi_a: f64,
    eta: f64,
    r: f64,
    /// Residuals already folded into the dual.
    sum: f64,
}

impl RowDual {
    /// `lambda + eta * rho` as used in the step out of iteration `k`.
    fn weight(&self, k: usize, res: f64) -> f64 {
        match self.rule {
            UpdateRule::Incremental if k == 0 => self.eta * res,
            UpdateRule::Incremental => self.xi_a * (self.sum + res) + self.eta * res,
            UpdateRule::NonIncremental => self.r * (self.xi_a * self.sum + self.eta * res),
        }
    }

    /// Residual that makes [`Self::weight`] equal `w`.
    fn invert(&self, k: usize, w: f64) -> f64 {
        match self.rule {
            UpdateRule::Incremental if k == 0 => w / self.eta,
            UpdateRule::Incremental => (w - self.xi_a * self.sum) / (self.xi_a + self.eta),
            UpdateRule::NonIncremental => (w / self.r - self.xi_a * self.sum) / self.eta,
        }
    }

    fn push(&mut self, k: usize, res: f64) {
        if k > 0 || self.rule == UpdateRule::NonIncremental {
            self.sum += res;
        }
    }
}

/// `(p_i^k, q_i^k)` for every `k` whose successor flow is on the wire.
///
/// With zero initialization every quantity in the line-flow and voltage
/// steps of agent `i` is replayable from the channels and the public network
/// data except the flow-row residual, which the observed step then pins.
/// The injection follows from that residual.
pub fn replay_injections(t: &AttackTranscript, i: usize) -> Result<Vec<(f64, f64)>, AttackError> {
    let rule = rule_of(t)?;
    let h = &t.header;
    if !h.zero_init {
        return Err(AttackError::Inconclusive("replay needs a zero initial state".into()));
    }
    let net = t
        .network
        .as_ref()
        .ok_or_else(|| AttackError::Inconclusive("public network data not supplied".into()))?;
    let b = net.get(i.wrapping_sub(1)).ok_or_else(|| AttackError::Transcript(format!("unknown agent {i}")))?;
    let row = |kind| b.row_index(kind).expect("every agent owns its network rows");
    let (rv, rp, rq) = (row(RowKind::VoltageDrop), row(RowKind::FlowActive), row(RowKind::FlowReactive));
    let children = match &b.global_rows[rp].coupling {
        Coupling::Children(cs) => cs.clone(),
        _ => unreachable!("flow rows couple to children"),
    };
    // Bound rows on the replayed coordinates; the rest never touch them.
    let watched = [VarLayout::FLOW_P, VarLayout::FLOW_Q, VarLayout::V];
    let bound_rows: Vec<usize> = (0..b.n_local())
        .filter(|&r| watched.iter().any(|&x| b.b_mat[(r, x)] != 0.0))
        .collect();
    let dual = || RowDual { rule, xi_a: h.xi_a, eta: h.eta, r: h.r.unwrap_or(1.0), sum: 0.0 };
    let (mut dv, mut dp, mut dq) = (dual(), dual(), dual());

    let mut phi = vec![0.0; b.dim()];
    let mut lambda_b = vec![0.0; b.n_local()];
    let mut out = Vec::new();
    for k in 0.. {
        let next = (t.flow(i, k + 1, Flow::Active), t.flow(i, k + 1, Flow::Reactive));
        let (Some(p_next), Some(q_next)) = next else { break };
        if k > 0 {
            phi[VarLayout::FLOW_P] = t.flow(i, k, Flow::Active).ok_or_else(|| missing(i, k))?;
            phi[VarLayout::FLOW_Q] = t.flow(i, k, Flow::Reactive).ok_or_else(|| missing(i, k))?;
        }
        let parent_v = match &b.global_rows[rv].coupling {
            Coupling::Source(v) => *v,
            Coupling::Parent(_) if k == 0 => 0.0,
            Coupling::Parent(par) => t
                .voltage(*par, k)
                .ok_or_else(|| AttackError::Unobservable(format!("voltage of agent {par} at iteration {k}")))?,
            _ => unreachable!("voltage rows couple upwards"),
        };
        let mut kids = [0.0; 2];
        for &c in &children {
            for (slot, f) in kids.iter_mut().zip([Flow::Active, Flow::Reactive]) {
                *slot += if k == 0 { 0.0 } else { t.flow(c, k, f).ok_or_else(|| missing(c, k))? };
            }
        }

        let res_v = b.global_rows[rv].own_value(&phi) + parent_v;
        let wv = dv.weight(k, res_v);
        let bt = |x: usize| -> f64 { bound_rows.iter().map(|&r| b.b_mat[(r, x)] * lambda_b[r]).sum() };
        let coeff = |r: usize, x: usize| -> f64 {
            b.global_rows[r].coeffs.iter().filter(|c| c.0 == x).map(|c| c.1).sum()
        };

        let mut inj = [0.0; 2];
        for (slot, (x, r, d, next_val, kid)) in inj.iter_mut().zip([
            (VarLayout::FLOW_P, rp, &mut dp, p_next, kids[0]),
            (VarLayout::FLOW_Q, rq, &mut dq, q_next, kids[1]),
        ]) {
            let grad = (phi[x] - next_val) / h.mu;
            let w = (grad - coeff(rv, x) * wv - bt(x)) / coeff(r, x);
            let res = d.invert(k, w);
            d.push(k, res);
            // The residual is `children - flow - injection`.
            *slot = kid - phi[x] - res;
        }
        out.push((inj[0], inj[1]));

        let grad_v = coeff(rv, VarLayout::V) * wv + bt(VarLayout::V);
        dv.push(k, res_v);
        phi[VarLayout::V] -= h.mu * grad_v;
        phi[VarLayout::FLOW_P] = p_next;
        phi[VarLayout::FLOW_Q] = q_next;
        let slack = b.local_slack(&phi);
        for &r in &bound_rows {
            lambda_b[r] = (lambda_b[r] + h.xi_b * slack[r]).max(0.0);
        }
    }
    if out.is_empty() {
        return Err(AttackError::Unobservable(format!("flow of agent {i}")));
    }
    Ok(out)
}

fn missing(i: usize, k: usize) -> AttackError {
    AttackError::Unobservable(format!("flow of agent {i} at iteration {k}"))
}

/// `(p_i^k, q_i^k)` from the replay of [`replay_injections`].
pub fn infer_injections(
    t: &AttackTranscript,
    i: usize,
    k: usize,
) -> Result<InjectionEstimate, AttackError> {
    if t.mode == Mode::Secure || !t.has_plain_values() {
        return Ok(InjectionEstimate::Underdetermined {
            reason: "flows travel masked or encrypted".into(),
        });
    }
    let all = replay_injections(t, i)?;
    let &(p, q) = all
        .get(k)
        .ok_or_else(|| AttackError::Unobservable(format!("flow of agent {i} at iteration {}", k + 1)))?;
    Ok(InjectionEstimate::Value { p, q })
}

/// Which update rule the transcript follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Incremental dual step: the residual enters with `xi_a + eta`.
    Incremental,
    /// Fixed public coefficient `r`: the residual enters with `eta r`.
    NonIncremental,
}

/// How the curvature was isolated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureMethod {
    /// Difference of the second steps of two partners; the balance dual and
    /// the slope cancel.
    PartnerDifference,
    /// Second step of a single partner, with the balance dual rebuilt from
    /// the injection estimate.
    SinglePartner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub agent: usize,
    /// Partner whose first step gave the slope.
    pub partner: usize,
    pub buyer: bool,
    pub alpha: f64,
    pub beta: f64,
    pub rule: UpdateRule,
    pub method: CurvatureMethod,
    /// The inversion assumes zero initial trades and duals.
    pub degraded: bool,
}

/// Replays the trade-local quantities of agent `i` towards partner `j`.
struct TradeReplay<'a> {
    t: &'a AttackTranscript,
    i: usize,
    j: usize,
    rule: UpdateRule,
    sign: f64,
}

impl TradeReplay<'_> {
    fn e(&self, k: usize) -> Result<f64, AttackError> {
        if k == 0 && self.t.header.zero_init {
            return Ok(0.0);
        }
        self.t
            .trade(self.i, self.j, k)
            .ok_or_else(|| AttackError::Unobservable(format!("e_{},{} at iteration {k}", self.i, self.j)))
    }

    fn residual(&self, k: usize) -> Result<f64, AttackError> {
        if k == 0 && self.t.header.zero_init {
            return Ok(0.0);
        }
        let back = self.t.trade(self.j, self.i, k).ok_or_else(|| {
            AttackError::Unobservable(format!("e_{},{} at iteration {k}", self.j, self.i))
        })?;
        Ok(self.e(k)? + back)
    }

    /// Reciprocity dual plus penalty as used in the step from `k` to `k + 1`.
    fn global_term(&self, k: usize) -> Result<f64, AttackError> {
        let h = &self.t.header;
        Ok(match self.rule {
            UpdateRule::Incremental => {
                let mut dual = 0.0;
                for m in 1..=k {
                    dual += h.xi_a * self.residual(m)?;
                }
                dual + h.eta * self.residual(k)?
            }
            UpdateRule::NonIncremental => {
                let r = h.r.ok_or_else(|| AttackError::Transcript("missing public coefficient".into()))?;
                let mut dual = 0.0;
                for m in 0..k {
                    dual += h.xi_a * r * self.residual(m)?;
                }
                dual + h.eta * r * self.residual(k)?
            }
        })
    }

    /// Projected sign dual after the local update that follows iteration `k`.
    fn sign_dual(&self, k: usize) -> Result<f64, AttackError> {
        let xi_b = self.t.header.xi_b;
        let mut l = 0.0;
        for m in 1..=k {
            l = f64::max(0.0, l + self.sign * xi_b * self.e(m)?);
        }
        Ok(l)
    }
}

/// Recovers `(alpha_i, beta_i)` from the first trade iterates.
///
/// With zero initial trades and duals the first step gives
/// `beta = -e^1 / mu - omega`. The curvature comes from the second step:
/// across two partners the shared balance dual cancels, so no injection is
/// needed; with a single partner the balance dual is rebuilt from the
/// injection the flows imply.
pub fn infer_utility_params(t: &AttackTranscript, i: usize) -> Result<UtilityEstimate, AttackError> {
    let rule = rule_of(t)?;
    let h = &t.header;
    let mu = h.mu;
    let partners = t.partners(i, 1);
    if partners.is_empty() {
        return Err(AttackError::Unobservable(format!("trades of agent {i}")));
    }
    let buyer = t.is_buyer(i).ok_or_else(|| AttackError::Inconclusive(format!("role of agent {i}")))?;
    let (sign, w) = if buyer { (1.0, h.omega_b) } else { (-1.0, h.omega_s) };
    let replay = |j: usize| TradeReplay { t, i, j, rule, sign };

    let j = *partners
        .iter()
        .find(|&&j| t.trade(i, j, 1).is_some_and(|e| e != 0.0))
        .ok_or_else(|| AttackError::Inconclusive(format!("agent {i} has no active trade at iteration 1")))?;
    let e1 = t.trade(i, j, 1).expect("found above");
    let beta = -e1 / mu - w;

    // Pair with the widest spread at iteration 2.
    let mut best: Option<(f64, usize, usize)> = None;
    for (a, &ja) in partners.iter().enumerate() {
        for &jb in &partners[a + 1..] {
            if let (Ok(ea), Ok(eb)) = (replay(ja).e(2), replay(jb).e(2)) {
                let d = (ea - eb).abs();
                if d > 0.0 && best.is_none_or(|b| d > b.0) {
                    best = Some((d, ja, jb));
                }
            }
        }
    }

    let (alpha, method) = match best {
        Some((_, ja, jb)) if t.trade(i, ja, 3).is_some() && t.trade(i, jb, 3).is_some() => {
            let (ra, rb) = (replay(ja), replay(jb));
            let d2 = ra.e(2)? - rb.e(2)?;
            let d3 = ra.e(3)? - rb.e(3)?;
            let dg = ra.global_term(2)? - rb.global_term(2)?;
            let ds = ra.sign_dual(2)? - rb.sign_dual(2)?;
            ((((d2 - d3) / mu) - dg - sign * ds) / (2.0 * d2), CurvatureMethod::PartnerDifference)
        }
        _ => {
            let r = replay(j);
            let e2 = r.e(2)?;
            let sum_e: f64 = partners.iter().filter_map(|&l| t.trade(i, l, 1)).sum();
            let lambda_bal = match infer_injections(t, i, 1)? {
                InjectionEstimate::Value { p, .. } => (sign * h.xi_b * (p - sum_e)).max(0.0),
                InjectionEstimate::Underdetermined { reason } => {
                    return Err(AttackError::Inconclusive(reason))
                }
            };
            let alpha = ((e1 - e2) / mu - beta - w - r.global_term(1)? - sign * r.sign_dual(1)?
                + sign * lambda_bal)
                / (2.0 * e1);
            (alpha, CurvatureMethod::SinglePartner)
        }
    };
    Ok(UtilityEstimate { agent: i, partner: j, buyer, alpha, beta, rule, method, degraded: !h.zero_init })
}

/// Relative error with an absolute fallback at zero.
pub fn relative_error(estimate: f64, truth: f64) -> f64 {
    if truth == 0.0 {
        estimate.abs()
    } else {
        ((estimate - truth) / truth).abs()
    }
}
