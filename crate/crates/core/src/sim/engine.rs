use std::time::Instant;

use super::secure::SecureLayer;
use super::{Mode, RunConfig, RunError, RunOutput, RunStatus, RunSummary, TraceRow};
use crate::grid::{build_constraint_blocks, ConstraintBlocks, Coupling, GridCase, ProsumerSpec, Role, RowKind, VarLayout};
use crate::par;
use crate::pdhg::centralized::solve_centralized;
use crate::pdhg::{
    cost, dual_residual, dual_update_global_incremental, dual_update_global_nonincremental,
    dual_update_local, feasible_range, grad_primal, kkt_residual, primal_residual, primal_update,
    AgentState, BlindedResidual, FeasibleRange, RangeInputs, StepParams,
};
use crate::protocols::{Envelope, Network, Payload, Step, Topic, Transcript, TranscriptHeader};

/// Residuals beyond this are treated as divergence.
const DIVERGENCE_LIMIT: f64 = 1e10;

/// Where the foreign part of a global row comes from, as seen by the protocols.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Link {
    /// Known constant (substation voltage, empty child set).
    Local(f64),
    /// One counterpart holds the foreign term.
    Single(usize),
    /// Several children; summed through a sharing group.
    Group(Vec<usize>),
}

pub(crate) fn link_of(coupling: &Coupling) -> Link {
    match coupling {
        Coupling::Partner(j) => Link::Single(*j),
        Coupling::Parent(t) => Link::Single(*t),
        Coupling::Source(v) => Link::Local(*v),
        Coupling::Children(cs) => match cs.len() {
            0 => Link::Local(0.0),
            1 => Link::Single(cs[0]),
            _ => Link::Group(cs.clone()),
        },
    }
}

pub(crate) fn flow_index(kind: RowKind) -> usize {
    match kind {
        RowKind::FlowReactive => VarLayout::FLOW_Q,
        _ => VarLayout::FLOW_P,
    }
}

/// The term `sender` contributes to row `row` owned by `owner`.
pub(crate) fn contribution(
    blocks: &[ConstraintBlocks],
    states: &[AgentState],
    sender: usize,
    owner: usize,
    row: RowKind,
) -> f64 {
    let phi = &states[sender - 1].phi;
    match row {
        RowKind::Reciprocity { .. } => {
            let k = blocks[sender - 1].layout.trade_index(owner).expect("symmetric partners");
            phi[k]
        }
        RowKind::VoltageDrop => phi[VarLayout::V],
        RowKind::FlowActive | RowKind::FlowReactive => phi[flow_index(row)],
    }
}

/// Exact foreign terms of every agent's global rows, indexed by agent id minus one.
pub fn foreign_terms(blocks: &[ConstraintBlocks], states: &[AgentState]) -> Vec<Vec<f64>> {
    blocks
        .iter()
        .map(|b| {
            b.global_rows
                .iter()
                .map(|row| match &row.coupling {
                    Coupling::Partner(j) => contribution(blocks, states, *j, b.agent, row.kind),
                    Coupling::Parent(t) => contribution(blocks, states, *t, b.agent, row.kind),
                    Coupling::Source(v) => *v,
                    Coupling::Children(cs) => cs
                        .iter()
                        .map(|&c| contribution(blocks, states, c, b.agent, row.kind))
                        .sum(),
                })
                .collect()
        })
        .collect()
}

fn exact_residuals(blocks: &[ConstraintBlocks], states: &[AgentState]) -> Vec<Vec<f64>> {
    let foreign = foreign_terms(blocks, states);
    blocks
        .iter()
        .zip(states)
        .zip(&foreign)
        .map(|((b, s), f)| b.global_residual(&s.phi, f))
        .collect()
}

fn traded_energy(blocks: &[ConstraintBlocks], states: &[AgentState]) -> f64 {
    blocks
        .iter()
        .zip(states)
        .filter(|(b, _)| b.role == Role::Seller)
        .map(|(b, s)| b.layout.trades().map(|k| s.phi[k]).sum::<f64>())
        .sum()
}

/// Admissible coefficient interval of every agent, indexed by agent id minus one.
pub fn feasible_ranges(
    case: &GridCase,
    steps: &StepParams,
) -> Result<Vec<FeasibleRange>, RunError> {
    let (rho, delta) = case.curvature_bounds();
    case.agents()
        .map(|i| {
            let b = build_constraint_blocks(case, i)?;
            Ok(feasible_range(RangeInputs {
                rho,
                delta,
                mu: steps.mu,
                xi_a: steps.xi_a,
                xi_b: steps.xi_b,
                eta: steps.eta,
                sigma_a_max: b.sigma.a_max(),
                sigma_a_min: b.sigma.a_min(),
                sigma_b_max: b.sigma.b_max,
            })?)
        })
        .collect()
}

/// Public settings written at the top of a transcript.
pub fn transcript_header(case: &GridCase, config: &RunConfig) -> TranscriptHeader {
    let m = &case.document().market;
    TranscriptHeader {
        mode: config.mode.as_str().to_string(),
        case: case.document().name.clone().unwrap_or_default(),
        tau: config.tau,
        key_bits: (config.mode == Mode::Secure).then_some(config.key_bits),
        mu: config.steps.mu,
        xi_a: config.steps.xi_a,
        xi_b: config.steps.xi_b,
        eta: config.steps.eta,
        omega_b: m.omega_b,
        omega_s: m.omega_s,
        r: (config.mode == Mode::PlaintextP4).then_some(config.fixed_r),
        zero_init: true,
    }
}

/// Plain exchange: every counterpart sends its raw term to the row owner.
fn plaintext_exchange(
    blocks: &[ConstraintBlocks],
    states: &[AgentState],
    links: &[Vec<Link>],
    net: &mut Network,
) -> Result<Vec<Vec<f64>>, RunError> {
    let round = net.round();
    for (b, agent_links) in blocks.iter().zip(links) {
        for (row, link) in b.global_rows.iter().zip(agent_links) {
            let senders: &[usize] = match link {
                Link::Local(_) => &[],
                Link::Single(t) => std::slice::from_ref(t),
                Link::Group(cs) => cs,
            };
            for &s in senders {
                let value = contribution(blocks, states, s, b.agent, row.kind);
                net.send(Envelope::new(
                    round,
                    s,
                    b.agent,
                    Topic::Row { owner: b.agent, row: row.kind, step: Step::Plain },
                    Payload::Plain(value),
                ))?;
            }
        }
    }
    let mut out = Vec::with_capacity(blocks.len());
    for ((b, s), agent_links) in blocks.iter().zip(states).zip(links) {
        let mut res = Vec::with_capacity(b.n_global());
        for (row, link) in b.global_rows.iter().zip(agent_links) {
            let topic = Topic::Row { owner: b.agent, row: row.kind, step: Step::Plain };
            let foreign = match link {
                Link::Local(v) => *v,
                Link::Single(t) => net.receive(b.agent, *t, &topic)?.payload.plain()?,
                Link::Group(cs) => {
                    let mut sum = 0.0;
                    for &c in cs {
                        sum += net.receive(b.agent, c, &topic)?.payload.plain()?;
                    }
                    sum
                }
            };
            res.push(row.own_value(&s.phi) + foreign);
        }
        out.push(res);
    }
    Ok(out)
}

pub fn run_market(case: &GridCase, config: &RunConfig) -> Result<RunOutput, RunError> {
    config.validate()?;
    if config.mode == Mode::Centralized {
        return run_centralized(case, config);
    }
    let started = Instant::now();
    let blocks: Vec<ConstraintBlocks> =
        case.agents().map(|i| build_constraint_blocks(case, i)).collect::<Result<_, _>>()?;
    let params: Vec<ProsumerSpec> = case.agents().map(|i| case.params(i).clone()).collect();
    let links: Vec<Vec<Link>> = blocks
        .iter()
        .map(|b| b.global_rows.iter().map(|r| link_of(&r.coupling)).collect())
        .collect();
    let market = &case.document().market;
    let (omega_b, omega_s) = (market.omega_b, market.omega_s);
    let steps = config.steps;
    let exec = config.exec;

    let mut states: Vec<AgentState> = blocks.iter().map(AgentState::zeros).collect();
    let mut net = Network::new(config.transcript);
    let mut secure = match config.mode {
        Mode::Secure => Some(SecureLayer::setup(case, &blocks, &links, config, &mut net)?),
        _ => None,
    };

    let mut history = Vec::new();
    if config.record_states {
        history.push(states.clone());
    }
    let mut trace = Vec::new();
    let mut status = RunStatus::MaxIters;
    let mut iterations = 0;
    let mut gamma_p = f64::NAN;
    let mut gamma_d = f64::NAN;

    for k in 0..config.max_iters {
        let round = k as u64 + 1;
        net.advance(round)?;
        let known = match config.mode {
            Mode::PlaintextP3 | Mode::PlaintextP4 => {
                plaintext_exchange(&blocks, &states, &links, &mut net)?
            }
            Mode::Secure => secure
                .as_mut()
                .expect("secure layer")
                .exchange(&blocks, &states, &links, &mut net, k, exec)?,
            Mode::Centralized => unreachable!(),
        };
        let previous: Vec<Vec<f64>> = states.iter().map(|s| s.phi.clone()).collect();

        let mut work: Vec<(&ConstraintBlocks, &ProsumerSpec, &mut AgentState, Vec<f64>)> = blocks
            .iter()
            .zip(&params)
            .zip(states.iter_mut())
            .zip(known)
            .map(|(((b, p), s), r)| (b, p, s, r))
            .collect();
        let mode = config.mode;
        let fixed_r = config.fixed_r;
        let results = par::map_mut(exec, &mut work, |(b, p, s, rho)| {
            match mode {
                Mode::PlaintextP3 => {
                    if k > 0 {
                        dual_update_global_incremental(s, rho, steps.xi_a);
                    }
                    let g = grad_primal(b, p, omega_b, omega_s, steps.eta, s, rho)?;
                    primal_update(s, &g, steps.mu);
                }
                _ => {
                    let scale = if mode == Mode::PlaintextP4 { fixed_r } else { 1.0 };
                    let y = BlindedResidual {
                        round: k as u64,
                        values: rho.iter().map(|v| scale * v).collect(),
                    };
                    let g = grad_primal(b, p, omega_b, omega_s, steps.eta, s, &y.values)?;
                    primal_update(s, &g, steps.mu);
                    dual_update_global_nonincremental(s, &y, k as u64, steps.xi_a)?;
                }
            }
            dual_update_local(b, s, steps.xi_b);
            Ok::<_, crate::pdhg::PdhgError>(())
        });
        drop(work);
        for r in results {
            r?;
        }

        let res = exact_residuals(&blocks, &states);
        gamma_p = primal_residual(res.iter().map(|r| r.as_slice()));
        gamma_d = dual_residual(states.iter().zip(&previous).map(|(s, p)| (s.phi.as_slice(), p.as_slice())));
        iterations = k + 1;
        trace.push(TraceRow {
            iteration: iterations,
            gamma_p,
            gamma_d,
            traded_energy: traded_energy(&blocks, &states),
        });
        if config.record_states {
            history.push(states.clone());
        }
        if !gamma_p.is_finite() || !gamma_d.is_finite() || gamma_p > DIVERGENCE_LIMIT {
            status = RunStatus::Diverged;
            break;
        }
        if gamma_p < config.tol && gamma_d < config.tol {
            status = RunStatus::Converged;
            break;
        }
    }

    let res = exact_residuals(&blocks, &states);
    let kkt = kkt_residual(
        blocks.iter().zip(&params).zip(&states).zip(&res).map(|(((b, p), s), r)| (b, p, s, r.as_slice())),
        omega_b,
        omega_s,
    );
    let objective = blocks
        .iter()
        .zip(&params)
        .zip(&states)
        .map(|((b, p), s)| cost(b, p, omega_b, omega_s, &s.phi))
        .sum();
    let (secure_stats, observer) = match secure {
        Some(layer) => {
            let (stats, obs) = layer.finish(&net, iterations);
            (Some(stats), obs)
        }
        None => (None, None),
    };
    let transcript = config
        .transcript
        .then(|| Transcript { header: transcript_header(case, config), records: net.take_transcript() });
    Ok(RunOutput {
        summary: RunSummary {
            case: case.document().name.clone().unwrap_or_default(),
            mode: config.mode,
            status,
            iterations,
            traded_energy: traded_energy(&blocks, &states),
            objective,
            gamma_p,
            gamma_d,
            kkt,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            secure: secure_stats,
        },
        trace,
        states,
        history,
        transcript,
        observer,
    })
}

fn run_centralized(case: &GridCase, config: &RunConfig) -> Result<RunOutput, RunError> {
    let started = Instant::now();
    let sol = solve_centralized(case)?;
    let blocks: Vec<ConstraintBlocks> =
        case.agents().map(|i| build_constraint_blocks(case, i)).collect::<Result<_, _>>()?;
    let params: Vec<ProsumerSpec> = case.agents().map(|i| case.params(i).clone()).collect();
    let states: Vec<AgentState> = sol.states.into_iter().skip(1).collect();
    let market = &case.document().market;
    let res = exact_residuals(&blocks, &states);
    let kkt = kkt_residual(
        blocks.iter().zip(&params).zip(&states).zip(&res).map(|(((b, p), s), r)| (b, p, s, r.as_slice())),
        market.omega_b,
        market.omega_s,
    );
    let gamma_p = primal_residual(res.iter().map(|r| r.as_slice()));
    Ok(RunOutput {
        summary: RunSummary {
            case: case.document().name.clone().unwrap_or_default(),
            mode: config.mode,
            status: RunStatus::Converged,
            iterations: sol.iterations,
            traded_energy: traded_energy(&blocks, &states),
            objective: sol.objective,
            gamma_p,
            gamma_d: 0.0,
            kkt,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            secure: None,
        },
        trace: Vec::new(),
        states,
        history: Vec::new(),
        transcript: None,
        observer: None,
    })
}
