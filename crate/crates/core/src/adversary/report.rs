use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    attack_secured, infer_injections, infer_utility_params, relative_error, AttackError,
    AttackTranscript, InjectionEstimate, StreamAnalysis,
};
use crate::grid::GridCase;
use crate::sim::{Mode, ObserverLog};

/// Iterations of the curious agent's stream that enter the linear system.
const WINDOW: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub agent: usize,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamErrors {
    pub agent: usize,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionRow {
    pub agent: usize,
    pub iteration: usize,
    pub p: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub mode: Mode,
    pub inferred_params: Vec<ParamRow>,
    pub true_params: Vec<ParamRow>,
    pub relative_errors: Vec<ParamErrors>,
    /// Injections of iteration one, where observable.
    pub injections: Vec<InjectionRow>,
    pub rank_analysis: Vec<StreamAnalysis>,
    pub ciphertexts: usize,
    pub notes: Vec<String>,
}

/// Runs every applicable attack. `case` supplies ground truth for the error
/// columns; `observer` is the curious agent's own view of a secure run.
pub fn attack_report(
    t: &AttackTranscript,
    case: Option<&GridCase>,
    observer: Option<&ObserverLog>,
) -> Result<AttackReport, AttackError> {
    let mut report = AttackReport {
        mode: t.mode,
        inferred_params: Vec::new(),
        true_params: Vec::new(),
        relative_errors: Vec::new(),
        injections: Vec::new(),
        rank_analysis: Vec::new(),
        ciphertexts: t.ciphertexts(),
        notes: Vec::new(),
    };
    if !t.header.zero_init {
        report.notes.push("nonzero initialization: the two-step inversion is degraded".into());
    }

    let agents: BTreeSet<usize> = t.trades.keys().map(|k| k.1).chain(t.flows.keys().map(|k| k.1)).collect();
    match t.mode {
        Mode::PlaintextP3 | Mode::PlaintextP4 => {
            for &i in &agents {
                match infer_injections(t, i, 1) {
                    Ok(InjectionEstimate::Value { p, q }) => {
                        report.injections.push(InjectionRow { agent: i, iteration: 1, p, q })
                    }
                    Ok(InjectionEstimate::Underdetermined { reason }) => report.notes.push(reason),
                    Err(e) => report.notes.push(format!("agent {i}: {e}")),
                }
                if t.partners(i, 1).is_empty() {
                    continue;
                }
                match infer_utility_params(t, i) {
                    Ok(est) => {
                        report.inferred_params.push(ParamRow { agent: i, alpha: est.alpha, beta: est.beta })
                    }
                    Err(e) => report.notes.push(format!("agent {i}: {e}")),
                }
            }
        }
        Mode::Secure => {
            report.notes.push(format!(
                "{} ciphertexts and no cleartext trades or flows on the channels",
                t.ciphertexts()
            ));
            if let Some(log) = observer {
                let attack = attack_secured(log, &t.header, WINDOW)?;
                for p in &attack.params {
                    report.inferred_params.push(ParamRow {
                        agent: p.agent,
                        alpha: p.alpha_midpoint,
                        beta: p.beta_midpoint,
                    });
                }
                report.rank_analysis = attack.streams;
            }
        }
        Mode::Centralized => {
            return Err(AttackError::Transcript("centralized runs exchange nothing".into()))
        }
    }

    if let Some(case) = case {
        for row in &report.inferred_params {
            if row.agent == 0 || row.agent > case.n_agents() {
                continue;
            }
            let truth = case.params(row.agent);
            report.true_params.push(ParamRow { agent: row.agent, alpha: truth.alpha, beta: truth.beta });
            report.relative_errors.push(ParamErrors {
                agent: row.agent,
                alpha: relative_error(row.alpha, truth.alpha),
                beta: relative_error(row.beta, truth.beta),
            });
        }
    }
    Ok(report)
}
