//! Bulk-synchronous market engine.
//!
//! Every round fans agent work out (in parallel when enabled), then delivers
//! messages through the lockstep [`Network`](crate::protocols::Network) before
//! the next round starts.

mod bench;
mod engine;
mod secure;

pub use bench::{run_bench, scaling_run, BenchRow, ScalingRow};
pub use engine::{feasible_ranges, foreign_terms, run_market, transcript_header};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, RowKind};
use crate::par::ExecMode;
use crate::pdhg::{AgentState, KktReport, PdhgError, StepParams};
use crate::protocols::{ProtocolError, ReciprocityBlinding, Transcript};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Centralized,
    /// Incremental dual step on exact residuals shared in the clear.
    PlaintextP3,
    /// Non-incremental scheme with a public fixed coefficient, in the clear.
    PlaintextP4,
    /// Non-incremental scheme over the secure mechanisms.
    Secure,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::PlaintextP3 => "plaintext-p3",
            Mode::PlaintextP4 => "plaintext-p4",
            Mode::Secure => "secure",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centralized" => Ok(Mode::Centralized),
            "plaintext-p3" | "p3" => Ok(Mode::PlaintextP3),
            "plaintext-p4" | "p4" => Ok(Mode::PlaintextP4),
            "secure" => Ok(Mode::Secure),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub key_bits: usize,
    pub tau: u32,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub transcript: bool,
    pub steps: StepParams,
    /// Coefficient of the plaintext P4 mode.
    pub fixed_r: f64,
    pub blinding: ReciprocityBlinding,
    /// Overrides the negotiated coefficient interval of every session.
    pub subrange: Option<(f64, f64)>,
    /// Agent whose decrypted products are exported for the curious-agent attack.
    pub observe: Option<usize>,
    /// Keep every iterate (small cases only).
    pub record_states: bool,
    #[serde(skip)]
    pub exec: ExecMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::PlaintextP3,
            key_bits: 128,
            tau: 6,
            max_iters: 20_000,
            tol: 1e-4,
            seed: 0,
            transcript: false,
            steps: StepParams::default(),
            fixed_r: 1.0,
            blinding: ReciprocityBlinding::Joint,
            subrange: None,
            observe: None,
            record_states: false,
            exec: ExecMode::Parallel,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if !(self.tol > 0.0) {
            return Err(RunError::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(RunError::Config("max_iters must be positive".into()));
        }
        let s = &self.steps;
        if [s.mu, s.xi_a, s.xi_b, s.eta].iter().any(|v| !(*v > 0.0)) {
            return Err(RunError::Config("step sizes must be positive".into()));
        }
        if self.mode == Mode::PlaintextP4 && !(self.fixed_r > 0.0) {
            return Err(RunError::Config("the P4 coefficient must be positive".into()));
        }
        if let Some((lo, hi)) = self.subrange {
            if !(lo > 0.0 && hi >= lo) {
                return Err(RunError::Config(format!("invalid subrange [{lo}, {hi}]")));
            }
        }
        if self.mode == Mode::Secure && !(16..=4096).contains(&self.key_bits) {
            return Err(RunError::Config(format!("unsupported key size {}", self.key_bits)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    /// Iteration budget exhausted.
    MaxIters,
    Diverged,
}

impl RunStatus {
    /// 0 converged, 2 otherwise.
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Converged => 0,
            RunStatus::MaxIters | RunStatus::Diverged => 2,
        }
    }
}

/// Costs of the secure mechanisms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SecureStats {
    pub key_bits: usize,
    pub tau: u32,
    pub sessions: usize,
    pub groups: usize,
    pub keygen_ms: f64,
    pub offline_ms: f64,
    /// Mean per-iteration time of the blinded exchanges and masked sums.
    pub online_ms_per_iter: f64,
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub case: String,
    pub mode: Mode,
    pub status: RunStatus,
    pub iterations: usize,
    /// Seller-side sum of trades.
    pub traded_energy: f64,
    pub objective: f64,
    pub gamma_p: f64,
    pub gamma_d: f64,
    pub kkt: KktReport,
    pub wall_ms: f64,
    pub secure: Option<SecureStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub gamma_p: f64,
    pub gamma_d: f64,
    pub traded_energy: f64,
}

/// One decrypted product seen by the curious agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedProduct {
    pub iteration: usize,
    pub row: RowKind,
    pub counterpart: usize,
    /// The observer's own term of the row.
    pub own_term: f64,
    /// Decrypted `r (own + counterpart)`, before any joint rescaling.
    pub product: f64,
    /// The observer's own factor on jointly blinded rows.
    pub own_factor: Option<f64>,
    /// Ground truth, kept for scoring only.
    pub true_counterpart_term: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverLog {
    pub agent: usize,
    /// Coefficient intervals the observer proposed, per row.
    pub subranges: Vec<(RowKind, (f64, f64))>,
    pub products: Vec<ObservedProduct>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub trace: Vec<TraceRow>,
    /// Final states, indexed by agent id minus one.
    pub states: Vec<AgentState>,
    /// Every iterate including the initial one, when requested.
    pub history: Vec<Vec<AgentState>>,
    pub transcript: Option<Transcript>,
    pub observer: Option<ObserverLog>,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        self.summary.status.exit_code()
    }

    /// `iteration,gamma_p,gamma_d,traded_energy`
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,gamma_p,gamma_d,traded_energy\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{:e},{:e},{}\n",
                r.iteration, r.gamma_p, r.gamma_d, r.traded_energy
            ));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Pdhg(#[from] PdhgError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl RunError {
    /// 3 for configuration problems, 2 for failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Grid(_) => 3,
            RunError::Protocol(ProtocolError::EmptyRange) => 3,
            RunError::Pdhg(PdhgError::Precondition(_)) => 3,
            _ => 2,
        }
    }
}
