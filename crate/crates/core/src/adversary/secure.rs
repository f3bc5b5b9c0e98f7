use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{relative_error, AttackError, AttackTranscript};
use crate::grid::RowKind;
use crate::protocols::TranscriptHeader;
use crate::sim::ObserverLog;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;
/// Products this small are read as a converged row.
const CONVERGED_PRODUCT: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankAnalysis {
    pub equations: usize,
    pub unknowns: usize,
    pub rank: usize,
    pub rank_deficient: bool,
}

impl RankAnalysis {
    fn of(m: &DMatrix<f64>) -> Self {
        let sv = m.singular_values();
        let top = sv.iter().cloned().fold(0.0, f64::max);
        let rank = sv.iter().filter(|&&s| s > RANK_TOL * top).count();
        Self { equations: m.nrows(), unknowns: m.ncols(), rank, rank_deficient: rank < m.ncols() }
    }
}

/// The curious requester's attack on one blinded row.
///
/// With `y^k = r^k (x_i^k + x_j^k)` and `z^k = r^k x_j^k`, iteration `k`
/// contributes the linear equation `x_i^k r^k + z^k = y^k` in two fresh
/// unknowns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamAnalysis {
    pub row: RowKind,
    pub counterpart: usize,
    pub iterations: usize,
    pub rank: RankAnalysis,
    /// Relative RMS error of the minimum-norm least-squares estimate of `x_j`.
    pub lsq_error: f64,
    /// Same, with every `r^k` replaced by the midpoint of its known interval.
    pub midpoint_error: f64,
    /// Error of `x_j = -x_i` at the last iteration.
    pub converged_relation_error: f64,
    /// Magnitude of the last product.
    pub final_product: f64,
    /// Whether the last product reads as zero.
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamAttempt {
    pub agent: usize,
    pub alpha_lsq: f64,
    pub beta_lsq: f64,
    pub alpha_midpoint: f64,
    pub beta_midpoint: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecureAttack {
    pub observer: usize,
    pub streams: Vec<StreamAnalysis>,
    /// Two-step inversions fed with the best trade estimates available.
    pub params: Vec<ParamAttempt>,
}

impl SecureAttack {
    /// Smallest relative parameter error the attacker achieves against `truth`.
    pub fn best_param_error(&self, agent: usize, alpha: f64, beta: f64) -> Option<f64> {
        self.params.iter().find(|p| p.agent == agent).map(|p| {
            let lsq = relative_error(p.alpha_lsq, alpha).max(relative_error(p.beta_lsq, beta));
            let mid = relative_error(p.alpha_midpoint, alpha).max(relative_error(p.beta_midpoint, beta));
            lsq.min(mid)
        })
    }
}

struct Stream {
    row: RowKind,
    counterpart: usize,
    interval: (f64, f64),
    x_i: Vec<f64>,
    y: Vec<f64>,
    /// Coefficient factor the observer contributed itself, if any.
    own: Vec<Option<f64>>,
    truth: Vec<f64>,
}

fn streams(log: &ObserverLog) -> Vec<Stream> {
    let mut out: Vec<Stream> = Vec::new();
    for p in &log.products {
        let idx = match out.iter().position(|s| s.row == p.row && s.counterpart == p.counterpart) {
            Some(idx) => idx,
            None => {
                let interval = log
                    .subranges
                    .iter()
                    .find(|(r, _)| *r == p.row)
                    .map_or((f64::NAN, f64::NAN), |(_, iv)| *iv);
                out.push(Stream {
                    row: p.row,
                    counterpart: p.counterpart,
                    interval,
                    x_i: Vec::new(),
                    y: Vec::new(),
                    own: Vec::new(),
                    truth: Vec::new(),
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        s.x_i.push(p.own_term);
        s.y.push(p.product);
        s.own.push(p.own_factor);
        s.truth.push(p.true_counterpart_term);
    }
    out
}

fn rms_relative(est: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = est.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Minimum-norm least-squares estimates of `x_j^k` over the first `window`
/// iterations, plus the rank of the system.
fn lsq_estimates(x_i: &[f64], y: &[f64]) -> (RankAnalysis, Vec<f64>) {
    let n = x_i.len();
    let mut m = DMatrix::zeros(n, 2 * n);
    for k in 0..n {
        m[(k, 2 * k)] = x_i[k];
        m[(k, 2 * k + 1)] = 1.0;
    }
    let rank = RankAnalysis::of(&m);
    let rhs = DVector::from_column_slice(y);
    let sol = m
        .svd(true, true)
        .solve(&rhs, RANK_TOL)
        .unwrap_or_else(|_| DVector::zeros(2 * n));
    let est = (0..n)
        .map(|k| {
            let (r, z) = (sol[2 * k], sol[2 * k + 1]);
            if r.abs() > f64::EPSILON { z / r } else { 0.0 }
        })
        .collect();
    (rank, est)
}

/// Runs the curious-requester attack over every row the observer decrypted,
/// using the first `window` iterations for the linear system.
pub fn attack_secured(
    log: &ObserverLog,
    header: &TranscriptHeader,
    window: usize,
) -> Result<SecureAttack, AttackError> {
    if log.products.is_empty() {
        return Err(AttackError::Transcript(format!("agent {} decrypted nothing", log.agent)));
    }
    let mut out = SecureAttack { observer: log.agent, streams: Vec::new(), params: Vec::new() };
    for s in streams(log) {
        let n = s.x_i.len().min(window.max(1));
        let (rank, lsq) = lsq_estimates(&s.x_i[..n], &s.y[..n]);
        let mid_r = 0.5 * (s.interval.0 + s.interval.1);
        let midpoint: Vec<f64> = (0..n).map(|k| s.y[k] / mid_r - s.x_i[k]).collect();
        let last = s.x_i.len() - 1;
        let stream = StreamAnalysis {
            row: s.row,
            counterpart: s.counterpart,
            iterations: n,
            rank,
            lsq_error: rms_relative(&lsq, &s.truth[..n]),
            midpoint_error: rms_relative(&midpoint, &s.truth[..n]),
            converged_relation_error: (-s.x_i[last] - s.truth[last]).abs(),
            final_product: s.y[last].abs(),
            converged: s.y[last].abs() < CONVERGED_PRODUCT,
        };

        if let RowKind::Reciprocity { partner } = s.row {
            if n > 2 {
                let invert = |est: &[f64]| {
                    let (e1, e2) = (est[1], est[2]);
                    // Partners hold opposite roles; the observer knows its own.
                    let buyer = *s.x_i.last().expect("nonempty") > 0.0;
                    let (sign, w) = if buyer { (1.0, header.omega_b) } else { (-1.0, header.omega_s) };
                    let beta = -e1 / header.mu - w;
                    // The blinded residual of iteration one is known in full
                    // when the observer holds the other factor.
                    let y1 = match s.own[1] {
                        Some(r_own) => r_own * s.y[1],
                        None => s.y[1],
                    };
                    let lambda_sign = (sign * header.xi_b * e1).max(0.0);
                    let alpha = ((e1 - e2) / header.mu - beta - w - header.eta * y1 - sign * lambda_sign)
                        / (2.0 * e1);
                    (alpha, beta)
                };
                let (alpha_lsq, beta_lsq) = invert(&lsq);
                let (alpha_midpoint, beta_midpoint) = invert(&midpoint);
                out.params.push(ParamAttempt {
                    agent: partner,
                    alpha_lsq,
                    beta_lsq,
                    alpha_midpoint,
                    beta_midpoint,
                });
            }
        }
        out.streams.push(stream);
    }
    Ok(out)
}

/// Holder-side view of one child's masked stream `Phi_j^k + R_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedStreamReport {
    pub holder: usize,
    pub child: usize,
    pub rank: RankAnalysis,
    /// Relative RMS error when the mask is ignored.
    pub unmasked_guess_error: f64,
    /// Relative RMS error when the first masked value is taken as the mask,
    /// valid only when the first iterate is known to be zero.
    pub zero_start_error: f64,
}

/// Offset-identifiability check on a masked stream. `truth[k]` is the child's
/// active flow at iteration `k`.
pub fn attack_masked_stream(
    t: &AttackTranscript,
    holder: usize,
    child: usize,
    truth: &[f64],
) -> Result<MaskedStreamReport, AttackError> {
    let masked: Vec<f64> = (0..truth.len()).map_while(|k| t.masked_active(holder, child, k)).collect();
    if masked.is_empty() {
        return Err(AttackError::Unobservable(format!("masked flow of {child} towards {holder}")));
    }
    let n = masked.len();
    // Unknowns: one offset plus one value per iteration.
    let mut m = DMatrix::zeros(n, n + 1);
    for k in 0..n {
        m[(k, 0)] = 1.0;
        m[(k, k + 1)] = 1.0;
    }
    let truth = &truth[..n];
    let zero_start: Vec<f64> = masked.iter().map(|v| v - masked[0]).collect();
    Ok(MaskedStreamReport {
        holder,
        child,
        rank: RankAnalysis::of(&m),
        unmasked_guess_error: rms_relative(&masked, truth),
        zero_start_error: rms_relative(&zero_start, truth),
    })
}
