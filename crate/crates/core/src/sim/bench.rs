use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{run_market, Mode, RunConfig, RunError};
use crate::crypto::{Ciphertext, KeyMaterial};
use crate::grid::GridCase;
use crate::protocols::ProtocolError;

/// Mean per-operation timings at one key size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub key_bits: usize,
    pub reps: usize,
    pub encrypt_ms: f64,
    pub decrypt_crt_ms: f64,
    pub decrypt_standard_ms: f64,
    /// Standard over CRT decryption time.
    pub speedup: f64,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str =
        "key_bits,reps,encrypt_ms,decrypt_crt_ms,decrypt_standard_ms,speedup";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.3}",
            self.key_bits,
            self.reps,
            self.encrypt_ms,
            self.decrypt_crt_ms,
            self.decrypt_standard_ms,
            self.speedup
        )
    }
}

/// CRT against standard decryption on the calling thread. Both paths must
/// agree on every ciphertext.
pub fn run_bench(key_bits: &[usize], reps: usize, seed: u64) -> Result<Vec<BenchRow>, ProtocolError> {
    let mut rows = Vec::with_capacity(key_bits.len());
    for &bits in key_bits {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ bits as u64);
        let km = KeyMaterial::keygen(bits, &mut rng)?;
        let tau = if bits < 32 { 1 } else { 4 };
        let codec = km.codec(tau);
        let cap = codec.max_magnitude().min(1e6);
        let reps = reps.max(1);

        let t = Instant::now();
        let cts: Vec<Ciphertext> = (0..reps)
            .map(|k| {
                let d = ((k as f64 * 0.618_033_988_7).fract() - 0.5) * cap;
                km.public().encrypt(&codec, d, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        let encrypt_ms = t.elapsed().as_secs_f64() * 1e3 / reps as f64;

        let t = Instant::now();
        let crt: Vec<_> = cts.iter().map(|c| km.decrypt_raw_crt(c)).collect::<Result<_, _>>()?;
        let decrypt_crt_ms = t.elapsed().as_secs_f64() * 1e3 / reps as f64;

        let t = Instant::now();
        let std: Vec<_> = cts.iter().map(|c| km.decrypt_raw_standard(c)).collect::<Result<_, _>>()?;
        let decrypt_standard_ms = t.elapsed().as_secs_f64() * 1e3 / reps as f64;

        if crt != std {
            return Err(ProtocolError::Group(format!("decryption paths disagree at {bits} bits")));
        }
        rows.push(BenchRow {
            key_bits: bits,
            reps,
            encrypt_ms,
            decrypt_crt_ms,
            decrypt_standard_ms,
            speedup: decrypt_standard_ms / decrypt_crt_ms,
        });
    }
    Ok(rows)
}

/// Setup and per-iteration secure costs of one case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub case: String,
    pub agents: usize,
    pub sessions: usize,
    pub groups: usize,
    pub keygen_ms: f64,
    pub offline_ms: f64,
    pub online_ms_per_iter: f64,
    pub online_ms_per_agent: f64,
}

impl ScalingRow {
    pub const CSV_HEADER: &'static str =
        "case,agents,sessions,groups,keygen_ms,offline_ms,online_ms_per_iter,online_ms_per_agent";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3},{:.3},{:.4}",
            self.case,
            self.agents,
            self.sessions,
            self.groups,
            self.keygen_ms,
            self.offline_ms,
            self.online_ms_per_iter,
            self.online_ms_per_agent
        )
    }
}

/// Runs `iterations` secure rounds on each case and reports the crypto costs.
pub fn scaling_run(
    cases: &[(String, GridCase)],
    base: &RunConfig,
    iterations: usize,
) -> Result<Vec<ScalingRow>, RunError> {
    let mut rows = Vec::with_capacity(cases.len());
    for (name, case) in cases {
        let config = RunConfig {
            mode: Mode::Secure,
            max_iters: iterations.max(1),
            transcript: false,
            observe: None,
            record_states: false,
            ..base.clone()
        };
        let out = run_market(case, &config)?;
        let stats = out.summary.secure.expect("secure run reports costs");
        rows.push(ScalingRow {
            case: name.clone(),
            agents: case.n_agents(),
            sessions: stats.sessions,
            groups: stats.groups,
            keygen_ms: stats.keygen_ms,
            offline_ms: stats.offline_ms,
            online_ms_per_iter: stats.online_ms_per_iter,
            online_ms_per_agent: stats.online_ms_per_iter / case.n_agents().max(1) as f64,
        });
    }
    Ok(rows)
}
