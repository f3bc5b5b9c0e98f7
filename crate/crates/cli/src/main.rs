use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use gridveil_core::adversary::{attack_report, AttackTranscript};
use gridveil_core::grid::{generate, load_case, GridCase, Role};
use gridveil_core::par::ExecMode;
use gridveil_core::protocols::{ReciprocityBlinding, Transcript};
use gridveil_core::sim::{
    run_bench, run_market, scaling_run, BenchRow, Mode, ObserverLog, RunConfig, ScalingRow,
};

/// Configuration problems map to this exit code.
const EXIT_CONFIG: u8 = 3;
/// Runs that end without converging, and runtime faults.
const EXIT_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "gridveil", version, about = "Privacy-preserving P2P energy market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Centralized,
    PlaintextP3,
    PlaintextP4,
    Secure,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Centralized => Mode::Centralized,
            ModeArg::PlaintextP3 => Mode::PlaintextP3,
            ModeArg::PlaintextP4 => Mode::PlaintextP4,
            ModeArg::Secure => Mode::Secure,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BlindingArg {
    Joint,
    Independent,
}

#[derive(Subcommand)]
enum Command {
    /// Clear the market on one case and print the summary JSON.
    Run {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, value_enum, default_value = "secure")]
        mode: ModeArg,
        #[arg(long, default_value_t = 128)]
        key_bits: usize,
        #[arg(long, default_value_t = 6)]
        tau: u32,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 20_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coefficient of the plaintext P4 mode.
        #[arg(long, default_value_t = 1.0)]
        fixed_r: f64,
        /// Coefficient interval for every session, as `lo,hi`.
        #[arg(long, value_parser = parse_pair)]
        subrange: Option<(f64, f64)>,
        #[arg(long, value_enum, default_value = "joint")]
        blinding: BlindingArg,
        /// Write the message transcript as JSON lines.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Write `iteration,gamma_p,gamma_d,traded_energy` rows.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the summary JSON here as well as to stdout.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Export what this agent decrypts, for the curious-agent attack.
        #[arg(long, requires = "observer_out")]
        observe: Option<usize>,
        #[arg(long)]
        observer_out: Option<PathBuf>,
        /// Run every round on the calling thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Run the inference attacks on a transcript and print the report JSON.
    Attack {
        #[arg(long)]
        transcript: PathBuf,
        /// Case file: public network data and roles for the attack, true
        /// parameters for the error columns.
        #[arg(long)]
        case: Option<PathBuf>,
        /// Observer export of a secure run.
        #[arg(long)]
        observer: Option<PathBuf>,
    },
    /// Time CRT against standard decryption; prints CSV.
    BenchCrypto {
        #[arg(long, value_delimiter = ',', default_value = "128,512,1024,2048")]
        key_bits: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Secure-mode costs over every case file in a directory; prints CSV.
    Scaling {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[arg(long, default_value_t = 128)]
        key_bits: usize,
        #[arg(long, default_value_t = 6)]
        tau: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the bundled case files.
    GenCase {
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected lo,hi, got '{s}'"))?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

/// An error with the exit code it should produce.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: EXIT_FAILED, error: e.into() }
    }
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_CONFIG, error: e.into() }
}

fn load(path: &Path) -> Result<GridCase, Failure> {
    load_case(path).with_context(|| format!("loading {}", path.display())).map_err(config_error)
}

/// Prints to stdout; a reader that went away early is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let mut msg = f.error.to_string();
            for cause in f.error.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run {
            case,
            mode,
            key_bits,
            tau,
            tol,
            max_iters,
            seed,
            fixed_r,
            subrange,
            blinding,
            transcript,
            trace,
            summary,
            observe,
            observer_out,
            sequential,
        } => {
            let grid = load(&case)?;
            let config = RunConfig {
                mode: mode.into(),
                key_bits,
                tau,
                max_iters,
                tol,
                seed,
                transcript: transcript.is_some(),
                fixed_r,
                blinding: match blinding {
                    BlindingArg::Joint => ReciprocityBlinding::Joint,
                    BlindingArg::Independent => ReciprocityBlinding::Independent,
                },
                subrange,
                observe,
                exec: if sequential { ExecMode::Sequential } else { ExecMode::Parallel },
                ..RunConfig::default()
            };
            let out = run_market(&grid, &config).map_err(|e| Failure {
                code: e.exit_code() as u8,
                error: e.into(),
            })?;
            let json = serde_json::to_string_pretty(&out.summary)?;
            emit(&json)?;
            if let Some(p) = summary {
                write_file(&p, &json)?;
            }
            if let Some(p) = trace {
                write_file(&p, &out.trace_csv())?;
            }
            if let (Some(p), Some(t)) = (transcript, &out.transcript) {
                let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                let mut w = BufWriter::new(f);
                t.write_jsonl(&mut w)?;
                w.flush()?;
            }
            if let (Some(p), Some(log)) = (observer_out, &out.observer) {
                write_file(&p, &serde_json::to_string(log)?)?;
            }
            if out.exit_code() != 0 {
                eprintln!("run ended with status {:?}", out.summary.status);
            }
            Ok(out.exit_code() as u8)
        }
        Command::Attack { transcript, case, observer } => {
            let f = File::open(&transcript)
                .with_context(|| format!("opening {}", transcript.display()))
                .map_err(config_error)?;
            let t = Transcript::read_jsonl(BufReader::new(f)).map_err(config_error)?;
            let mut view = AttackTranscript::from_transcript(&t).map_err(config_error)?;
            let grid = case.as_deref().map(load).transpose()?;
            if let Some(g) = &grid {
                view = view
                    .with_network(g)
                    .map_err(config_error)?
                    .with_buyers(g.agents().filter(|&i| g.role(i) == Role::Buyer));
            }
            let log: Option<ObserverLog> = match observer {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))
                        .map_err(config_error)?;
                    Some(serde_json::from_str(&text).map_err(config_error)?)
                }
                None => None,
            };
            let report = attack_report(&view, grid.as_ref(), log.as_ref())?;
            emit(&serde_json::to_string_pretty(&report)?)?;
            Ok(0)
        }
        Command::BenchCrypto { key_bits, reps, seed } => {
            if key_bits.iter().any(|&b| !(16..=4096).contains(&b)) {
                return Err(config_error(anyhow::anyhow!("key sizes must lie in 16..=4096")));
            }
            let rows = run_bench(&key_bits, reps, seed)?;
            let lines: Vec<String> = rows.iter().map(|r| r.csv()).collect();
            emit(&format!("{}\n{}", BenchRow::CSV_HEADER, lines.join("\n")))?;
            Ok(0)
        }
        Command::Scaling { cases, iterations, key_bits, tau, seed } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&cases)
                .with_context(|| format!("reading {}", cases.display()))
                .map_err(config_error)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            let mut loaded = Vec::with_capacity(paths.len());
            for p in &paths {
                let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                loaded.push((name, load(p)?));
            }
            loaded.sort_by_key(|(_, c)| c.n_agents());
            if loaded.is_empty() {
                return Err(config_error(anyhow::anyhow!("no case files in {}", cases.display())));
            }
            let base = RunConfig { key_bits, tau, seed, ..RunConfig::default() };
            let rows = scaling_run(&loaded, &base, iterations).map_err(|e| Failure {
                code: e.exit_code() as u8,
                error: e.into(),
            })?;
            let lines: Vec<String> = rows.iter().map(|r| r.csv()).collect();
            emit(&format!("{}\n{}", ScalingRow::CSV_HEADER, lines.join("\n")))?;
            Ok(0)
        }
        Command::GenCase { out } => {
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (name, doc) in generate::bundled() {
                let path = out.join(name);
                write_file(&path, &serde_json::to_string_pretty(&doc)?)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(0)
        }
    }
}
