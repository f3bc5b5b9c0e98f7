//! Privacy-preserving peer-to-peer energy trading over radial distribution feeders.
//!
//! Each prosumer runs its own primal-dual hybrid gradient (PDHG) iteration on a
//! LinDistFlow market model. Coupled quantities travel between agents either in
//! the clear (baseline), through a CRT-accelerated Paillier two-party exchange
//! blinded by a random coefficient, or through an offline/online secret-sharing
//! mask for parents with several children.
//!
//! Module map:
//!
//! - [`crypto`]: Paillier keys, signed fixed-point codec, homomorphic ops.
//! - [`sharing`]: polynomial shares, Lagrange reconstruction at zero, masking.
//! - [`grid`]: case files, topology validation, per-agent constraint blocks.
//! - [`pdhg`]: per-agent updates, residuals, KKT checks, convergence analysis,
//!   and a centralized interior-point reference solver.
//! - [`protocols`]: the message layer plus the secure two-party and
//!   multi-party mechanisms.
//! - [`adversary`]: inference attacks on plaintext transcripts and their
//!   failure analysis on secured ones.
//! - [`sim`]: the bulk-synchronous market engine, benchmarks and scaling runs.

pub mod adversary;
pub mod crypto;
pub mod grid;
pub mod par;
pub mod pdhg;
pub mod protocols;
pub mod rng;
pub mod sharing;
pub mod sim;

pub use crypto::{Ciphertext, CryptoError, KeyMaterial, PublicKey, SignedFixedCodec};
pub use grid::{GridCase, GridError, Role};
pub use sim::{Mode, RunConfig, RunError, RunOutput};
