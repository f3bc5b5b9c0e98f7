//! Radial feeder and market data: case files, validation, roles and the
//! per-agent constraint blocks of the decomposed market problem.

mod blocks;
mod case;
pub mod generate;

pub use blocks::{
    build_constraint_blocks, BlockSigma, ConstraintBlocks, Coupling, GlobalRow, LocalRow, RowKind,
    Var, VarLayout,
};
pub use case::{
    classify_agents, load_case, BusSpec, CaseDocument, GridCase, LineParams, MarketSpec,
    NodeBounds, Partition, PartnerSpec, ProsumerSpec, Role,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read case file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed case document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid case:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("agent {0} is not a prosumer of this case")]
    UnknownAgent(usize),
}
