//! Secure exchanges on coupled rows: blinded two-party sums under the
//! requester's Paillier key, and masked multi-party sums whose offsets are
//! cancelled by a Shamir-reconstructed total.

mod channel;
mod deviation;
mod multi_party;
mod two_party;

pub use channel::{
    Component, Envelope, FixedDecimal, Network, Payload, PayloadType, Step, Topic, Transcript,
    TranscriptHeader, TranscriptRecord,
};
pub use deviation::{consensus_coefficient, deviation_check};
pub use multi_party::MultiPartyGroup;
pub use two_party::{
    coefficient_units, coefficient_value, draw_subinterval, factor_interval, joint_product,
    negotiate_subrange, two_party_exchange, ReciprocityBlinding, TwoPartySession, COEFF_SCALES,
    MIN_WIDTH_FRACTION, OPEN_LOWER_FRACTION, REPLY_SCALES,
};

use thiserror::Error;

use crate::crypto::CryptoError;
use crate::sharing::SharingError;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error("envelope for round {got} while the network is in round {expected}")]
    WrongRound { expected: u64, got: u64 },
    #[error("replayed envelope in round {round} from {sender} to {recipient}")]
    Replay { round: u64, sender: usize, recipient: usize },
    #[error("round {round}: no message from {sender} to {recipient} on {topic:?}")]
    Missing { round: u64, sender: usize, recipient: usize, topic: Topic },
    #[error("unexpected payload type {0:?}")]
    UnexpectedPayload(PayloadType),
    #[error("coefficient {r} outside the agreed range [{lo}, {hi}]")]
    RangeViolation { r: f64, lo: f64, hi: f64 },
    #[error("empty coefficient range; secure mode is unavailable")]
    EmptyRange,
    #[error("offline phase of the group held by {0} is incomplete")]
    OfflineIncomplete(usize),
    #[error("sharing group: {0}")]
    Group(String),
    #[error("transcript has no header line")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
