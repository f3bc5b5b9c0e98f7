use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use num_bigint::BigInt;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ProtocolError;
use crate::crypto::{fixed_to_f64, Ciphertext, PublicKey};
use crate::grid::RowKind;

/// Flow component carried by a sharing group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Active,
    Reactive,
}

impl Component {
    pub const BOTH: [Component; 2] = [Component::Active, Component::Reactive];
}

/// Step within a per-iteration row exchange.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    /// Requester's own encrypted term.
    Request,
    /// Responder's blinded encrypted sum.
    Reply,
    /// Raw value shared in the plaintext modes.
    Plain,
}

/// What an envelope is about. Together with round, sender and recipient it
/// identifies a message uniquely.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "topic", rename_all = "snake_case")]
pub enum Topic {
    /// Exchange on the global row `row` of agent `owner`.
    Row { owner: usize, row: RowKind, step: Step },
    /// Offline share `G_i(Z_j)` inside the group held by `holder`.
    Share { holder: usize, component: Component },
    /// Offline share sum `P_j(Z_j)` sent to the holder.
    ShareSum { holder: usize, component: Component },
    /// Online masked flow `Phi_j + R_j`.
    Masked { holder: usize, component: Component },
    PublicKey,
    /// Requester's own feasible interval for a reciprocity row.
    FeasibleRange { row: RowKind },
    /// Negotiated coefficient interval for a row.
    Subrange { row: RowKind },
}

/// Integer at fixed-point scale `10^-digits`, serialized as a decimal string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedDecimal {
    pub units: BigInt,
    pub digits: u32,
}

impl FixedDecimal {
    pub fn new(units: BigInt, digits: u32) -> Self {
        Self { units, digits }
    }

    pub fn to_f64(&self) -> f64 {
        fixed_to_f64(&self.units, self.digits)
    }
}

impl fmt::Display for FixedDecimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let negative = self.units.sign() == num_bigint::Sign::Minus;
        let mut s = self.units.magnitude().to_str_radix(10);
        let d = self.digits as usize;
        if d == 0 {
            return write!(f, "{}{}", if negative { "-" } else { "" }, s);
        }
        if s.len() <= d {
            s = format!("{}{}", "0".repeat(d + 1 - s.len()), s);
        }
        let (int_part, frac_part) = s.split_at(s.len() - d);
        write!(f, "{}{}.{}", if negative { "-" } else { "" }, int_part, frac_part)
    }
}

impl std::str::FromStr for FixedDecimal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (int_part, frac_part) = s.split_once('.').unwrap_or((s, ""));
        let digits = frac_part.len() as u32;
        let units: BigInt = format!("{int_part}{frac_part}")
            .parse()
            .map_err(|_| format!("not a decimal: {s}"))?;
        Ok(Self { units, digits })
    }
}

impl Serialize for FixedDecimal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FixedDecimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Payload {
    Ciphertext(Ciphertext),
    /// Encrypted interval `[lo, hi]`.
    CiphertextPair(Ciphertext, Ciphertext),
    Masked(FixedDecimal),
    PublicKey(PublicKey),
    /// Unprotected value, only ever sent by the plaintext modes.
    Plain(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadType {
    Ciphertext,
    CiphertextPair,
    Masked,
    PublicKey,
    Plain,
}

impl Payload {
    pub fn payload_type(&self) -> PayloadType {
        match self {
            Payload::Ciphertext(_) => PayloadType::Ciphertext,
            Payload::CiphertextPair(..) => PayloadType::CiphertextPair,
            Payload::Masked(_) => PayloadType::Masked,
            Payload::PublicKey(_) => PayloadType::PublicKey,
            Payload::Plain(_) => PayloadType::Plain,
        }
    }

    /// Bytes on the wire: ciphertext and key magnitudes, decimal digits of
    /// masked values, eight bytes for a float.
    pub fn size(&self) -> usize {
        match self {
            Payload::Ciphertext(c) => c.byte_len(),
            Payload::CiphertextPair(a, b) => a.byte_len() + b.byte_len(),
            Payload::Masked(m) => m.to_string().len(),
            Payload::PublicKey(pk) => pk.n().to_bytes_be().len(),
            Payload::Plain(_) => 8,
        }
    }

    pub fn ciphertext(&self) -> Result<&Ciphertext, ProtocolError> {
        match self {
            Payload::Ciphertext(c) => Ok(c),
            other => Err(ProtocolError::UnexpectedPayload(other.payload_type())),
        }
    }

    pub fn ciphertext_pair(&self) -> Result<(&Ciphertext, &Ciphertext), ProtocolError> {
        match self {
            Payload::CiphertextPair(a, b) => Ok((a, b)),
            other => Err(ProtocolError::UnexpectedPayload(other.payload_type())),
        }
    }

    pub fn masked(&self) -> Result<&FixedDecimal, ProtocolError> {
        match self {
            Payload::Masked(m) => Ok(m),
            other => Err(ProtocolError::UnexpectedPayload(other.payload_type())),
        }
    }

    pub fn plain(&self) -> Result<f64, ProtocolError> {
        match self {
            Payload::Plain(v) => Ok(*v),
            other => Err(ProtocolError::UnexpectedPayload(other.payload_type())),
        }
    }

    pub fn public_key(&self) -> Result<&PublicKey, ProtocolError> {
        match self {
            Payload::PublicKey(pk) => Ok(pk),
            other => Err(ProtocolError::UnexpectedPayload(other.payload_type())),
        }
    }
}

/// Round 0 is the setup phase; iteration `k` runs in round `k + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub round: u64,
    pub sender: usize,
    pub recipient: usize,
    #[serde(flatten)]
    pub topic: Topic,
    pub payload: Payload,
}

impl Envelope {
    pub fn new(round: u64, sender: usize, recipient: usize, topic: Topic, payload: Payload) -> Self {
        Self { round, sender, recipient, topic, payload }
    }
}

/// One line of a transcript file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub payload_type: PayloadType,
    pub size: usize,
    #[serde(flatten)]
    pub envelope: Envelope,
}

impl From<&Envelope> for TranscriptRecord {
    fn from(e: &Envelope) -> Self {
        Self { payload_type: e.payload.payload_type(), size: e.payload.size(), envelope: e.clone() }
    }
}

/// First line of a transcript file: public run settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub mode: String,
    pub case: String,
    pub tau: u32,
    pub key_bits: Option<usize>,
    pub mu: f64,
    pub xi_a: f64,
    pub xi_b: f64,
    pub eta: f64,
    pub omega_b: f64,
    pub omega_s: f64,
    /// Fixed blinding coefficient of the plaintext P4 mode.
    pub r: Option<f64>,
    pub zero_init: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub records: Vec<TranscriptRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(TranscriptHeader),
    Message(TranscriptRecord),
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LineRef<'a> {
    Header(&'a TranscriptHeader),
    Message(&'a TranscriptRecord),
}

impl Transcript {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), ProtocolError> {
        serde_json::to_writer(&mut w, &LineRef::Header(&self.header))?;
        writeln!(w)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, &LineRef::Message(r))?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, ProtocolError> {
        let mut header = None;
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line)? {
                Line::Header(h) => header = Some(h),
                Line::Message(m) => records.push(m),
            }
        }
        let header = header.ok_or(ProtocolError::MissingHeader)?;
        Ok(Self { header, records })
    }
}

/// Lockstep in-process message bus.
///
/// Only envelopes stamped with the current round are accepted, and each
/// `(sender, recipient, topic)` may be posted once per round. Moving to the next
/// round drops whatever was not collected.
#[derive(Debug, Default)]
pub struct Network {
    round: u64,
    inbox: BTreeMap<(usize, usize, Topic), Envelope>,
    posted: BTreeSet<(usize, usize, Topic)>,
    record: bool,
    log: Vec<TranscriptRecord>,
    messages: u64,
    bytes: u64,
}

impl Network {
    pub fn new(record: bool) -> Self {
        Self { record, ..Self::default() }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Barrier: every message of the current round has been handled.
    pub fn advance(&mut self, round: u64) -> Result<(), ProtocolError> {
        if round <= self.round && !(round == 0 && self.round == 0) {
            return Err(ProtocolError::WrongRound { expected: self.round + 1, got: round });
        }
        self.round = round;
        self.inbox.clear();
        self.posted.clear();
        Ok(())
    }

    pub fn send(&mut self, env: Envelope) -> Result<(), ProtocolError> {
        if env.round != self.round {
            return Err(ProtocolError::WrongRound { expected: self.round, got: env.round });
        }
        let key = (env.recipient, env.sender, env.topic.clone());
        if !self.posted.insert(key.clone()) {
            return Err(ProtocolError::Replay {
                round: env.round,
                sender: env.sender,
                recipient: env.recipient,
            });
        }
        self.messages += 1;
        self.bytes += env.payload.size() as u64;
        if self.record {
            self.log.push(TranscriptRecord::from(&env));
        }
        self.inbox.insert(key, env);
        Ok(())
    }

    pub fn receive(
        &mut self,
        recipient: usize,
        sender: usize,
        topic: &Topic,
    ) -> Result<Envelope, ProtocolError> {
        self.inbox.remove(&(recipient, sender, topic.clone())).ok_or_else(|| {
            ProtocolError::Missing { round: self.round, sender, recipient, topic: topic.clone() }
        })
    }

    pub fn transcript(&self) -> &[TranscriptRecord] {
        &self.log
    }

    pub fn take_transcript(&mut self) -> Vec<TranscriptRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn messages(&self) -> u64 {
        self.messages
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;

    fn plain(round: u64, sender: usize, recipient: usize) -> Envelope {
        Envelope::new(
            round,
            sender,
            recipient,
            Topic::Row { owner: recipient, row: RowKind::VoltageDrop, step: Step::Plain },
            Payload::Plain(1.0),
        )
    }

    #[test]
    fn fixed_decimal_text() {
        assert_eq!(FixedDecimal::new(BigInt::from(42417), 4).to_string(), "4.2417");
        assert_eq!(FixedDecimal::new(BigInt::from(-5), 4).to_string(), "-0.0005");
        let back: FixedDecimal = "-0.0005".parse().unwrap();
        assert_eq!(back.units, BigInt::from(-5));
        assert_eq!(back.digits, 4);
    }

    #[test]
    fn rejects_wrong_round_and_replay() {
        let mut net = Network::new(false);
        net.advance(1).unwrap();
        assert!(matches!(net.send(plain(2, 1, 2)), Err(ProtocolError::WrongRound { .. })));
        net.send(plain(1, 1, 2)).unwrap();
        assert!(matches!(net.send(plain(1, 1, 2)), Err(ProtocolError::Replay { .. })));
        let topic = plain(1, 1, 2).topic;
        net.receive(2, 1, &topic).unwrap();
        // collected, but posting again in the same round is still a replay
        assert!(matches!(net.send(plain(1, 1, 2)), Err(ProtocolError::Replay { .. })));
        net.advance(2).unwrap();
        assert!(matches!(net.send(plain(1, 1, 2)), Err(ProtocolError::WrongRound { .. })));
        assert!(net.advance(2).is_err());
    }

    #[test]
    fn transcript_lines_round_trip() {
        let mut net = Network::new(true);
        net.send(Envelope::new(
            0,
            3,
            4,
            Topic::Masked { holder: 4, component: Component::Active },
            Payload::Masked(FixedDecimal::new(BigInt::from(57417), 4)),
        ))
        .unwrap();
        net.send(Envelope::new(
            0,
            4,
            3,
            Topic::Row { owner: 4, row: RowKind::Reciprocity { partner: 3 }, step: Step::Request },
            Payload::Ciphertext(Ciphertext { value: BigUint::from(1234u32), scale_exp: 1 }),
        ))
        .unwrap();
        let t = Transcript {
            header: TranscriptHeader {
                mode: "secure".into(),
                case: "x".into(),
                tau: 4,
                key_bits: Some(128),
                mu: 0.07,
                xi_a: 0.02,
                xi_b: 0.015,
                eta: 1.6,
                omega_b: 8.0,
                omega_s: 3.0,
                r: None,
                zero_init: true,
            },
            records: net.transcript().to_vec(),
        };
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"5.7417\""));
        assert_eq!(text.lines().count(), 3);
        let back = Transcript::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }
}
