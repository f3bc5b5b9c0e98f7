use num_bigint::BigInt;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::ProtocolError;
use crate::crypto::{fixed_to_f64, quantize, Ciphertext, KeyMaterial, PublicKey, SignedFixedCodec};
use crate::grid::RowKind;
use crate::pdhg::FeasibleRange;

/// Blinding coefficients are carried at two fixed-point scales, so a reply
/// decrypts at three.
pub const COEFF_SCALES: u32 = 2;
pub const REPLY_SCALES: u32 = 1 + COEFF_SCALES;

/// Smallest negotiated width as a fraction of the full interval.
pub const MIN_WIDTH_FRACTION: f64 = 0.1;

/// A lower end of 0 is exclusive; draws start at this fraction of the upper end.
pub const OPEN_LOWER_FRACTION: f64 = 1e-3;

/// How the two copies of a reciprocity row are blinded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReciprocityBlinding {
    /// Each partner rescales its decrypted product by the coefficient it drew
    /// as responder, so both copies hold `r_i r_j (e_ij + e_ji)`.
    #[default]
    Joint,
    /// Each copy keeps the single coefficient drawn by the other partner.
    Independent,
}

/// Random closed sub-interval of `[lo, hi]` with width at least
/// [`MIN_WIDTH_FRACTION`] of the whole.
pub fn draw_subinterval<R: Rng + ?Sized>(
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<(f64, f64), ProtocolError> {
    let lo = if lo <= 0.0 { hi * OPEN_LOWER_FRACTION } else { lo };
    if !(hi > lo) || !hi.is_finite() {
        return Err(ProtocolError::EmptyRange);
    }
    let full = hi - lo;
    let width = full * rng.gen_range(MIN_WIDTH_FRACTION..=1.0);
    let start = lo + rng.gen_range(0.0..=(full - width));
    Ok((start, (start + width).min(hi)))
}

/// Sub-range the requester shares with its responders before iteration 0.
pub fn negotiate_subrange<R: Rng + ?Sized>(
    full: &FeasibleRange,
    rng: &mut R,
) -> Result<(f64, f64), ProtocolError> {
    let (lo, hi) = full.range.ok_or(ProtocolError::EmptyRange)?;
    draw_subinterval(lo, hi, rng)
}

/// Factor interval for jointly blinded reciprocity rows: products of two
/// draws from `[sqrt(lo), sqrt(hi)]` stay inside `[lo, hi]`.
pub fn factor_interval(lo: f64, hi: f64) -> (f64, f64) {
    let lo = if lo <= 0.0 { hi * OPEN_LOWER_FRACTION } else { lo };
    (lo.sqrt(), hi.sqrt())
}

/// Two-party blinded-sum session for one global row.
///
/// The requester owns the row and the key pair; the responder holds the other
/// term and draws `r^k` from the agreed sub-range every round. Each side keeps
/// its own random stream, so sessions can run concurrently.
#[derive(Clone, Debug)]
pub struct TwoPartySession {
    pub requester: usize,
    pub responder: usize,
    pub row: RowKind,
    requester_key: PublicKey,
    subrange: (f64, f64),
    coeff_bounds: (BigInt, BigInt),
    requester_rng: ChaCha20Rng,
    responder_rng: ChaCha20Rng,
    /// Responder-private coefficient of the latest round.
    coefficient: Option<(u64, BigInt)>,
}

impl TwoPartySession {
    pub fn new(
        requester: usize,
        responder: usize,
        row: RowKind,
        requester_key: PublicKey,
        subrange: (f64, f64),
        tau: u32,
        requester_rng: ChaCha20Rng,
        responder_rng: ChaCha20Rng,
    ) -> Result<Self, ProtocolError> {
        let (lo, hi) = subrange;
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(ProtocolError::EmptyRange);
        }
        let digits = tau * COEFF_SCALES;
        let scale = 10f64.powi(digits as i32);
        let lo_units = BigInt::from((lo * scale).ceil() as i128);
        let hi_units = BigInt::from((hi * scale).floor() as i128);
        if lo_units > hi_units {
            return Err(ProtocolError::EmptyRange);
        }
        Ok(Self {
            requester,
            responder,
            row,
            requester_key,
            subrange,
            coeff_bounds: (lo_units, hi_units),
            requester_rng,
            responder_rng,
            coefficient: None,
        })
    }

    pub fn subrange(&self) -> (f64, f64) {
        self.subrange
    }

    /// S1: the requester encrypts its own term under its key.
    pub fn request(&mut self, codec: &SignedFixedCodec, x_i: f64) -> Result<Ciphertext, ProtocolError> {
        Ok(self.requester_key.encrypt(codec, x_i, &mut self.requester_rng)?)
    }

    /// Responder draws the round's coefficient, at `COEFF_SCALES` fixed-point scales.
    pub fn draw_coefficient(&mut self, round: u64) -> BigInt {
        use num_bigint::RandBigInt;
        let (lo, hi) = &self.coeff_bounds;
        let r = self.responder_rng.gen_bigint_range(lo, &(hi + 1));
        self.coefficient = Some((round, r.clone()));
        r
    }

    /// S2 and S3 with a fresh coefficient: encrypt the responder's term under the
    /// requester's key, add homomorphically, and raise to `r^k`.
    pub fn respond(
        &mut self,
        round: u64,
        codec: &SignedFixedCodec,
        c_i: &Ciphertext,
        x_t: f64,
    ) -> Result<Ciphertext, ProtocolError> {
        let r = self.draw_coefficient(round);
        self.respond_with(codec, c_i, x_t, &r)
    }

    /// S2 and S3 with a given coefficient at `COEFF_SCALES` scales.
    pub fn respond_with(
        &mut self,
        codec: &SignedFixedCodec,
        c_i: &Ciphertext,
        x_t: f64,
        r: &BigInt,
    ) -> Result<Ciphertext, ProtocolError> {
        let (lo, hi) = &self.coeff_bounds;
        if r < lo || r > hi {
            return Err(ProtocolError::RangeViolation {
                r: fixed_to_f64(r, codec.tau() * COEFF_SCALES),
                lo: self.subrange.0,
                hi: self.subrange.1,
            });
        }
        let pk = &self.requester_key;
        let c_t = pk.encrypt(codec, x_t, &mut self.responder_rng)?;
        let sum = pk.hom_add(c_i, &c_t)?;
        Ok(pk.hom_scalar_mul_scaled(&sum, r, COEFF_SCALES, codec)?)
    }

    /// Responder-side view of the coefficient it drew in `round`.
    pub fn coefficient(&self, round: u64) -> Option<&BigInt> {
        match &self.coefficient {
            Some((k, r)) if *k == round => Some(r),
            _ => None,
        }
    }

    /// S4: the requester decrypts `r^k (x_i + x_t)` as an integer at
    /// `REPLY_SCALES` fixed-point scales.
    pub fn finish_fixed(
        keys: &KeyMaterial,
        codec: &SignedFixedCodec,
        reply: &Ciphertext,
    ) -> Result<BigInt, ProtocolError> {
        if reply.scale_exp != REPLY_SCALES {
            return Err(ProtocolError::Crypto(crate::crypto::CryptoError::ScaleMismatch(
                REPLY_SCALES,
                reply.scale_exp,
            )));
        }
        Ok(keys.decrypt_fixed(reply, codec)?)
    }

    pub fn finish(
        keys: &KeyMaterial,
        codec: &SignedFixedCodec,
        reply: &Ciphertext,
    ) -> Result<f64, ProtocolError> {
        let y = Self::finish_fixed(keys, codec, reply)?;
        Ok(fixed_to_f64(&y, codec.tau() * REPLY_SCALES))
    }
}

/// Joint reciprocity product `r_own * Y`, where `Y` is a decrypted reply and
/// `r_own` the coefficient this agent drew as responder on the mirrored row.
pub fn joint_product(y: &BigInt, r_own: &BigInt, tau: u32) -> f64 {
    fixed_to_f64(&(y * r_own), tau * (REPLY_SCALES + COEFF_SCALES))
}

/// All four steps for one round without a network, for tests and benches.
pub fn two_party_exchange(
    session: &mut TwoPartySession,
    requester_keys: &KeyMaterial,
    codec: &SignedFixedCodec,
    round: u64,
    x_i: f64,
    x_t: f64,
) -> Result<f64, ProtocolError> {
    let c_i = session.request(codec, x_i)?;
    let reply = session.respond(round, codec, &c_i, x_t)?;
    TwoPartySession::finish(requester_keys, codec, &reply)
}

/// Coefficient as a real number.
pub fn coefficient_value(r: &BigInt, tau: u32) -> f64 {
    fixed_to_f64(r, tau * COEFF_SCALES)
}

/// Coefficient at `COEFF_SCALES` scales from a real number (floor).
pub fn coefficient_units(r: f64, tau: u32) -> Result<BigInt, ProtocolError> {
    Ok(quantize(r, tau * COEFF_SCALES)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::SeedableRng;

    fn setup(tau: u32, range: (f64, f64)) -> (KeyMaterial, TwoPartySession) {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let keys = KeyMaterial::keygen(128, &mut rng).unwrap();
        let s = TwoPartySession::new(
            1,
            2,
            RowKind::VoltageDrop,
            keys.public().clone(),
            range,
            tau,
            stream(1, &[2]),
            stream(1, &[3]),
        )
        .unwrap();
        (keys, s)
    }

    #[test]
    fn unit_coefficient() {
        let (keys, mut s) = setup(4, (0.5, 1.5));
        let codec = keys.codec(4);
        let c = s.request(&codec, 1.0).unwrap();
        let r = coefficient_units(1.0, 4).unwrap();
        let reply = s.respond_with(&codec, &c, 2.0, &r).unwrap();
        assert_eq!(TwoPartySession::finish(&keys, &codec, &reply).unwrap(), 3.0);
    }

    #[test]
    fn opposite_terms_give_zero() {
        let (keys, mut s) = setup(4, (0.5, 1.5));
        let codec = keys.codec(4);
        for k in 0..5 {
            let y = two_party_exchange(&mut s, &keys, &codec, k, 0.25, -0.25).unwrap();
            assert_eq!(y, 0.0);
        }
    }

    #[test]
    fn coefficient_outside_range_is_a_fault() {
        let (keys, mut s) = setup(4, (0.5, 1.5));
        let codec = keys.codec(4);
        let c = s.request(&codec, 1.0).unwrap();
        let r = coefficient_units(2.0, 4).unwrap();
        assert!(matches!(
            s.respond_with(&codec, &c, 2.0, &r),
            Err(ProtocolError::RangeViolation { .. })
        ));
    }

    #[test]
    fn drawn_coefficients_stay_in_range_and_differ() {
        let (_, mut s) = setup(4, (0.5, 1.5));
        let mut prev = None;
        for k in 0..1000 {
            let r = coefficient_value(&s.draw_coefficient(k), 4);
            assert!((0.5..=1.5).contains(&r));
            assert_ne!(Some(r), prev);
            prev = Some(r);
        }
    }

    #[test]
    fn subranges_stay_inside() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let (lo, hi) = draw_subinterval(0.0223, 2.3057, &mut rng).unwrap();
            assert!(lo >= 0.0223 && hi <= 2.3057 && lo <= hi);
            assert!(hi - lo >= 0.1 * (2.3057 - 0.0223) - 1e-12);
        }
        let (lo, _) = draw_subinterval(0.0, 1.0, &mut rng).unwrap();
        assert!(lo > 0.0);
        assert!(draw_subinterval(1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn joint_factors_multiply_into_range() {
        let (a, b) = factor_interval(0.0223, 2.3057);
        assert!((a * a - 0.0223).abs() < 1e-12 && (b * b - 2.3057).abs() < 1e-12);
    }
}
