//! Polynomial secret sharing over exact fixed-point integers.
//!
//! Every participant of a group splits a random secret `R_i` into shares
//! `G_i(Z_j)`, one per participant. Each participant sums the shares it
//! receives; the holder interpolates the sums at zero to obtain
//! `Omega = sum_i R_i`. Online, children send `value + R_j` and the holder
//! subtracts `Omega - R_c` from the sum of masked payloads.

use std::collections::BTreeSet;

use num_bigint::{BigInt, RandBigInt};
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::pow10;

/// Secrets and polynomial coefficients are drawn from `[-SECRET_BOUND, SECRET_BOUND]`.
pub const SECRET_BOUND: i64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SharingError {
    #[error("a sharing group needs at least two participants, got {0}")]
    TooFewParticipants(usize),
    #[error("{points} evaluation points cannot carry a degree-{degree} polynomial")]
    NotEnoughPoints { points: usize, degree: usize },
    #[error("duplicate evaluation point {0}")]
    DuplicatePoint(u64),
    #[error("evaluation points must be positive")]
    ZeroPoint,
    #[error("missing share from participant {0}")]
    MissingShare(usize),
    #[error("interpolation at zero did not produce an integer")]
    NonIntegral,
    #[error("group membership mismatch: {0}")]
    GroupMismatch(String),
}

fn check_points(points: &[u64]) -> Result<(), SharingError> {
    let mut seen = BTreeSet::new();
    for &z in points {
        if z == 0 {
            return Err(SharingError::ZeroPoint);
        }
        if !seen.insert(z) {
            return Err(SharingError::DuplicatePoint(z));
        }
    }
    Ok(())
}

/// Evaluates `secret + sum_t coeffs[t-1] * z^t` at every point.
pub fn split_secret(
    secret: &BigInt,
    coeffs: &[BigInt],
    eval_points: &[u64],
) -> Result<Vec<BigInt>, SharingError> {
    let m = coeffs.len() + 1;
    if m < 2 {
        return Err(SharingError::TooFewParticipants(m));
    }
    if eval_points.len() < m {
        return Err(SharingError::NotEnoughPoints { points: eval_points.len(), degree: m - 1 });
    }
    check_points(eval_points)?;
    Ok(eval_points
        .iter()
        .map(|&z| {
            let z = BigInt::from(z);
            // Horner from the highest coefficient down to the secret.
            let mut acc = BigInt::zero();
            for c in coeffs.iter().rev() {
                acc = (acc + c) * &z;
            }
            acc + secret
        })
        .collect())
}

/// Uniform fixed-point integer in `[-bound, bound] * 10^tau`.
pub fn sample_fixed<R: Rng + ?Sized>(bound: i64, tau: u32, rng: &mut R) -> BigInt {
    let hi = BigInt::from(bound) * pow10(tau);
    rng.gen_bigint_range(&-hi.clone(), &(hi + 1))
}

/// Secret and `m - 1` coefficients for a degree-`(m-1)` sharing polynomial.
pub fn sample_polynomial<R: Rng + ?Sized>(m: usize, tau: u32, rng: &mut R) -> (BigInt, Vec<BigInt>) {
    let secret = sample_fixed(SECRET_BOUND, tau, rng);
    let coeffs = (1..m).map(|_| sample_fixed(SECRET_BOUND, tau, rng)).collect();
    (secret, coeffs)
}

/// `P_j(Z_j)`: the sum of one share from every participant.
pub fn sum_received_shares(shares: &[Option<BigInt>]) -> Result<BigInt, SharingError> {
    let mut total = BigInt::zero();
    for (i, s) in shares.iter().enumerate() {
        total += s.as_ref().ok_or(SharingError::MissingShare(i))?;
    }
    Ok(total)
}

/// Lagrange interpolation of the summed polynomial at zero.
pub fn reconstruct_omega(points: &[(u64, BigInt)]) -> Result<BigInt, SharingError> {
    if points.len() < 2 {
        return Err(SharingError::TooFewParticipants(points.len()));
    }
    let zs: Vec<u64> = points.iter().map(|(z, _)| *z).collect();
    check_points(&zs)?;
    let mut omega = BigRational::zero();
    for (j, (zj, value)) in points.iter().enumerate() {
        let mut weight = BigRational::one();
        for (h, (zh, _)) in points.iter().enumerate() {
            if h != j {
                let zh = BigInt::from(*zh);
                let den = &zh - BigInt::from(*zj);
                weight *= BigRational::new(zh, den);
            }
        }
        omega += weight * BigRational::from_integer(value.clone());
    }
    if !omega.is_integer() {
        return Err(SharingError::NonIntegral);
    }
    Ok(omega.to_integer())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedValue {
    pub agent_id: usize,
    pub payload: BigInt,
}

pub fn mask(agent_id: usize, value: &BigInt, secret: &BigInt) -> MaskedValue {
    MaskedValue { agent_id, payload: value + secret }
}

/// Recovers the plain sum of the children's values from their masked payloads.
pub fn unmask_sum(
    masked: &[MaskedValue],
    children: &[usize],
    own_secret: &BigInt,
    omega: &BigInt,
) -> Result<BigInt, SharingError> {
    let expected: BTreeSet<usize> = children.iter().copied().collect();
    let mut got = BTreeSet::new();
    for m in masked {
        if !got.insert(m.agent_id) {
            return Err(SharingError::GroupMismatch(format!("duplicate value from {}", m.agent_id)));
        }
    }
    if got != expected || expected.len() != children.len() {
        return Err(SharingError::GroupMismatch(format!(
            "expected {:?}, got {:?}",
            expected, got
        )));
    }
    let total: BigInt = masked.iter().map(|m| &m.payload).sum();
    Ok(total + own_secret - omega)
}

/// One participant's view of a sharing group.
#[derive(Clone, Debug)]
pub struct ShareBundle {
    pub agent_id: usize,
    /// This participant's own evaluation point.
    pub eval_point: u64,
    /// Evaluation points of all participants, in group order.
    pub eval_points: Vec<u64>,
    secret: BigInt,
    coeffs: Vec<BigInt>,
    outgoing: Vec<BigInt>,
    share_sum: Option<BigInt>,
    omega: Option<BigInt>,
}

impl ShareBundle {
    /// Samples a fresh polynomial for a group of `eval_points.len()` participants.
    pub fn generate<R: Rng + ?Sized>(
        agent_id: usize,
        eval_point: u64,
        eval_points: Vec<u64>,
        tau: u32,
        rng: &mut R,
    ) -> Result<Self, SharingError> {
        let (secret, coeffs) = sample_polynomial(eval_points.len(), tau, rng);
        Self::from_polynomial(agent_id, eval_point, eval_points, secret, coeffs)
    }

    pub fn from_polynomial(
        agent_id: usize,
        eval_point: u64,
        eval_points: Vec<u64>,
        secret: BigInt,
        coeffs: Vec<BigInt>,
    ) -> Result<Self, SharingError> {
        if !eval_points.contains(&eval_point) {
            return Err(SharingError::GroupMismatch(format!(
                "point {eval_point} not among the group's points"
            )));
        }
        let outgoing = split_secret(&secret, &coeffs, &eval_points)?;
        Ok(Self {
            agent_id,
            eval_point,
            eval_points,
            secret,
            coeffs,
            outgoing,
            share_sum: None,
            omega: None,
        })
    }

    pub fn secret(&self) -> &BigInt {
        &self.secret
    }

    pub fn coeffs(&self) -> &[BigInt] {
        &self.coeffs
    }

    /// `G_i(Z_j)` for every participant `j`, in group order.
    pub fn outgoing(&self) -> &[BigInt] {
        &self.outgoing
    }

    pub fn set_share_sum(&mut self, sum: BigInt) {
        self.share_sum = Some(sum);
    }

    pub fn share_sum(&self) -> Option<&BigInt> {
        self.share_sum.as_ref()
    }

    pub fn set_omega(&mut self, omega: BigInt) {
        self.omega = Some(omega);
    }

    pub fn omega(&self) -> Option<&BigInt> {
        self.omega.as_ref()
    }

    pub fn mask(&self, value: &BigInt) -> MaskedValue {
        mask(self.agent_id, value, &self.secret)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::quantize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn b(v: i64) -> BigInt {
        BigInt::from(v)
    }

    #[test]
    fn worked_examples() {
        assert_eq!(split_secret(&b(3), &[b(1)], &[1, 2]).unwrap(), vec![b(4), b(5)]);
        assert_eq!(split_secret(&b(0), &[b(0), b(0)], &[1, 2, 3]).unwrap(), vec![b(0); 3]);
        assert_eq!(sum_received_shares(&[Some(b(4)), Some(b(7))]).unwrap(), b(11));
        assert_eq!(reconstruct_omega(&[(1, b(11)), (2, b(14))]).unwrap(), b(8));
        let masked = [mask(1, &b(2), &b(10)), mask(2, &b(3), &b(20))];
        assert_eq!(unmask_sum(&masked, &[1, 2], &b(5), &b(35)).unwrap(), b(5));
    }

    #[test]
    fn mask_decimal_example() {
        let m = mask(6, &quantize(1.5, 4).unwrap(), &quantize(4.2417, 4).unwrap());
        assert_eq!(m.payload, b(57417));
    }

    #[test]
    fn error_paths() {
        assert_eq!(split_secret(&b(1), &[], &[1]), Err(SharingError::TooFewParticipants(1)));
        assert_eq!(split_secret(&b(1), &[b(1)], &[2, 2]), Err(SharingError::DuplicatePoint(2)));
        assert_eq!(split_secret(&b(1), &[b(1)], &[0, 2]), Err(SharingError::ZeroPoint));
        assert!(matches!(
            split_secret(&b(1), &[b(1), b(2)], &[1, 2]),
            Err(SharingError::NotEnoughPoints { .. })
        ));
        assert_eq!(sum_received_shares(&[Some(b(1)), None]), Err(SharingError::MissingShare(1)));
        assert_eq!(
            reconstruct_omega(&[(1, b(1)), (1, b(2))]),
            Err(SharingError::DuplicatePoint(1))
        );
        let masked = [mask(1, &b(2), &b(10)), mask(1, &b(3), &b(20))];
        assert!(unmask_sum(&masked, &[1, 2], &b(0), &b(0)).is_err());
        let masked = [mask(1, &b(2), &b(10))];
        assert!(unmask_sum(&masked, &[1, 2], &b(0), &b(0)).is_err());
    }

    #[test]
    fn bundle_pipeline() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let points = vec![1, 2, 3, 4];
        let mut bundles: Vec<ShareBundle> = (0..4)
            .map(|i| ShareBundle::generate(i, points[i], points.clone(), 4, &mut rng).unwrap())
            .collect();
        for j in 0..4 {
            let received: Vec<Option<BigInt>> =
                bundles.iter().map(|bd| Some(bd.outgoing()[j].clone())).collect();
            bundles[j].set_share_sum(sum_received_shares(&received).unwrap());
        }
        let sums: Vec<(u64, BigInt)> =
            bundles.iter().map(|bd| (bd.eval_point, bd.share_sum().unwrap().clone())).collect();
        let omega = reconstruct_omega(&sums).unwrap();
        let direct: BigInt = bundles.iter().map(|bd| bd.secret()).sum();
        assert_eq!(omega, direct);
    }
}
