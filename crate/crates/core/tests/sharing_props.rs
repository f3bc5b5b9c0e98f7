use num_bigint::BigInt;
use num_traits::Zero;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use gridveil_core::sharing::{
    mask, reconstruct_omega, sample_polynomial, split_secret, sum_received_shares, unmask_sum,
    ShareBundle, SharingError,
};

/// Evaluates the polynomial directly as `sum_t c_t z^t`.
fn eval(secret: &BigInt, coeffs: &[BigInt], z: u64) -> BigInt {
    let mut acc = secret.clone();
    let mut pow = BigInt::from(1);
    for c in coeffs {
        pow *= z;
        acc += c * &pow;
    }
    acc
}

/// Lagrange weight of point `j` at zero, kept as a fraction `num / den`.
fn weight(points: &[u64], j: usize) -> (BigInt, BigInt) {
    let mut num = BigInt::from(1);
    let mut den = BigInt::from(1);
    for (h, &zh) in points.iter().enumerate() {
        if h != j {
            num *= zh;
            den *= BigInt::from(zh) - BigInt::from(points[j]);
        }
    }
    (num, den)
}

struct Group {
    points: Vec<u64>,
    secrets: Vec<BigInt>,
    sums: Vec<BigInt>,
}

fn group(m: usize, seed: u64) -> Group {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let points: Vec<u64> = (1..=m as u64).map(|z| z * 3 + seed % 5).collect();
    let mut secrets = Vec::new();
    let mut sums = vec![BigInt::zero(); m];
    for _ in 0..m {
        let (s, coeffs) = sample_polynomial(m, 4, &mut rng);
        let shares = split_secret(&s, &coeffs, &points).unwrap();
        for (j, sh) in shares.iter().enumerate() {
            assert_eq!(sh, &eval(&s, &coeffs, points[j]));
            sums[j] += sh;
        }
        secrets.push(s);
    }
    Group { points, secrets, sums }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn omega_is_the_sum_of_secrets(m in 2usize..=10, seed: u64) {
        let g = group(m, seed);
        let pts: Vec<(u64, BigInt)> = g.points.iter().copied().zip(g.sums.iter().cloned()).collect();
        let omega = reconstruct_omega(&pts).unwrap();
        let total: BigInt = g.secrets.iter().sum();
        prop_assert_eq!(&omega, &total);

        // Independent interpolation: sum_j w_j P(z_j) over a common denominator.
        let mut num = BigInt::zero();
        let mut den = BigInt::from(1);
        for j in 0..m {
            let (wn, wd) = weight(&g.points, j);
            num = num * &wd + &wn * &g.sums[j] * &den;
            den *= wd;
        }
        prop_assert_eq!(&num % &den, BigInt::zero());
        prop_assert_eq!(num / den, total);
    }

    #[test]
    fn unmasking_recovers_the_plain_sum(m in 2usize..=10, seed: u64, values in prop::collection::vec(-1_000_000_000i64..1_000_000_000, 10)) {
        let g = group(m, seed);
        let pts: Vec<(u64, BigInt)> = g.points.iter().copied().zip(g.sums.iter().cloned()).collect();
        let omega = reconstruct_omega(&pts).unwrap();
        // Participant 0 holds; the rest are children.
        let children: Vec<usize> = (1..m).collect();
        let masked: Vec<_> = children.iter().map(|&c| mask(c, &BigInt::from(values[c]), &g.secrets[c])).collect();
        let sum = unmask_sum(&masked, &children, &g.secrets[0], &omega).unwrap();
        let expect: BigInt = children.iter().map(|&c| BigInt::from(values[c])).sum();
        prop_assert_eq!(sum, expect);
    }

    #[test]
    fn bundles_agree_with_free_functions(m in 2usize..=6, seed: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let points: Vec<u64> = (1..=m as u64).collect();
        let bundles: Vec<ShareBundle> = (0..m)
            .map(|i| ShareBundle::generate(i, points[i], points.clone(), 3, &mut rng).unwrap())
            .collect();
        let received: Vec<BigInt> = (0..m)
            .map(|j| sum_received_shares(&bundles.iter().map(|b| Some(b.outgoing()[j].clone())).collect::<Vec<_>>()).unwrap())
            .collect();
        let omega = reconstruct_omega(&points.iter().copied().zip(received).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(omega, bundles.iter().map(|b| b.secret().clone()).sum::<BigInt>());
    }
}

#[test]
fn malformed_groups_are_rejected() {
    let s = BigInt::from(5);
    let c = vec![BigInt::from(2)];
    assert_eq!(split_secret(&s, &[], &[1, 2]), Err(SharingError::TooFewParticipants(1)));
    assert_eq!(split_secret(&s, &c, &[1]), Err(SharingError::NotEnoughPoints { points: 1, degree: 1 }));
    assert_eq!(split_secret(&s, &c, &[1, 1]), Err(SharingError::DuplicatePoint(1)));
    assert_eq!(split_secret(&s, &c, &[0, 1]), Err(SharingError::ZeroPoint));
    assert_eq!(sum_received_shares(&[Some(BigInt::from(1)), None]), Err(SharingError::MissingShare(1)));
    let m = [mask(1, &BigInt::from(3), &s), mask(1, &BigInt::from(4), &s)];
    assert!(matches!(unmask_sum(&m, &[1, 2], &s, &s), Err(SharingError::GroupMismatch(_))));
}

#[test]
fn two_party_hand_example() {
    // P_1(z) = 7 + 2z, P_2(z) = -3 + 5z at z = 1, 2.
    let s1 = split_secret(&BigInt::from(7), &[BigInt::from(2)], &[1, 2]).unwrap();
    let s2 = split_secret(&BigInt::from(-3), &[BigInt::from(5)], &[1, 2]).unwrap();
    assert_eq!(s1, vec![BigInt::from(9), BigInt::from(11)]);
    assert_eq!(s2, vec![BigInt::from(2), BigInt::from(7)]);
    let omega = reconstruct_omega(&[(1, BigInt::from(11)), (2, BigInt::from(18))]).unwrap();
    assert_eq!(omega, BigInt::from(4));
}
