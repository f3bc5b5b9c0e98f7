use std::sync::OnceLock;

use num_bigint::{BigInt, BigUint};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use gridveil_core::crypto::{fixed_to_f64, Ciphertext, KeyMaterial};

fn key128() -> &'static KeyMaterial {
    static KEY: OnceLock<KeyMaterial> = OnceLock::new();
    KEY.get_or_init(|| KeyMaterial::keygen(128, &mut ChaCha20Rng::seed_from_u64(128)).unwrap())
}

/// `(g, x, y)` with `a x + b y = g`.
fn egcd(a: i128, b: i128) -> (i128, i128, i128) {
    if b == 0 {
        (a, 1, 0)
    } else {
        let (g, x, y) = egcd(b, a % b);
        (g, y, x - (a / b) * y)
    }
}

fn mod_inv(a: i128, m: i128) -> i128 {
    let (g, x, _) = egcd(a.rem_euclid(m), m);
    assert_eq!(g, 1);
    x.rem_euclid(m)
}

fn mod_pow(mut b: i128, mut e: i128, m: i128) -> i128 {
    let mut acc = 1;
    b = b.rem_euclid(m);
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    acc
}

/// Textbook Paillier with `g = n + 1` on machine integers.
struct ToyPaillier {
    n: i128,
    n2: i128,
    lambda: i128,
    mu: i128,
}

impl ToyPaillier {
    fn new(p: i128, q: i128) -> Self {
        let n = p * q;
        let n2 = n * n;
        let (g, _, _) = egcd(p - 1, q - 1);
        let lambda = (p - 1) * (q - 1) / g;
        let l = (mod_pow(n + 1, lambda, n2) - 1) / n;
        Self { n, n2, lambda, mu: mod_inv(l, n) }
    }

    fn encrypt(&self, m: i128, r: i128) -> i128 {
        (1 + m * self.n) % self.n2 * mod_pow(r, self.n, self.n2) % self.n2
    }

    fn decrypt(&self, c: i128) -> i128 {
        let l = (mod_pow(c, self.lambda, self.n2) - 1) / self.n;
        l * self.mu % self.n
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    egcd(a, b).0.abs()
}

#[test]
fn toy_keys_match_textbook_oracle() {
    for (p, q) in [(5i128, 7i128), (11, 13), (17, 23), (101, 113)] {
        let oracle = ToyPaillier::new(p, q);
        let km = KeyMaterial::from_primes(BigUint::from(p as u64), BigUint::from(q as u64)).unwrap();
        let pk = km.public();
        for m in 0..oracle.n.min(60) {
            for r in (1..oracle.n).filter(|&r| gcd(r, oracle.n) == 1).take(5) {
                let c = pk.encrypt_raw(&BigUint::from(m as u64), &BigUint::from(r as u64), 1).unwrap();
                assert_eq!(c.value, BigUint::from(oracle.encrypt(m, r) as u64), "n={} m={m} r={r}", oracle.n);
                let expect = BigUint::from(oracle.decrypt(oracle.encrypt(m, r)) as u64);
                assert_eq!(expect, BigUint::from(m as u64));
                assert_eq!(km.decrypt_raw_crt(&c).unwrap(), expect);
                assert_eq!(km.decrypt_raw_standard(&c).unwrap(), expect);
            }
        }
    }
}

#[test]
fn toy_homomorphism_against_oracle() {
    let oracle = ToyPaillier::new(11, 13);
    let km = KeyMaterial::from_primes(BigUint::from(11u32), BigUint::from(13u32)).unwrap();
    for (a, b) in [(3i128, 9i128), (100, 42), (140, 2)] {
        let ca = oracle.encrypt(a, 2);
        let cb = oracle.encrypt(b, 7);
        let prod = Ciphertext { value: BigUint::from((ca * cb % oracle.n2) as u64), scale_exp: 1 };
        assert_eq!(km.decrypt_raw_crt(&prod).unwrap(), BigUint::from(((a + b) % oracle.n) as u64));
        let pow = Ciphertext { value: BigUint::from(mod_pow(ca, b, oracle.n2) as u64), scale_exp: 1 };
        assert_eq!(km.decrypt_raw_crt(&pow).unwrap(), BigUint::from((a * b % oracle.n) as u64));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn round_trip_is_exact(d in -1.0e9f64..1.0e9, tau in 0u32..7, seed: u64) {
        let km = key128();
        let codec = km.codec(tau);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let c = km.public().encrypt(&codec, d, &mut rng).unwrap();
        let q = codec.quantize(d).unwrap();
        prop_assert_eq!(km.decrypt_fixed(&c, &codec).unwrap(), q.clone());
        prop_assert_eq!(km.decrypt_crt(&c, &codec).unwrap(), fixed_to_f64(&q, tau));
    }

    #[test]
    fn addition_is_exact(a in -1.0e9f64..1.0e9, b in -1.0e9f64..1.0e9, seed: u64) {
        let km = key128();
        let codec = km.codec(4);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ca = km.public().encrypt(&codec, a, &mut rng).unwrap();
        let cb = km.public().encrypt(&codec, b, &mut rng).unwrap();
        let sum = km.public().hom_add(&ca, &cb).unwrap();
        let expect = codec.quantize(a).unwrap() + codec.quantize(b).unwrap();
        prop_assert_eq!(km.decrypt_fixed(&sum, &codec).unwrap(), expect);
    }

    #[test]
    fn scalar_product_within_two_scales(x in -1.0e6f64..1.0e6, s in -1.0e3f64..1.0e3, seed: u64) {
        let km = key128();
        let tau = 4;
        let codec = km.codec(tau);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let c = km.public().encrypt(&codec, x, &mut rng).unwrap();
        let prod = km.public().hom_scalar_mul(&c, s, &codec).unwrap();
        let (xq, sq) = (codec.quantize(x).unwrap(), codec.quantize(s).unwrap());
        prop_assert_eq!(km.decrypt_fixed(&prod, &codec).unwrap(), &xq * &sq);
        let dec = km.decrypt_crt(&prod, &codec).unwrap();
        let reference = fixed_to_f64(&xq, tau) * fixed_to_f64(&sq, tau);
        prop_assert!((dec - reference).abs() <= 1e-8 * reference.abs().max(1.0), "{} vs {}", dec, reference);
    }

    #[test]
    fn crt_matches_standard(bits in prop::sample::select(vec![16usize, 32, 64, 128]), seed: u64, m: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let km = KeyMaterial::keygen(bits, &mut rng).unwrap();
        let pk = km.public();
        let m = BigUint::from(m) % pk.n();
        let r = pk.sample_blinding(&mut rng);
        let c = pk.encrypt_raw(&m, &r, 1).unwrap();
        prop_assert_eq!(km.decrypt_raw_crt(&c).unwrap(), m.clone());
        prop_assert_eq!(km.decrypt_raw_standard(&c).unwrap(), m);
    }

    #[test]
    fn negative_values_survive_the_signed_domain(v in -1_000_000_000i64..1_000_000_000, seed: u64) {
        let km = key128();
        let codec = km.codec(0);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let c = km.public().encrypt_fixed(&codec, &BigInt::from(v), &mut rng).unwrap();
        prop_assert_eq!(km.decrypt_fixed(&c, &codec).unwrap(), BigInt::from(v));
    }
}

#[test]
fn overflow_is_reported() {
    let km = KeyMaterial::from_primes(BigUint::from(101u32), BigUint::from(113u32)).unwrap();
    let codec = km.codec(0);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    // n = 11413; magnitudes need 3|v| < n.
    assert!(km.public().encrypt(&codec, 3805.0, &mut rng).is_err());
    assert!(km.public().encrypt(&codec, -3805.0, &mut rng).is_err());
    assert!(km.public().encrypt(&codec, 3804.0, &mut rng).is_ok());
    assert!(km.public().encrypt(&codec, -3804.0, &mut rng).is_ok());
}
