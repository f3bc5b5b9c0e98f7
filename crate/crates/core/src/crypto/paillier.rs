use num_bigint::{BigInt, BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codec::SignedFixedCodec;
use super::prime::{gcd, random_prime};
use super::CryptoError;

const MAX_KEY_ATTEMPTS: usize = 64;

mod decimal {
    use num_bigint::BigUint;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(D::Error::custom)
    }
}

/// Public half of a key pair: modulus `n`, generator `n + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "PublicKeyDocument", into = "PublicKeyDocument")]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
}

#[derive(Serialize, Deserialize)]
struct PublicKeyDocument {
    #[serde(with = "decimal")]
    n: BigUint,
}

impl From<PublicKeyDocument> for PublicKey {
    fn from(doc: PublicKeyDocument) -> Self {
        PublicKey::new(doc.n)
    }
}

impl From<PublicKey> for PublicKeyDocument {
    fn from(pk: PublicKey) -> Self {
        PublicKeyDocument { n: pk.n }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    #[serde(with = "decimal")]
    pub value: BigUint,
    pub scale_exp: u32,
}

impl Ciphertext {
    /// Serialized size in bytes of the ciphertext value.
    pub fn byte_len(&self) -> usize {
        self.value.bits().div_ceil(8) as usize
    }
}

impl PublicKey {
    pub fn new(n: BigUint) -> Self {
        let n_squared = &n * &n;
        Self { n, n_squared }
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn generator(&self) -> BigUint {
        &self.n + 1u32
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    /// Codec whose domain bound is this key's modulus.
    pub fn codec(&self, tau: u32) -> SignedFixedCodec {
        SignedFixedCodec::new(tau, self.n.clone())
    }

    /// Uniform `r` in `[1, n)` with `gcd(r, n) = 1`.
    pub fn sample_blinding<R: Rng + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if gcd(&r, &self.n).is_one() {
                return r;
            }
        }
    }

    /// `(1 + n m) r^n mod n^2` for an already encoded `m < n`.
    pub fn encrypt_raw(
        &self,
        m: &BigUint,
        r: &BigUint,
        scale_exp: u32,
    ) -> Result<Ciphertext, CryptoError> {
        if m >= &self.n {
            return Err(CryptoError::EncodingOverflow(m.to_string()));
        }
        if r.is_zero() || r >= &self.n || !gcd(r, &self.n).is_one() {
            return Err(CryptoError::InvalidCiphertext);
        }
        let gm = (BigUint::one() + &self.n * m) % &self.n_squared;
        let rn = r.modpow(&self.n, &self.n_squared);
        Ok(Ciphertext { value: gm * rn % &self.n_squared, scale_exp })
    }

    pub fn encrypt<R: Rng + ?Sized>(
        &self,
        codec: &SignedFixedCodec,
        d: f64,
        rng: &mut R,
    ) -> Result<Ciphertext, CryptoError> {
        let m = codec.encode(d)?;
        let r = self.sample_blinding(rng);
        self.encrypt_raw(&m, &r, 1)
    }

    /// Encrypts a signed integer that is already at fixed-point scale.
    pub fn encrypt_fixed<R: Rng + ?Sized>(
        &self,
        codec: &SignedFixedCodec,
        value: &BigInt,
        rng: &mut R,
    ) -> Result<Ciphertext, CryptoError> {
        let m = codec.to_domain(value)?;
        let r = self.sample_blinding(rng);
        self.encrypt_raw(&m, &r, 1)
    }

    fn check(&self, e: &Ciphertext) -> Result<(), CryptoError> {
        if e.value.is_zero() || e.value >= self.n_squared {
            return Err(CryptoError::InvalidCiphertext);
        }
        Ok(())
    }

    pub fn hom_add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, CryptoError> {
        self.check(a)?;
        self.check(b)?;
        if a.scale_exp != b.scale_exp {
            return Err(CryptoError::ScaleMismatch(a.scale_exp, b.scale_exp));
        }
        Ok(Ciphertext { value: &a.value * &b.value % &self.n_squared, scale_exp: a.scale_exp })
    }

    /// Raises a fresh ciphertext to the encoded scalar `floor(10^tau s)`; the
    /// result carries two fixed-point scales.
    pub fn hom_scalar_mul(
        &self,
        e: &Ciphertext,
        s: f64,
        codec: &SignedFixedCodec,
    ) -> Result<Ciphertext, CryptoError> {
        let scalar = codec.quantize(s)?;
        self.hom_scalar_mul_fixed(e, &scalar, codec)
    }

    pub fn hom_scalar_mul_fixed(
        &self,
        e: &Ciphertext,
        scalar: &BigInt,
        codec: &SignedFixedCodec,
    ) -> Result<Ciphertext, CryptoError> {
        self.hom_scalar_mul_scaled(e, scalar, 1, codec)
    }

    /// Scalar product with a scalar carried at `scalar_scales` fixed-point
    /// scales; the result carries `1 + scalar_scales`.
    pub fn hom_scalar_mul_scaled(
        &self,
        e: &Ciphertext,
        scalar: &BigInt,
        scalar_scales: u32,
        codec: &SignedFixedCodec,
    ) -> Result<Ciphertext, CryptoError> {
        self.check(e)?;
        if e.scale_exp != 1 {
            return Err(CryptoError::ScaleNotFresh(e.scale_exp));
        }
        let exponent = codec.to_domain(scalar)?;
        Ok(Ciphertext {
            value: e.value.modpow(&exponent, &self.n_squared),
            scale_exp: 1 + scalar_scales,
        })
    }
}

/// Serialized form of a private key.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KeyDocument {
    #[serde(with = "decimal")]
    pub p: BigUint,
    #[serde(with = "decimal")]
    pub q: BigUint,
    #[serde(with = "decimal")]
    pub n: BigUint,
    pub key_bits: u64,
}

/// Full key pair with the CRT decryption constants.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "KeyDocument", into = "KeyDocument")]
pub struct KeyMaterial {
    p: BigUint,
    q: BigUint,
    pk: PublicKey,
    pi: BigUint,
    theta: BigUint,
    gamma_p: BigUint,
    gamma_q: BigUint,
    q_inv_p: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    key_bits: u64,
}

impl TryFrom<KeyDocument> for KeyMaterial {
    type Error = CryptoError;

    fn try_from(doc: KeyDocument) -> Result<Self, CryptoError> {
        let km = KeyMaterial::from_primes(doc.p, doc.q)?;
        if km.pk.n != doc.n || km.key_bits != doc.key_bits {
            return Err(CryptoError::InvalidKey("n or key_bits inconsistent with p, q".into()));
        }
        Ok(km)
    }
}

impl From<KeyMaterial> for KeyDocument {
    fn from(km: KeyMaterial) -> Self {
        KeyDocument { n: km.pk.n.clone(), p: km.p, q: km.q, key_bits: km.key_bits }
    }
}

fn l_function(x: &BigUint, d: &BigUint) -> BigUint {
    (x - 1u32) / d
}

fn inverse(a: &BigUint, m: &BigUint) -> Result<BigUint, CryptoError> {
    a.modinv(m)
        .ok_or_else(|| CryptoError::InvalidKey(format!("{a} has no inverse modulo {m}")))
}

impl KeyMaterial {
    /// Generates a key whose modulus has exactly `key_bits` bits.
    pub fn keygen<R: Rng + ?Sized>(key_bits: usize, rng: &mut R) -> Result<Self, CryptoError> {
        if !(16..=4096).contains(&key_bits) {
            return Err(CryptoError::KeySize(key_bits));
        }
        let bits_p = (key_bits / 2) as u64;
        let bits_q = key_bits as u64 - bits_p;
        for _ in 0..MAX_KEY_ATTEMPTS {
            let p = random_prime(bits_p, rng)?;
            let q = random_prime(bits_q, rng)?;
            if p == q {
                continue;
            }
            match Self::from_primes(p, q) {
                Ok(km) if km.key_bits == key_bits as u64 => return Ok(km),
                _ => continue,
            }
        }
        Err(CryptoError::KeyGeneration(format!(
            "no admissible prime pair after {MAX_KEY_ATTEMPTS} attempts"
        )))
    }

    /// Builds the key from two distinct primes, rejecting pairs with
    /// `gcd(pq, (p-1)(q-1)) != 1`. Primality is the caller's responsibility.
    pub fn from_primes(p: BigUint, q: BigUint) -> Result<Self, CryptoError> {
        if p == q || p < BigUint::from(3u32) || q < BigUint::from(3u32) {
            return Err(CryptoError::InvalidKey("primes must be distinct and odd".into()));
        }
        let n = &p * &q;
        let pi = (&p - 1u32) * (&q - 1u32);
        if !gcd(&n, &pi).is_one() {
            return Err(CryptoError::KeyGeneration("gcd(n, (p-1)(q-1)) != 1".into()));
        }
        let theta = inverse(&(&pi % &n), &n)?;
        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let g = &n + 1u32;
        let gamma_p = inverse(
            &(l_function(&g.modpow(&(&p - 1u32), &p_squared), &p) % &p),
            &p,
        )?;
        let gamma_q = inverse(
            &(l_function(&g.modpow(&(&q - 1u32), &q_squared), &q) % &q),
            &q,
        )?;
        let q_inv_p = inverse(&(&q % &p), &p)?;
        let key_bits = n.bits();
        Ok(Self {
            pk: PublicKey::new(n),
            p,
            q,
            pi,
            theta,
            gamma_p,
            gamma_q,
            q_inv_p,
            p_squared,
            q_squared,
            key_bits,
        })
    }

    pub fn public(&self) -> &PublicKey {
        &self.pk
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn n(&self) -> &BigUint {
        &self.pk.n
    }

    pub fn pi(&self) -> &BigUint {
        &self.pi
    }

    pub fn theta(&self) -> &BigUint {
        &self.theta
    }

    pub fn gamma_p(&self) -> &BigUint {
        &self.gamma_p
    }

    pub fn gamma_q(&self) -> &BigUint {
        &self.gamma_q
    }

    pub fn q_inv_p(&self) -> &BigUint {
        &self.q_inv_p
    }

    pub fn key_bits(&self) -> u64 {
        self.key_bits
    }

    pub fn codec(&self, tau: u32) -> SignedFixedCodec {
        self.pk.codec(tau)
    }

    /// CRT decryption to the encoded residue in `[0, n)`.
    pub fn decrypt_raw_crt(&self, e: &Ciphertext) -> Result<BigUint, CryptoError> {
        self.pk.check(e)?;
        let e_p = l_function(
            &(&e.value % &self.p_squared).modpow(&(&self.p - 1u32), &self.p_squared),
            &self.p,
        ) * &self.gamma_p
            % &self.p;
        let e_q = l_function(
            &(&e.value % &self.q_squared).modpow(&(&self.q - 1u32), &self.q_squared),
            &self.q,
        ) * &self.gamma_q
            % &self.q;
        let diff = (&e_p + &self.p - (&e_q % &self.p)) % &self.p;
        Ok(&e_q + (&self.q_inv_p * diff % &self.p) * &self.q)
    }

    /// Textbook decryption `L(e^pi mod n^2) * theta mod n`.
    pub fn decrypt_raw_standard(&self, e: &Ciphertext) -> Result<BigUint, CryptoError> {
        self.pk.check(e)?;
        let n = &self.pk.n;
        let u = e.value.modpow(&self.pi, &self.pk.n_squared);
        Ok(l_function(&u, n) * &self.theta % n)
    }

    /// Signed fixed-point integer at the ciphertext's accumulated scale.
    pub fn decrypt_fixed(
        &self,
        e: &Ciphertext,
        codec: &SignedFixedCodec,
    ) -> Result<BigInt, CryptoError> {
        codec.from_domain(&self.decrypt_raw_crt(e)?)
    }

    pub fn decrypt_crt(&self, e: &Ciphertext, codec: &SignedFixedCodec) -> Result<f64, CryptoError> {
        codec.decode(&self.decrypt_raw_crt(e)?, e.scale_exp)
    }

    pub fn decrypt_standard(
        &self,
        e: &Ciphertext,
        codec: &SignedFixedCodec,
    ) -> Result<f64, CryptoError> {
        codec.decode(&self.decrypt_raw_standard(e)?, e.scale_exp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy() -> KeyMaterial {
        KeyMaterial::from_primes(BigUint::from(5u32), BigUint::from(7u32)).unwrap()
    }

    #[test]
    fn toy_constants() {
        let km = toy();
        assert_eq!(km.n(), &BigUint::from(35u32));
        assert_eq!(km.pi(), &BigUint::from(24u32));
        assert_eq!(km.theta(), &BigUint::from(19u32));
        assert_eq!(km.key_bits(), 6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(KeyMaterial::from_primes(BigUint::from(7u32), BigUint::from(7u32)).is_err());
        // 3 | (7 - 1) and 3 | 21
        assert!(KeyMaterial::from_primes(BigUint::from(3u32), BigUint::from(7u32)).is_err());
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert_eq!(KeyMaterial::keygen(8, &mut rng), Err(CryptoError::KeySize(8)));
        assert_eq!(KeyMaterial::keygen(5000, &mut rng), Err(CryptoError::KeySize(5000)));
    }

    #[test]
    fn scale_rules() {
        let km = toy();
        let pk = km.public();
        let codec = km.codec(0);
        let a = pk.encrypt_raw(&BigUint::from(3u32), &BigUint::from(2u32), 1).unwrap();
        let b = Ciphertext { value: a.value.clone(), scale_exp: 2 };
        assert_eq!(pk.hom_add(&a, &b), Err(CryptoError::ScaleMismatch(1, 2)));
        assert_eq!(pk.hom_scalar_mul(&b, 2.0, &codec), Err(CryptoError::ScaleNotFresh(2)));
        let bad = Ciphertext { value: BigUint::from(1225u32), scale_exp: 1 };
        assert_eq!(km.decrypt_raw_crt(&bad), Err(CryptoError::InvalidCiphertext));
    }

    #[test]
    fn serde_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let km = KeyMaterial::keygen(64, &mut rng).unwrap();
        let text = serde_json::to_string(&km).unwrap();
        assert!(text.contains("\"key_bits\":64"));
        let back: KeyMaterial = serde_json::from_str(&text).unwrap();
        assert_eq!(back, km);
        let tampered = text.replace("\"key_bits\":64", "\"key_bits\":65");
        assert!(serde_json::from_str::<KeyMaterial>(&tampered).is_err());

        let codec = km.codec(4);
        let c = km.public().encrypt(&codec, 1.25, &mut rng).unwrap();
        let back: Ciphertext = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
