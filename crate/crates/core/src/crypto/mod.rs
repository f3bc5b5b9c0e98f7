//! CRT-accelerated Paillier with a signed fixed-point plaintext codec.

mod codec;
mod paillier;
mod prime;

pub use codec::{fixed_to_f64, pow10, quantize, SignedFixedCodec};
pub use paillier::{Ciphertext, KeyDocument, KeyMaterial, PublicKey};
pub use prime::{is_probable_prime, random_prime, MR_ROUNDS};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("key generation failed: {0}")]
    KeyGeneration(String),
    #[error("key size {0} outside supported range 16..=4096")]
    KeySize(usize),
    #[error("plaintext {0} does not fit the signed encoding domain")]
    EncodingOverflow(String),
    #[error("decrypted value lies in the overflow interval")]
    ArithmeticOverflow,
    #[error("scale mismatch: {0} vs {1}")]
    ScaleMismatch(u32, u32),
    #[error("scalar multiplication requires a fresh ciphertext (scale 1), got scale {0}")]
    ScaleNotFresh(u32),
    #[error("ciphertext is not an element of the ciphertext group")]
    InvalidCiphertext,
    #[error("non-finite plaintext")]
    NonFinite,
    #[error("invalid key document: {0}")]
    InvalidKey(String),
}
