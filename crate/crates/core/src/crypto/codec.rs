use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{Signed, Zero};

use super::CryptoError;

pub fn pow10(exp: u32) -> BigInt {
    BigInt::from(10u32).pow(exp)
}

/// `floor(10^tau * d)` evaluated exactly on the decimal expansion of `d`.
///
/// The shortest round-trip representation of the float is taken as the value,
/// so `quantize(0.1, 4)` is 1000 and not 999.
pub fn quantize(d: f64, tau: u32) -> Result<BigInt, CryptoError> {
    if !d.is_finite() {
        return Err(CryptoError::NonFinite);
    }
    let text = format!("{d:e}");
    let (mantissa, exponent) = text.split_once('e').expect("exponent form");
    let exponent: i64 = exponent.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let mantissa = mantissa.trim_start_matches('-');
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let digits: BigInt = format!("{int_part}{frac_part}").parse().expect("decimal digits");
    let shift = exponent - frac_part.len() as i64 + tau as i64;
    let digits = if negative { -digits } else { digits };
    if shift >= 0 {
        Ok(digits * pow10(shift as u32))
    } else {
        Ok(digits.div_floor(&pow10((-shift) as u32)))
    }
}

/// Exact decimal rendering of `value / 10^digits`, parsed back with correct
/// rounding to the nearest float.
pub fn fixed_to_f64(value: &BigInt, digits: u32) -> f64 {
    let negative = value.is_negative();
    let mut s = value.abs().to_str_radix(10);
    let digits = digits as usize;
    if s.len() <= digits {
        s = format!("{}{}", "0".repeat(digits + 1 - s.len()), s);
    }
    let (int_part, frac_part) = s.split_at(s.len() - digits);
    let text = format!("{}{}.{}", if negative { "-" } else { "" }, int_part, frac_part);
    text.parse().expect("well-formed decimal")
}

/// Three-interval signed encoding over `(0, Z*]`.
///
/// Non-negative values occupy `[0, Z*/3)`, negative values are shifted by `Z*`
/// into `(2Z*/3, Z*)`, and the middle third flags overflow.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedFixedCodec {
    tau: u32,
    z_star: BigUint,
}

impl SignedFixedCodec {
    pub fn new(tau: u32, z_star: BigUint) -> Self {
        Self { tau, z_star }
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn z_star(&self) -> &BigUint {
        &self.z_star
    }

    pub fn quantize(&self, d: f64) -> Result<BigInt, CryptoError> {
        quantize(d, self.tau)
    }

    /// Maps a signed integer into the encoding domain.
    pub fn to_domain(&self, value: &BigInt) -> Result<BigUint, CryptoError> {
        let z = BigInt::from(self.z_star.clone());
        let fits = if value.is_negative() {
            -value * 3u32 < z
        } else {
            value * 3u32 < z
        };
        if !fits {
            return Err(CryptoError::EncodingOverflow(value.to_string()));
        }
        let shifted = if value.is_negative() { value + &z } else { value.clone() };
        Ok(shifted.to_biguint().expect("non-negative after shift"))
    }

    /// Inverse of [`to_domain`](Self::to_domain); values in the middle third are overflow.
    pub fn from_domain(&self, d_star: &BigUint) -> Result<BigInt, CryptoError> {
        let d3 = d_star * 3u32;
        if d3 < self.z_star {
            Ok(BigInt::from_biguint(Sign::Plus, d_star.clone()))
        } else if d3 > &self.z_star * 2u32 && d_star < &self.z_star {
            Ok(BigInt::from(d_star.clone()) - BigInt::from(self.z_star.clone()))
        } else {
            Err(CryptoError::ArithmeticOverflow)
        }
    }

    pub fn encode(&self, d: f64) -> Result<BigUint, CryptoError> {
        self.to_domain(&self.quantize(d)?)
    }

    pub fn decode(&self, d_star: &BigUint, scale_exp: u32) -> Result<f64, CryptoError> {
        let signed = self.from_domain(d_star)?;
        Ok(fixed_to_f64(&signed, self.tau * scale_exp))
    }

    /// Largest magnitude (in real units) that encodes without overflow.
    pub fn max_magnitude(&self) -> f64 {
        let cap = BigInt::from(&self.z_star / 3u32);
        fixed_to_f64(&cap, self.tau)
    }

    pub fn is_zero_domain(&self) -> bool {
        self.z_star.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_is_exact_on_decimal_inputs() {
        assert_eq!(quantize(0.1, 4).unwrap(), BigInt::from(1000));
        assert_eq!(quantize(-1.5, 4).unwrap(), BigInt::from(-15000));
        assert_eq!(quantize(123.4567, 4).unwrap(), BigInt::from(1234567));
        assert_eq!(quantize(-9.9999, 4).unwrap(), BigInt::from(-99999));
        assert_eq!(quantize(0.00015, 4).unwrap(), BigInt::from(1));
        assert_eq!(quantize(-0.00015, 4).unwrap(), BigInt::from(-2));
        assert_eq!(quantize(0.0, 4).unwrap(), BigInt::from(0));
        assert_eq!(quantize(1e20, 2).unwrap(), pow10(22));
        assert!(quantize(f64::NAN, 4).is_err());
    }

    #[test]
    fn signed_intervals() {
        let codec = SignedFixedCodec::new(0, BigUint::from(35u32));
        assert_eq!(codec.encode(3.0).unwrap(), BigUint::from(3u32));
        assert_eq!(codec.encode(-3.0).unwrap(), BigUint::from(32u32));
        assert!(codec.encode(12.0).is_err());
        assert_eq!(codec.from_domain(&BigUint::from(11u32)).unwrap(), BigInt::from(11));
        assert_eq!(codec.from_domain(&BigUint::from(24u32)).unwrap(), BigInt::from(-11));
        assert_eq!(codec.from_domain(&BigUint::from(12u32)), Err(CryptoError::ArithmeticOverflow));
        assert_eq!(codec.from_domain(&BigUint::from(23u32)), Err(CryptoError::ArithmeticOverflow));
    }

    #[test]
    fn fixed_rendering() {
        assert_eq!(fixed_to_f64(&BigInt::from(-15000), 4), -1.5);
        assert_eq!(fixed_to_f64(&BigInt::from(7), 4), 0.0007);
        assert_eq!(fixed_to_f64(&BigInt::from(-7), 8), -7e-8);
        assert_eq!(fixed_to_f64(&BigInt::from(42), 0), 42.0);
    }

    proptest! {
        #[test]
        fn four_digit_decimals_round_trip(units in -10_000_000_000i64..10_000_000_000i64) {
            let codec = SignedFixedCodec::new(4, BigUint::from(10u32).pow(30));
            let d = fixed_to_f64(&BigInt::from(units), 4);
            let enc = codec.encode(d).unwrap();
            prop_assert_eq!(codec.decode(&enc, 1).unwrap(), d);
        }
    }
}
