//! Arithmetic in the prime field `Z_p` with `p = 2^63 - 25`.
//!
//! Every share, reading and aggregate lives in this field. The prime is fixed
//! at compile time so that all byte counters agree on one share width: a
//! residue needs 63 significant bits and travels as an 8-byte little-endian
//! word.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The field modulus, the largest prime below 2^63.
pub const MODULUS: u64 = 9_223_372_036_854_775_783;

/// Significant bits of a serialized residue.
pub const ELEMENT_BITS: u32 = 63;

/// Wire size of one residue.
pub const ELEMENT_BYTES: usize = 8;

/// Residue modulo [`MODULUS`], always kept in `[0, p)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldElement(u64);

impl FieldElement {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(1);

    /// Reduces an arbitrary `u64` into the field.
    pub const fn new(value: u64) -> Self {
        Self(value % MODULUS)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(rng.gen_range(0..MODULUS))
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let mut base = self;
        let mut acc = Self::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc *= base;
            }
            base *= base;
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat, `a^(p-2)`.
    pub fn inv(self) -> Result<Self> {
        if self.is_zero() {
            return Err(Error::ZeroInverse);
        }
        Ok(self.pow(MODULUS - 2))
    }

    /// Square root of a quadratic residue, or `None`.
    ///
    /// `p ≡ 3 (mod 4)`, so a candidate root is `a^((p+1)/4)`. The returned root
    /// is the smaller of the two representatives.
    pub fn sqrt(self) -> Option<Self> {
        let root = self.pow((MODULUS + 1) / 4);
        if root * root != self {
            return None;
        }
        let other = -root;
        Some(if other.0 < root.0 { other } else { root })
    }

    pub fn to_le_bytes(self) -> [u8; ELEMENT_BYTES] {
        self.0.to_le_bytes()
    }

    /// Parses the canonical wire form; rejects non-reduced words.
    pub fn from_le_bytes(bytes: [u8; ELEMENT_BYTES]) -> Result<Self> {
        let raw = u64::from_le_bytes(bytes);
        if raw >= MODULUS {
            return Err(Error::NonCanonical(raw));
        }
        Ok(Self(raw))
    }
}

impl From<u64> for FieldElement {
    fn from(value: u64) -> Self {
        Self::new(value)
    }
}

impl From<u32> for FieldElement {
    fn from(value: u32) -> Self {
        Self(u64::from(value))
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F({})", self.0)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl Add for FieldElement {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        // both operands < 2^63, so the sum fits in a u64
        let sum = self.0 + rhs.0;
        Self(if sum >= MODULUS { sum - MODULUS } else { sum })
    }
}

impl Sub for FieldElement {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        if self.0 >= rhs.0 {
            Self(self.0 - rhs.0)
        } else {
            Self(self.0 + MODULUS - rhs.0)
        }
    }
}

impl Neg for FieldElement {
    type Output = Self;

    fn neg(self) -> Self {
        if self.0 == 0 {
            self
        } else {
            Self(MODULUS - self.0)
        }
    }
}

impl Mul for FieldElement {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        let wide = u128::from(self.0) * u128::from(rhs.0);
        Self((wide % u128::from(MODULUS)) as u64)
    }
}

impl AddAssign for FieldElement {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for FieldElement {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for FieldElement {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl Sum for FieldElement {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |acc, x| acc + x)
    }
}

/// Non-negative energy amount for one time slot, in scaled watt-hours.
///
/// Backed by a `u32`, so the `< 2^32` bound holds by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Reading(pub u32);

impl Reading {
    pub const BITS: u32 = 32;

    pub fn raw(self) -> u32 {
        self.0
    }
}

/// Embeds a reading as `raw * scale`; fails if the product leaves the field.
pub fn encode_reading(reading: Reading, scale: u64) -> Result<FieldElement> {
    if scale == 0 {
        return Err(Error::InvalidScale);
    }
    let product = u128::from(reading.0) * u128::from(scale);
    if product >= u128::from(MODULUS) {
        return Err(Error::EncodingOverflow {
            raw: reading.0,
            scale,
        });
    }
    Ok(FieldElement(product as u64))
}

/// Inverse of [`encode_reading`] for values that are exact multiples of `scale`.
///
/// Also used to decode aggregates, which may exceed `u32`.
pub fn decode_scaled(value: FieldElement, scale: u64) -> Result<u64> {
    if scale == 0 {
        return Err(Error::InvalidScale);
    }
    if !value.0.is_multiple_of(scale) {
        return Err(Error::InexactDecode {
            value: value.0,
            scale,
        });
    }
    Ok(value.0 / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fe(v: u64) -> FieldElement {
        FieldElement::new(v)
    }

    #[test]
    fn add_examples() {
        let x = fe(123_456_789);
        assert_eq!(fe(0) + x, x);
        assert_eq!(fe(MODULUS - 1) + fe(1), FieldElement::ZERO);
        assert_eq!(fe(3) + fe(4), fe(7));
    }

    #[test]
    fn mul_examples() {
        let x = fe(987_654_321_012);
        assert_eq!(fe(1) * x, x);
        assert_eq!(fe(0) * x, FieldElement::ZERO);
        // 2^63 ≡ 25, so 2^64 ≡ 50 (big-integer oracle)
        assert_eq!(fe(1 << 32) * fe(1 << 32), fe(50));
    }

    #[test]
    fn inv_examples() {
        assert_eq!(fe(1).inv().unwrap(), fe(1));
        assert_eq!(fe(MODULUS - 1).inv().unwrap(), fe(MODULUS - 1));
        // extended-Euclid oracle
        assert_eq!(fe(7).inv().unwrap(), fe(6_588_122_883_467_696_988));
        assert!(matches!(fe(0).inv(), Err(Error::ZeroInverse)));
    }

    #[test]
    fn encode_reading_examples() {
        assert_eq!(encode_reading(Reading(0), 1 << 40).unwrap(), FieldElement::ZERO);
        assert_eq!(encode_reading(Reading(100), 1).unwrap(), fe(100));
        // (2^32-1)·2^30 = 2^62 - 2^30 < p: accepted
        let max = Reading(u32::MAX);
        assert_eq!(
            encode_reading(max, 1 << 30).unwrap().value(),
            (1u64 << 62) - (1u64 << 30)
        );
        // (2^32-1)·(2^31+1) = 2^63 + 2^31 - 1 > p
        assert!(matches!(
            encode_reading(max, (1 << 31) + 1),
            Err(Error::EncodingOverflow { .. })
        ));
        assert!(matches!(encode_reading(max, 0), Err(Error::InvalidScale)));
    }

    #[test]
    fn decode_is_exact_division() {
        let v = encode_reading(Reading(77), 1000).unwrap();
        assert_eq!(decode_scaled(v, 1000).unwrap(), 77);
        assert!(decode_scaled(fe(1001), 1000).is_err());
    }

    #[test]
    fn sqrt_of_squares() {
        for v in [1u64, 2, 3, 12345, MODULUS - 2] {
            let s = fe(v) * fe(v);
            let r = s.sqrt().unwrap();
            assert_eq!(r * r, s);
        }
        // -1 is a non-residue when p ≡ 3 mod 4
        assert!(fe(MODULUS - 1).sqrt().is_none());
    }

    #[test]
    fn wire_form_rejects_unreduced() {
        assert_eq!(
            FieldElement::from_le_bytes(fe(42).to_le_bytes()).unwrap(),
            fe(42)
        );
        assert!(FieldElement::from_le_bytes(MODULUS.to_le_bytes()).is_err());
    }

    fn any_fe() -> impl Strategy<Value = FieldElement> {
        (0..MODULUS).prop_map(fe)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn field_axioms(a in any_fe(), b in any_fe(), c in any_fe()) {
            prop_assert_eq!((a + b) + c, a + (b + c));
            prop_assert_eq!((a * b) * c, a * (b * c));
            prop_assert_eq!(a + b, b + a);
            prop_assert_eq!(a * b, b * a);
            prop_assert_eq!(a * (b + c), a * b + a * c);
            prop_assert_eq!(a - b + b, a);
            prop_assert_eq!(a + (-a), FieldElement::ZERO);
        }

        #[test]
        fn inverse_property(a in 1..MODULUS) {
            let a = fe(a);
            prop_assert_eq!(a * a.inv().unwrap(), FieldElement::ONE);
        }

        #[test]
        fn encode_is_injective(x in any::<u32>(), y in any::<u32>(), scale in 1u64..(1 << 31)) {
            let ex = encode_reading(Reading(x), scale).unwrap();
            let ey = encode_reading(Reading(y), scale).unwrap();
            prop_assert_eq!(ex == ey, x == y);
        }
    }
}
