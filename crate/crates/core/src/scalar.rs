//! Scalar abstraction shared by the vector, measure and crossing code.
//!
//! Everything that only needs field arithmetic and ordering is generic over
//! [`Scalar`], so the same routines run on `f32`, `f64` and exact
//! [`BigRational`]. Anything that takes square roots needs [`Real`].

use std::fmt::Debug;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Float, Num, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Scalar:
    Clone + Debug + PartialOrd + Num + Signed + Send + Sync + 'static
{
    /// Exact types compare with zero slack and skip compensated summation.
    const EXACT: bool;

    fn from_f64(x: f64) -> Option<Self>;
    fn from_rational(q: &BigRational) -> Self;
    fn to_f64(&self) -> f64;
    /// Exact rational value, if the scalar is finite.
    fn to_rational(&self) -> Option<BigRational>;

    fn from_usize(n: usize) -> Self {
        Self::from_rational(&BigRational::from_integer(BigInt::from(n)))
    }

    /// Absolute slack used when an exact comparison is not available.
    fn slack() -> Self;

    fn is_finite_value(&self) -> bool {
        true
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }

    fn to_repr(&self) -> ScalarRepr;
}

/// Scalars with square roots (the L² norm).
pub trait Real: Scalar + Float {}
impl Real for f32 {}
impl Real for f64 {}

macro_rules! float_scalar {
    ($t:ty, $slack:expr) => {
        impl Scalar for $t {
            const EXACT: bool = false;

            fn from_f64(x: f64) -> Option<Self> {
                x.is_finite().then_some(x as $t)
            }

            fn from_rational(q: &BigRational) -> Self {
                ToPrimitive::to_f64(q).unwrap_or(f64::NAN) as $t
            }

            fn to_f64(&self) -> f64 {
                *self as f64
            }

            fn to_rational(&self) -> Option<BigRational> {
                BigRational::from_float(*self)
            }

            fn from_usize(n: usize) -> Self {
                n as $t
            }

            fn slack() -> Self {
                $slack
            }

            fn is_finite_value(&self) -> bool {
                Float::is_finite(*self)
            }

            fn to_repr(&self) -> ScalarRepr {
                ScalarRepr::Number(*self as f64)
            }
        }
    };
}

float_scalar!(f32, 1e-5);
float_scalar!(f64, 1e-12);

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn from_f64(x: f64) -> Option<Self> {
        BigRational::from_float(x)
    }

    fn from_rational(q: &BigRational) -> Self {
        q.clone()
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn to_rational(&self) -> Option<BigRational> {
        Some(self.clone())
    }

    fn slack() -> Self {
        BigRational::zero()
    }

    fn to_repr(&self) -> ScalarRepr {
        ScalarRepr::Text(rational_to_string(self))
    }
}

/// How a scalar appears in JSON documents: a plain number, a `"p/q"` or
/// decimal string, or a `{"num": .., "den": ..}` object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarRepr {
    Number(f64),
    Text(String),
    Ratio(RationalJson),
}

impl ScalarRepr {
    pub fn to_scalar<S: Scalar>(&self) -> Result<S> {
        match self {
            ScalarRepr::Number(x) => {
                S::from_f64(*x).ok_or_else(|| Error::invalid(format!("non-finite number {x}")))
            }
            ScalarRepr::Text(s) => Ok(S::from_rational(&parse_rational(s)?)),
            ScalarRepr::Ratio(r) => Ok(S::from_rational(&r.to_rational()?)),
        }
    }

    /// Exact value; binary floats convert without rounding.
    pub fn to_rational(&self) -> Result<BigRational> {
        self.to_scalar::<BigRational>()
    }
}

/// Canonical JSON form of an exact rational. Components that fit in an `i64`
/// are emitted as numbers, larger ones as decimal strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalJson {
    pub num: IntJson,
    pub den: IntJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntJson {
    Small(i64),
    Big(String),
}

impl IntJson {
    fn from_bigint(x: &BigInt) -> Self {
        match x.to_i64() {
            Some(v) => IntJson::Small(v),
            None => IntJson::Big(x.to_string()),
        }
    }

    fn to_bigint(&self) -> Result<BigInt> {
        match self {
            IntJson::Small(v) => Ok(BigInt::from(*v)),
            IntJson::Big(s) => BigInt::from_str(s.trim())
                .map_err(|_| Error::invalid(format!("bad integer {s:?}"))),
        }
    }
}

impl RationalJson {
    pub fn from_rational(q: &BigRational) -> Self {
        RationalJson {
            num: IntJson::from_bigint(q.numer()),
            den: IntJson::from_bigint(q.denom()),
        }
    }

    pub fn to_rational(&self) -> Result<BigRational> {
        let den = self.den.to_bigint()?;
        if den.is_zero() {
            return Err(Error::invalid("zero denominator"));
        }
        Ok(BigRational::new(self.num.to_bigint()?, den))
    }
}

/// Plain-text form for CSV cells: `p/q` for exact values, decimal otherwise.
pub fn scalar_text<S: Scalar>(x: &S) -> String {
    match x.to_repr() {
        ScalarRepr::Number(v) => v.to_string(),
        ScalarRepr::Text(t) => t,
        ScalarRepr::Ratio(r) => r.to_rational().map(|q| rational_to_string(&q)).unwrap_or_default(),
    }
}

pub fn rational_to_string(q: &BigRational) -> String {
    if q.denom().is_one() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

/// Parses `"p/q"`, integers and decimal/scientific literals such as
/// `"-0.125"` or `"1e-3"` into an exact rational.
pub fn parse_rational(text: &str) -> Result<BigRational> {
    let s = text.trim();
    let bad = || Error::invalid(format!("cannot parse {text:?} as a rational"));
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((p, q)) = s.split_once('/') {
        let p = parse_rational(p)?;
        let q = parse_rational(q)?;
        if q.is_zero() {
            return Err(Error::invalid("zero denominator"));
        }
        return Ok(p / q);
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => (
            &s[..pos],
            s[pos + 1..].parse::<i64>().map_err(|_| bad())?,
        ),
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let all_digits = format!("{int_part}{frac_part}");
    let magnitude = BigInt::from_str(if all_digits.is_empty() { "0" } else { &all_digits })
        .map_err(|_| bad())?;
    let scale = exponent - frac_part.len() as i64;
    let ten = BigInt::from(10u32);
    let mut value = if scale >= 0 {
        BigRational::from_integer(magnitude * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(magnitude, num_traits::pow(ten, (-scale) as usize))
    };
    if negative {
        value = -value;
    }
    Ok(value)
}

pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Least integer `c` with `c >= q`.
pub fn ceil_to_biguint(q: &BigRational) -> Result<BigUint> {
    let c = q.ceil().to_integer();
    c.to_biguint()
        .ok_or_else(|| Error::invalid(format!("negative ceiling {c}")))
}

/// Least nonnegative integer `r` with `r² >= q`, i.e. `⌈√q⌉`, computed
/// without floating point.
pub fn ceil_sqrt(q: &BigRational) -> Result<BigUint> {
    if q.is_negative() {
        return Err(Error::invalid("square root of a negative rational"));
    }
    // ⌈√(p/d)⌉ = ⌈√(p·d)⌉ / d rounded up; search the integer root directly.
    let ceil_q = ceil_to_biguint(q)?;
    let mut r = ceil_q.sqrt();
    // r = ⌊√⌈q⌉⌋ ≤ ⌈√q⌉; step up until r² ≥ q.
    while BigRational::from_integer(BigInt::from_biguint(Sign::Plus, &r * &r)) < *q {
        r += 1u32;
    }
    // Step down while (r-1)² >= q still holds.
    while !r.is_zero() {
        let s = &r - 1u32;
        if BigRational::from_integer(BigInt::from_biguint(Sign::Plus, &s * &s)) >= *q {
            r = s;
        } else {
            break;
        }
    }
    Ok(r)
}

pub fn biguint_to_rational(x: &BigUint) -> BigRational {
    BigRational::from_integer(BigInt::from_biguint(Sign::Plus, x.clone()))
}

/// Number of decimal digits of a nonnegative integer (1 for zero).
pub fn decimal_digits(x: &BigUint) -> u64 {
    if x.is_zero() {
        return 1;
    }
    // log10(x) lies in [(bits-1)·log10 2, bits·log10 2), leaving at most two
    // candidate digit counts; one power of ten decides between them.
    let bits = x.bits();
    let lo = ((bits - 1) as f64 * std::f64::consts::LOG10_2).floor() as u64 + 1;
    let hi = (bits as f64 * std::f64::consts::LOG10_2).floor() as u64 + 1;
    if lo == hi {
        return lo;
    }
    let threshold = num_traits::pow(BigUint::from(10u32), (hi - 1) as usize);
    if *x >= threshold {
        hi
    } else {
        lo
    }
}

/// Cheap upper estimate of [`decimal_digits`] from the bit length.
pub fn decimal_digits_upper(x: &BigUint) -> u64 {
    (x.bits() as f64 * std::f64::consts::LOG10_2).floor() as u64 + 1
}

pub fn is_integer(q: &BigRational) -> bool {
    q.denom().is_one() || q.numer().is_multiple_of(q.denom())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimal_and_fraction_literals() {
        assert_eq!(parse_rational("1/3").unwrap(), ratio(1, 3));
        assert_eq!(parse_rational("-0.125").unwrap(), ratio(-1, 8));
        assert_eq!(parse_rational("1e-3").unwrap(), ratio(1, 1000));
        assert_eq!(parse_rational("2.5E2").unwrap(), ratio(250, 1));
        assert_eq!(parse_rational(" 7 ").unwrap(), ratio(7, 1));
        assert_eq!(parse_rational("0.1").unwrap(), ratio(1, 10));
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn ceil_sqrt_matches_definition() {
        for n in 0..200i64 {
            for d in 1..7i64 {
                let q = ratio(n, d);
                let r = ceil_sqrt(&q).unwrap();
                let expected = ((n as f64 / d as f64).sqrt() - 1e-12).ceil().max(0.0) as u64;
                assert_eq!(r, BigUint::from(expected), "n={n} d={d}");
            }
        }
    }

    #[test]
    fn rational_json_uses_numbers_when_small() {
        let j = RationalJson::from_rational(&ratio(3, 8));
        assert_eq!(serde_json::to_string(&j).unwrap(), r#"{"num":3,"den":8}"#);
        let big = BigRational::from_integer(BigInt::from(10u32).pow(30));
        let j = RationalJson::from_rational(&big);
        assert!(serde_json::to_string(&j).unwrap().contains("\"1000000000000000000000000000000\""));
        assert_eq!(j.to_rational().unwrap(), big);
    }

    #[test]
    fn decimal_digit_count() {
        assert_eq!(decimal_digits(&BigUint::from(0u32)), 1);
        assert_eq!(decimal_digits(&BigUint::from(9u32)), 1);
        assert_eq!(decimal_digits(&BigUint::from(10u32)), 2);
        assert_eq!(decimal_digits(&BigUint::from(16385u32)), 5);
        for k in 1..60usize {
            let p = num_traits::pow(BigUint::from(10u32), k);
            assert_eq!(decimal_digits(&p), k as u64 + 1);
            assert_eq!(decimal_digits(&(&p - 1u32)), k as u64);
        }
    }
}
