//! Exact rational helpers shared by the analysis, scheme and CLI layers.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rational = BigRational;

/// Largest denominator kept when a decimal string is converted to a fraction.
pub const MAX_PARSED_DENOMINATOR: u64 = 1_000_000;

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn is_integer(r: &Rational) -> bool {
    r.denom().is_one()
}

/// Returns the value as a `u64` when it is a non-negative integer that fits.
pub fn as_u64(r: &Rational) -> Option<u64> {
    if is_integer(r) && !r.is_negative() {
        r.numer().to_u64()
    } else {
        None
    }
}

pub fn floor_u64(r: &Rational) -> Option<u64> {
    if r.is_negative() {
        return None;
    }
    r.floor().numer().to_u64()
}

/// Binomial coefficient as an exact integer. Returns zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

pub fn binomial_q(n: u64, k: u64) -> Rational {
    Rational::from_integer(binomial(n, k))
}

/// Closest fraction to `value` whose denominator does not exceed `max_den`.
pub fn limit_denominator(value: &Rational, max_den: u64) -> Rational {
    let max_den = BigInt::from(max_den);
    if value.denom() <= &max_den {
        return value.clone();
    }
    let (mut p0, mut q0, mut p1, mut q1) =
        (BigInt::zero(), BigInt::one(), BigInt::one(), BigInt::zero());
    let mut n = value.numer().clone();
    let mut d = value.denom().clone();
    loop {
        let a = n.div_floor(&d);
        let q2 = &q0 + &a * &q1;
        if q2 > max_den {
            break;
        }
        let p2 = &p0 + &a * &p1;
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let r = &n - &a * &d;
        n = d;
        d = r;
        if d.is_zero() {
            break;
        }
    }
    let k = (&max_den - &q0) / &q1;
    let bound1 = Rational::new(&p0 + &k * &p1, &q0 + &k * &q1);
    let bound2 = Rational::new(p1, q1);
    if (&bound2 - value).abs() <= (&bound1 - value).abs() {
        bound2
    } else {
        bound1
    }
}

/// Parses `"3/4"`, `"7"`, `"0.25"` or `"1e-5"`.
///
/// Fractions are kept exact. Decimal input is read exactly and then snapped to
/// the nearest fraction with denominator at most [`MAX_PARSED_DENOMINATOR`].
pub fn parse_rational(text: &str) -> Result<Rational> {
    let s = text.trim();
    if s.is_empty() {
        return Err(Error::invalid("empty number"));
    }
    if let Some((num, den)) = s.split_once('/') {
        let num: BigInt = num
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad numerator in {s:?}")))?;
        let den: BigInt = den
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad denominator in {s:?}")))?;
        if den.is_zero() {
            return Err(Error::invalid(format!("zero denominator in {s:?}")));
        }
        return Ok(Rational::new(num, den));
    }
    let exact = parse_decimal_exact(s)?;
    Ok(limit_denominator(&exact, MAX_PARSED_DENOMINATOR))
}

fn parse_decimal_exact(s: &str) -> Result<Rational> {
    let bad = || Error::invalid(format!("not a number: {s:?}"));
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => {
            let exp: i32 = s[i + 1..].parse().map_err(|_| bad())?;
            (&s[..i], exp)
        }
        None => (s, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (whole, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !whole
        .chars()
        .chain(frac.chars())
        .all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits: BigInt = format!("{whole}{frac}").parse().map_err(|_| bad())?;
    let scale = exponent - frac.len() as i32;
    if scale.unsigned_abs() > 4000 {
        return Err(bad());
    }
    let pow = num_traits::pow(BigInt::from(10), scale.unsigned_abs() as usize);
    let mut value = if scale >= 0 {
        Rational::from_integer(digits * pow)
    } else {
        Rational::new(digits, pow)
    };
    if negative {
        value = -value;
    }
    Ok(value)
}

/// `"num/den (decimal)"`, exact and plottable at once.
pub fn format_rational(r: &Rational) -> String {
    format!("{}/{} ({:.6})", r.numer(), r.denom(), to_f64(r))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationalJson {
    pub num: String,
    pub den: String,
}

impl From<&Rational> for RationalJson {
    fn from(r: &Rational) -> Self {
        RationalJson {
            num: r.numer().to_string(),
            den: r.denom().to_string(),
        }
    }
}

impl RationalJson {
    pub fn to_rational(&self) -> Result<Rational> {
        parse_rational(&format!("{}/{}", self.num, self.den))
    }
}
