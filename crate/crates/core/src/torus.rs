use num::bigint::BigInt;
use num::complex::Complex64;
use num::rational::BigRational;
use num::traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Neg, Sub};

/// A point of R/Z. Values arising from character pairings and from the
/// integration formulas are exact rationals reduced into [0, 1); the `Real`
/// variant exists for the floating-point contexts of the nilmanifold layer.
/// Arithmetic stays exact as long as both operands are exact and degrades
/// to `Real` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum TorusValue {
    Exact(BigRational),
    Real(f64),
}

fn mod1(r: BigRational) -> BigRational {
    let f = r.floor();
    r - f
}

impl TorusValue {
    pub fn zero() -> Self {
        TorusValue::Exact(BigRational::zero())
    }

    pub fn from_rational(r: BigRational) -> Self {
        TorusValue::Exact(mod1(r))
    }

    pub fn from_ratio(numer: i64, denom: i64) -> Self {
        assert!(denom != 0, "denominator must be nonzero");
        Self::from_rational(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn from_f64(v: f64) -> Self {
        TorusValue::Real(v.rem_euclid(1.0))
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, TorusValue::Exact(_))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TorusValue::Exact(r) => r.is_zero(),
            TorusValue::Real(v) => *v == 0.0,
        }
    }

    /// Representative in [0, 1).
    pub fn as_f64(&self) -> f64 {
        match self {
            TorusValue::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
            TorusValue::Real(v) => *v,
        }
    }

    /// Exact representative, panicking on real-mode values. Callers on the
    /// exact paths (pairings, Bohr membership, integration) use this.
    pub fn rational(&self) -> &BigRational {
        match self {
            TorusValue::Exact(r) => r,
            TorusValue::Real(_) => panic!("real-mode torus value on an exact path"),
        }
    }

    /// Distance to the nearest integer, as a value in [0, 1/2].
    pub fn dist_to_int(&self) -> TorusValue {
        match self {
            TorusValue::Exact(r) => {
                let one = BigRational::from(BigInt::from(1));
                let alt = &one - r;
                TorusValue::Exact(if *r <= alt { r.clone() } else { alt })
            }
            TorusValue::Real(v) => TorusValue::Real(v.min(1.0 - v)),
        }
    }

    /// Centered representative in (-1/2, 1/2], exact only.
    pub fn centered(&self) -> BigRational {
        let r = self.rational();
        let half = BigRational::new(BigInt::from(1), BigInt::from(2));
        if *r > half {
            r - BigRational::from(BigInt::from(1))
        } else {
            r.clone()
        }
    }

    /// Integer multiple n*t. Well defined on R/Z for integer n.
    pub fn mul_int(&self, n: i64) -> Self {
        match self {
            TorusValue::Exact(r) => Self::from_rational(r * BigRational::from(BigInt::from(n))),
            TorusValue::Real(v) => Self::from_f64(v * n as f64),
        }
    }

    pub fn mul_bigint(&self, n: &BigInt) -> Self {
        match self {
            TorusValue::Exact(r) => Self::from_rational(r * BigRational::from(n.clone())),
            TorusValue::Real(v) => Self::from_f64(v * n.to_f64().unwrap_or(f64::NAN)),
        }
    }

    /// e(t) = exp(2 pi i t).
    pub fn unit(&self) -> Complex64 {
        let t = self.as_f64();
        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * t)
    }

    /// "p/q" for exact values, decimal for real-mode ones.
    pub fn fraction_string(&self) -> String {
        match self {
            TorusValue::Exact(r) => format!("{}/{}", r.numer(), r.denom()),
            TorusValue::Real(v) => format!("{v:.17}"),
        }
    }

    pub fn parse_fraction(s: &str) -> crate::Result<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let numer: BigInt = n
                .trim()
                .parse()
                .map_err(|_| crate::Error::Malformed(format!("bad fraction {s:?}")))?;
            let denom: BigInt = d
                .trim()
                .parse()
                .map_err(|_| crate::Error::Malformed(format!("bad fraction {s:?}")))?;
            if denom.is_zero() {
                return Err(crate::Error::Malformed(format!("zero denominator in {s:?}")));
            }
            Ok(Self::from_rational(BigRational::new(numer, denom)))
        } else if let Ok(v) = s.parse::<f64>() {
            Ok(Self::from_f64(v))
        } else {
            Err(crate::Error::Malformed(format!("bad torus value {s:?}")))
        }
    }
}

impl Add for &TorusValue {
    type Output = TorusValue;
    fn add(self, rhs: &TorusValue) -> TorusValue {
        match (self, rhs) {
            (TorusValue::Exact(a), TorusValue::Exact(b)) => TorusValue::from_rational(a + b),
            _ => TorusValue::from_f64(self.as_f64() + rhs.as_f64()),
        }
    }
}

impl Sub for &TorusValue {
    type Output = TorusValue;
    fn sub(self, rhs: &TorusValue) -> TorusValue {
        match (self, rhs) {
            (TorusValue::Exact(a), TorusValue::Exact(b)) => TorusValue::from_rational(a - b),
            _ => TorusValue::from_f64(self.as_f64() - rhs.as_f64()),
        }
    }
}

impl Neg for &TorusValue {
    type Output = TorusValue;
    fn neg(self) -> TorusValue {
        match self {
            TorusValue::Exact(a) => TorusValue::from_rational(-a),
            TorusValue::Real(v) => TorusValue::from_f64(-v),
        }
    }
}

impl fmt::Display for TorusValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.fraction_string())
    }
}

impl Serialize for TorusValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.fraction_string())
    }
}

impl<'de> Deserialize<'de> for TorusValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TorusValue::parse_fraction(&s).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for plain `BigRational` fields, written as "p/q" strings.
pub mod rational_string {
    use num::{BigInt, BigRational};
    use num::Zero;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        r: &BigRational,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BigRational, D::Error> {
        let s = String::deserialize(d)?;
        let (n, den) = s
            .split_once('/')
            .ok_or_else(|| serde::de::Error::custom(format!("bad fraction {s:?}")))?;
        let numer: BigInt = n
            .trim()
            .parse()
            .map_err(|_| serde::de::Error::custom(format!("bad fraction {s:?}")))?;
        let denom: BigInt = den
            .trim()
            .parse()
            .map_err(|_| serde::de::Error::custom(format!("bad fraction {s:?}")))?;
        if denom.is_zero() {
            return Err(serde::de::Error::custom(format!("zero denominator in {s:?}")));
        }
        Ok(BigRational::new(numer, denom))
    }
}

/// Exact circle distance between two rationals viewed mod 1.
pub fn circle_distance(a: &BigRational, b: &BigRational) -> BigRational {
    let d = mod1(a - b);
    let one = BigRational::from(BigInt::from(1));
    let alt = &one - &d;
    if d <= alt {
        d
    } else {
        alt
    }
}

/// Reduce a rational into [0, 1).
pub fn reduce_mod1(r: &BigRational) -> BigRational {
    mod1(r.clone())
}

/// Absolute value helper for rationals.
pub fn rat_abs(r: &BigRational) -> BigRational {
    r.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_into_unit_interval() {
        let t = TorusValue::from_ratio(7, 4);
        assert_eq!(t, TorusValue::from_ratio(3, 4));
        let t = TorusValue::from_ratio(-1, 4);
        assert_eq!(t, TorusValue::from_ratio(3, 4));
        assert_eq!(TorusValue::from_ratio(8, 4), TorusValue::zero());
    }

    #[test]
    fn addition_wraps() {
        let a = TorusValue::from_ratio(3, 4);
        let b = TorusValue::from_ratio(3, 4);
        assert_eq!(&a + &b, TorusValue::from_ratio(1, 2));
    }

    #[test]
    fn dist_to_int_symmetric() {
        assert_eq!(
            TorusValue::from_ratio(7, 8).dist_to_int(),
            TorusValue::from_ratio(1, 8)
        );
        assert_eq!(
            TorusValue::from_ratio(1, 8).dist_to_int(),
            TorusValue::from_ratio(1, 8)
        );
        assert_eq!(
            TorusValue::from_ratio(1, 2).dist_to_int(),
            TorusValue::from_ratio(1, 2)
        );
    }

    #[test]
    fn centered_representative() {
        assert_eq!(
            TorusValue::from_ratio(7, 8).centered(),
            BigRational::new(BigInt::from(-1), BigInt::from(8))
        );
        assert_eq!(
            TorusValue::from_ratio(1, 2).centered(),
            BigRational::new(BigInt::from(1), BigInt::from(2))
        );
    }

    #[test]
    fn integer_multiples() {
        let t = TorusValue::from_ratio(1, 6);
        assert_eq!(t.mul_int(4), TorusValue::from_ratio(2, 3));
        assert_eq!(t.mul_int(-1), TorusValue::from_ratio(5, 6));
        assert_eq!(t.mul_int(6), TorusValue::zero());
    }

    #[test]
    fn mixed_mode_degrades_to_real() {
        let a = TorusValue::from_ratio(1, 4);
        let b = TorusValue::from_f64(0.1);
        let s = &a + &b;
        assert!(!s.is_exact());
        assert!((s.as_f64() - 0.35).abs() < 1e-15);
    }

    #[test]
    fn fraction_round_trip() {
        let t = TorusValue::from_ratio(5, 12);
        let s = t.fraction_string();
        assert_eq!(s, "5/12");
        assert_eq!(TorusValue::parse_fraction(&s).unwrap(), t);
    }

    #[test]
    fn unit_circle_values() {
        let q = TorusValue::from_ratio(1, 4);
        let u = q.unit();
        assert!((u.re).abs() < 1e-15);
        assert!((u.im - 1.0).abs() < 1e-15);
    }
}
