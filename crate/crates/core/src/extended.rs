//! Nonnegative reals extended with `+∞`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A value in `[0, ∞]`.
///
/// Serializes as a JSON number when finite and as the string `"inf"` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    Infinite,
}

impl ExtendedReal {
    pub const ZERO: Self = ExtendedReal::Finite(0.0);
    pub const ONE: Self = ExtendedReal::Finite(1.0);

    /// Builds a value from a float, mapping `+inf` to [`ExtendedReal::Infinite`].
    ///
    /// Panics on NaN or negative input.
    pub fn new(v: f64) -> Self {
        assert!(!v.is_nan(), "ExtendedReal from NaN");
        assert!(v >= 0.0, "ExtendedReal must be nonnegative, got {v}");
        if v.is_infinite() {
            ExtendedReal::Infinite
        } else {
            ExtendedReal::Finite(v)
        }
    }

    pub fn from_ln(ln: f64) -> Self {
        Self::new(ln.exp())
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::Infinite => None,
        }
    }

    /// `f64` view; infinity maps to `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl From<f64> for ExtendedReal {
    fn from(v: f64) -> Self {
        ExtendedReal::new(v)
    }
}

impl Add for ExtendedReal {
    type Output = ExtendedReal;
    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::new(a + b),
            _ => ExtendedReal::Infinite,
        }
    }
}

impl Mul for ExtendedReal {
    type Output = ExtendedReal;
    /// Measure-theoretic convention: `0 · ∞ = 0`.
    fn mul(self, rhs: Self) -> Self {
        match (self, rhs) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::new(a * b),
            (ExtendedReal::Finite(a), ExtendedReal::Infinite)
            | (ExtendedReal::Infinite, ExtendedReal::Finite(a)) => {
                if a == 0.0 {
                    ExtendedReal::ZERO
                } else {
                    ExtendedReal::Infinite
                }
            }
            (ExtendedReal::Infinite, ExtendedReal::Infinite) => ExtendedReal::Infinite,
        }
    }
}

impl PartialOrd for ExtendedReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.to_f64().partial_cmp(&other.to_f64())
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => s.serialize_f64(*v),
            ExtendedReal::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) if v >= 0.0 => Ok(ExtendedReal::new(v)),
            Repr::Num(v) => Err(serde::de::Error::custom(format!("negative value {v}"))),
            Repr::Str(s) if s == "inf" => Ok(ExtendedReal::Infinite),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s}"))),
        }
    }
}
