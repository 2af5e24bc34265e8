//! Extended reals for Lorentz indices.
//!
//! Indices live in `[1, ∞]`. Infinity is carried as its own variant so the
//! endpoint rules of the admissible set and the reciprocal `1/∞ = 0` are exact.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinity,
}

impl ExtReal {
    pub const ONE: ExtReal = ExtReal::Finite(1.0);
    pub const INF: ExtReal = ExtReal::Infinity;

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtReal::Infinity)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(x) => Some(x),
            ExtReal::Infinity => None,
        }
    }

    /// `1/x` with `1/∞ = 0`.
    pub fn recip(self) -> f64 {
        match self {
            ExtReal::Finite(x) => 1.0 / x,
            ExtReal::Infinity => 0.0,
        }
    }

    /// Hölder conjugate: `1' = ∞`, `∞' = 1`, else `x/(x-1)`.
    pub fn conjugate(self) -> ExtReal {
        match self {
            ExtReal::Infinity => ExtReal::ONE,
            ExtReal::Finite(x) if x == 1.0 => ExtReal::Infinity,
            ExtReal::Finite(x) => ExtReal::Finite(x / (x - 1.0)),
        }
    }

    pub fn in_unit_range(self) -> bool {
        match self {
            ExtReal::Infinity => true,
            ExtReal::Finite(x) => x.is_finite() && x >= 1.0,
        }
    }

    pub fn le(self, other: ExtReal) -> bool {
        match (self, other) {
            (_, ExtReal::Infinity) => true,
            (ExtReal::Infinity, ExtReal::Finite(_)) => false,
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a <= b,
        }
    }

    pub fn is_one(self) -> bool {
        self == ExtReal::ONE
    }
}

impl From<f64> for ExtReal {
    fn from(x: f64) -> Self {
        if x.is_infinite() && x > 0.0 {
            ExtReal::Infinity
        } else {
            ExtReal::Finite(x)
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(x) => write!(f, "{x}"),
            ExtReal::Infinity => write!(f, "inf"),
        }
    }
}

impl FromStr for ExtReal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(ExtReal::Infinity),
            _ => t
                .parse::<f64>()
                .map(ExtReal::from)
                .map_err(|e| format!("bad index {t:?}: {e}")),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(x) => s.serialize_f64(*x),
            ExtReal::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(ExtReal::from(x)),
            Raw::Int(i) => Ok(ExtReal::Finite(i as f64)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugates() {
        assert_eq!(ExtReal::ONE.conjugate(), ExtReal::INF);
        assert_eq!(ExtReal::INF.conjugate(), ExtReal::ONE);
        assert_eq!(ExtReal::Finite(2.0).conjugate(), ExtReal::Finite(2.0));
        assert_eq!(ExtReal::Finite(3.0).conjugate(), ExtReal::Finite(1.5));
        assert_eq!(ExtReal::INF.recip(), 0.0);
    }

    #[test]
    fn parse() {
        assert_eq!("inf".parse::<ExtReal>().unwrap(), ExtReal::INF);
        assert_eq!(" 2.5 ".parse::<ExtReal>().unwrap(), ExtReal::Finite(2.5));
        assert!("abc".parse::<ExtReal>().is_err());
    }
}
