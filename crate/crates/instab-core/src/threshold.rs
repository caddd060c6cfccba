//! Extended nonnegative value: a finite level or "unbounded".
//!
//! Used both for power budgets (`u_hat`) and certified thresholds
//! (`u_star`, per-mode `phi`). Serializes as a plain number or the string
//! `"unbounded"`.

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Finite(f64),
    Unbounded,
}

impl Threshold {
    pub fn finite(self) -> Option<f64> {
        match self {
            Threshold::Finite(v) => Some(v),
            Threshold::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Threshold::Unbounded)
    }

    /// Finite values compare numerically; `Unbounded` dominates everything
    /// finite. NaN yields `None`.
    pub fn partial_cmp_value(self, other: Threshold) -> Option<Ordering> {
        match (self, other) {
            (Threshold::Finite(a), Threshold::Finite(b)) => a.partial_cmp(&b),
            (Threshold::Finite(_), Threshold::Unbounded) => Some(Ordering::Less),
            (Threshold::Unbounded, Threshold::Finite(_)) => Some(Ordering::Greater),
            (Threshold::Unbounded, Threshold::Unbounded) => Some(Ordering::Equal),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Finite(v) => write!(f, "{v}"),
            Threshold::Unbounded => write!(f, "unbounded"),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Threshold::Finite(v) => s.serialize_f64(*v),
            Threshold::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Threshold;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or the string \"unbounded\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Threshold, E> {
                Ok(Threshold::Finite(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Threshold, E> {
                Ok(Threshold::Finite(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Threshold, E> {
                Ok(Threshold::Finite(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Threshold, E> {
                if v == "unbounded" {
                    Ok(Threshold::Unbounded)
                } else {
                    Err(E::custom(format!("expected \"unbounded\", got {v:?}")))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering() {
        use Ordering::*;
        assert_eq!(
            Threshold::Finite(1.0).partial_cmp_value(Threshold::Finite(2.0)),
            Some(Less)
        );
        assert_eq!(
            Threshold::Finite(1e300).partial_cmp_value(Threshold::Unbounded),
            Some(Less)
        );
        assert_eq!(
            Threshold::Unbounded.partial_cmp_value(Threshold::Unbounded),
            Some(Equal)
        );
    }

    #[test]
    fn serde_round_trip() {
        let f: Threshold = serde_json::from_str("3.25").unwrap();
        assert_eq!(f, Threshold::Finite(3.25));
        let u: Threshold = serde_json::from_str("\"unbounded\"").unwrap();
        assert_eq!(u, Threshold::Unbounded);
        assert_eq!(serde_json::to_string(&f).unwrap(), "3.25");
        assert_eq!(serde_json::to_string(&u).unwrap(), "\"unbounded\"");
        assert!(serde_json::from_str::<Threshold>("\"infinite\"").is_err());
    }
}
