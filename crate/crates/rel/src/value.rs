//! Scalar values stored in database cells and produced by query evaluation.

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A single cell value. `Real` values are kept finite: anything that would
/// produce NaN/Inf during evaluation collapses to `Null` instead.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Int(_) => "int",
            Value::Real(_) => "real",
            Value::Text(_) => "text",
        }
    }

    /// Numeric view of the value, if it has one.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Total order used for ORDER BY, MIN/MAX and multiset comparison:
    /// Null < numerics (by numeric value) < text (by bytes).
    pub fn sql_cmp(&self, other: &Value) -> Ordering {
        use Value::*;
        match (self, other) {
            (Null, Null) => Ordering::Equal,
            (Null, _) => Ordering::Less,
            (_, Null) => Ordering::Greater,
            (Text(a), Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            (Text(_), _) => Ordering::Greater,
            (_, Text(_)) => Ordering::Less,
            (a, b) => {
                let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
                x.total_cmp(&y).then_with(|| type_rank(a).cmp(&type_rank(b)))
            }
        }
    }

    /// Equality used by DISTINCT, GROUP BY keys and IN-membership. Numerics
    /// compare by value across Int/Real, so `1 = 1.0`.
    pub fn sql_eq(&self, other: &Value) -> bool {
        use Value::*;
        match (self, other) {
            (Null, Null) => true,
            (Int(a), Int(b)) => a == b,
            (Text(a), Text(b)) => a == b,
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x == y,
                _ => false,
            },
        }
    }
}

fn type_rank(v: &Value) -> u8 {
    match v {
        Value::Null => 0,
        Value::Int(_) => 1,
        Value::Real(_) => 2,
        Value::Text(_) => 3,
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => write!(f, "NULL"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{}", format_real(*r)),
            Value::Text(t) => write!(f, "'{}'", t.replace('\'', "''")),
        }
    }
}

/// Formats an f64 so that it re-lexes as a real literal (integral values keep
/// a trailing `.0`) and round-trips exactly.
pub fn format_real(v: f64) -> String {
    if v == v.trunc() && v.is_finite() {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

/// Group/dedup key with numeric normalization: Int and Real holding the same
/// number hash and compare equal, matching `sql_eq`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueKey {
    Null,
    Num(u64),
    Text(String),
}

impl ValueKey {
    pub fn of(v: &Value) -> ValueKey {
        match v {
            Value::Null => ValueKey::Null,
            Value::Text(t) => ValueKey::Text(t.clone()),
            other => {
                // normalize -0.0 to 0.0 so they key identically
                let mut f = other.as_f64().unwrap();
                if f == 0.0 {
                    f = 0.0;
                }
                ValueKey::Num(f.to_bits())
            }
        }
    }

    pub fn of_row(row: &[Value]) -> Vec<ValueKey> {
        row.iter().map(ValueKey::of).collect()
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => s.serialize_unit(),
            Value::Int(i) => s.serialize_i64(*i),
            Value::Real(r) => s.serialize_f64(*r),
            Value::Text(t) => s.serialize_str(t),
        }
    }
}

struct ValueVisitor;

impl<'de> Visitor<'de> for ValueVisitor {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("null, number, or string")
    }

    fn visit_unit<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_none<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_i64<E>(self, v: i64) -> Result<Value, E> {
        Ok(Value::Int(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Value, E> {
        i64::try_from(v)
            .map(Value::Int)
            .map_err(|_| E::custom("integer out of i64 range"))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Value, E> {
        if !v.is_finite() {
            return Err(E::custom("non-finite real"));
        }
        Ok(Value::Real(v))
    }

    fn visit_str<E>(self, v: &str) -> Result<Value, E> {
        Ok(Value::Text(v.to_string()))
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Value, D::Error> {
        d.deserialize_any(ValueVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_cross_type_equality() {
        assert!(Value::Int(1).sql_eq(&Value::Real(1.0)));
        assert!(!Value::Int(1).sql_eq(&Value::Real(1.5)));
        assert!(!Value::Null.sql_eq(&Value::Int(0)));
        assert!(Value::Null.sql_eq(&Value::Null));
    }

    #[test]
    fn ordering_puts_null_first_text_last() {
        let mut vals = vec![
            Value::Text("a".into()),
            Value::Int(2),
            Value::Null,
            Value::Real(1.5),
        ];
        vals.sort_by(|a, b| a.sql_cmp(b));
        assert_eq!(
            vals,
            vec![
                Value::Null,
                Value::Real(1.5),
                Value::Int(2),
                Value::Text("a".into())
            ]
        );
    }

    #[test]
    fn json_round_trip_preserves_real_vs_int() {
        let vals = vec![
            Value::Null,
            Value::Int(2),
            Value::Real(2.0),
            Value::Text("x'y".into()),
        ];
        let js = serde_json::to_string(&vals).unwrap();
        assert_eq!(js, r#"[null,2,2.0,"x'y"]"#);
        let back: Vec<Value> = serde_json::from_str(&js).unwrap();
        assert_eq!(back, vals);
    }

    #[test]
    fn key_normalizes_int_real() {
        assert_eq!(ValueKey::of(&Value::Int(3)), ValueKey::of(&Value::Real(3.0)));
        assert_eq!(
            ValueKey::of(&Value::Real(0.0)),
            ValueKey::of(&Value::Real(-0.0))
        );
    }
}
