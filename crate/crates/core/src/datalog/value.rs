//! Constants stored in fact tuples.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

/// A ground value appearing in a fact.
///
/// Equality is type-sensitive between strings and numbers (`3 != "3"`), but
/// integers and floats compare numerically, so `Int(3) == Float(3.0)`. Hashing
/// is consistent with that: every numeric value hashes through its `f64` bits.
///
/// `Null` is the distinguished value produced by an anonymous `-` in a rule
/// head.
#[derive(Clone, Debug)]
pub enum Constant {
    Str(Arc<str>),
    Int(i64),
    Float(f64),
    Null,
}

impl Constant {
    pub fn str(s: impl AsRef<str>) -> Self {
        Constant::Str(Arc::from(s.as_ref()))
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Constant::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Numeric view with integer to float coercion.
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Constant::Int(i) => Some(i as f64),
            Constant::Float(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Constant::Int(i) => Some(i),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Constant::Int(_) | Constant::Float(_))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Constant::Str(_) => "string",
            Constant::Int(_) => "integer",
            Constant::Float(_) => "float",
            Constant::Null => "null",
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Constant::Null => 0,
            Constant::Int(_) | Constant::Float(_) => 1,
            Constant::Str(_) => 2,
        }
    }
}

fn normalized_bits(f: f64) -> u64 {
    if f == 0.0 {
        0.0f64.to_bits()
    } else if f.is_nan() {
        f64::NAN.to_bits()
    } else {
        f.to_bits()
    }
}

impl PartialEq for Constant {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Constant::Str(a), Constant::Str(b)) => a == b,
            (Constant::Int(a), Constant::Int(b)) => a == b,
            (Constant::Null, Constant::Null) => true,
            (a, b) if a.is_numeric() && b.is_numeric() => {
                let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
                x == y || (x.is_nan() && y.is_nan())
            }
            _ => false,
        }
    }
}

impl Eq for Constant {}

impl Hash for Constant {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Constant::Str(s) => {
                state.write_u8(2);
                s.hash(state);
            }
            Constant::Int(_) | Constant::Float(_) => {
                state.write_u8(1);
                state.write_u64(normalized_bits(self.as_f64().unwrap()));
            }
            Constant::Null => state.write_u8(0),
        }
    }
}

impl PartialOrd for Constant {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Total order used for canonical output: null, then numbers, then strings.
impl Ord for Constant {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Constant::Str(a), Constant::Str(b)) => a.cmp(b),
            (Constant::Int(a), Constant::Int(b)) => a.cmp(b),
            (a, b) if a.is_numeric() && b.is_numeric() => {
                a.as_f64().unwrap().total_cmp(&b.as_f64().unwrap())
            }
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constant::Str(s) => f.write_str(s),
            Constant::Int(i) => write!(f, "{i}"),
            Constant::Float(x) => {
                if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e15 {
                    write!(f, "{x:.1}")
                } else {
                    write!(f, "{x}")
                }
            }
            Constant::Null => f.write_str("-"),
        }
    }
}

impl From<&str> for Constant {
    fn from(s: &str) -> Self {
        Constant::str(s)
    }
}

impl From<String> for Constant {
    fn from(s: String) -> Self {
        Constant::Str(Arc::from(s))
    }
}

impl From<i64> for Constant {
    fn from(i: i64) -> Self {
        Constant::Int(i)
    }
}

impl From<f64> for Constant {
    fn from(f: f64) -> Self {
        Constant::Float(f)
    }
}

/// A fact tuple.
pub type Tuple = std::sync::Arc<[Constant]>;

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::hash_map::DefaultHasher;

    fn hash_of(c: &Constant) -> u64 {
        let mut h = DefaultHasher::new();
        c.hash(&mut h);
        h.finish()
    }

    #[test]
    fn equality_is_type_sensitive() {
        assert_ne!(Constant::Int(3), Constant::str("3"));
        assert_eq!(Constant::Int(3), Constant::Float(3.0));
        assert_eq!(hash_of(&Constant::Int(3)), hash_of(&Constant::Float(3.0)));
        assert_eq!(hash_of(&Constant::Float(0.0)), hash_of(&Constant::Float(-0.0)));
    }

    #[test]
    fn ordering_groups_by_type() {
        let mut v = vec![
            Constant::str("b"),
            Constant::Float(2.5),
            Constant::Null,
            Constant::Int(1),
            Constant::str("a"),
        ];
        v.sort();
        assert_eq!(
            v,
            vec![
                Constant::Null,
                Constant::Int(1),
                Constant::Float(2.5),
                Constant::str("a"),
                Constant::str("b"),
            ]
        );
    }

    #[test]
    fn display() {
        assert_eq!(Constant::Float(100000.0).to_string(), "100000.0");
        assert_eq!(Constant::Float(42.5).to_string(), "42.5");
        assert_eq!(Constant::str("1-URGENT").to_string(), "1-URGENT");
        assert_eq!(Constant::Null.to_string(), "-");
    }
}
