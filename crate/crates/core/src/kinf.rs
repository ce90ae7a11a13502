//! The space of finitely supported sequences `𝕂^∞ = ⋃ 𝕂^n`.
//!
//! A [`LevelledVector`] stores a finite coefficient list; its declared level
//! is the length of that list. Levels are structural: a coefficient counts
//! as zero only if it is exactly `0.0` (both parts for complex scalars), so
//! level detection never depends on a magnitude threshold.

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::field::scalar_json;
use crate::{Error, Field, Result};

#[derive(Debug, Clone)]
pub struct LevelledVector {
    field: Field,
    entries: Vec<Complex64>,
}

fn is_zero(z: &Complex64) -> bool {
    z.re == 0.0 && z.im == 0.0
}

impl LevelledVector {
    pub fn new(field: Field, entries: Vec<Complex64>) -> Result<Self> {
        if field == Field::Real && entries.iter().any(|z| z.im != 0.0) {
            return Err(Error::FieldMismatch {
                expected: Field::Real,
                found: Field::Complex,
            });
        }
        Ok(Self { field, entries })
    }

    pub fn real(entries: &[f64]) -> Self {
        Self {
            field: Field::Real,
            entries: entries.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }

    pub fn complex(entries: &[Complex64]) -> Self {
        Self {
            field: Field::Complex,
            entries: entries.to_vec(),
        }
    }

    pub fn zeros(field: Field, level: usize) -> Self {
        Self {
            field,
            entries: vec![Complex64::new(0.0, 0.0); level],
        }
    }

    /// The `k`-th standard basis vector (one-based `k`) at level `k`.
    pub fn basis(field: Field, k: usize) -> Self {
        assert!(k >= 1, "basis vectors are indexed from 1");
        let mut v = Self::zeros(field, k);
        v.entries[k - 1] = Complex64::new(1.0, 0.0);
        v
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn declared_level(&self) -> usize {
        self.entries.len()
    }

    /// Smallest `n` with every entry beyond position `n` exactly zero.
    pub fn canonical_level(&self) -> usize {
        self.entries
            .iter()
            .rposition(|z| !is_zero(z))
            .map_or(0, |i| i + 1)
    }

    /// Coefficient at one-based position `k`; zero beyond the declared level.
    pub fn coeff(&self, k: usize) -> Complex64 {
        if k == 0 || k > self.entries.len() {
            Complex64::new(0.0, 0.0)
        } else {
            self.entries[k - 1]
        }
    }

    /// Re-express at level `n`, padding or dropping trailing zeros.
    pub fn embed(&self, n: usize) -> Result<Self> {
        let canonical = self.canonical_level();
        if n < canonical {
            return Err(Error::LevelUnderflow {
                requested: n,
                canonical,
            });
        }
        let mut entries = self.entries.clone();
        entries.resize(n, Complex64::new(0.0, 0.0));
        Ok(Self {
            field: self.field,
            entries,
        })
    }

    /// Entrywise sum at the larger declared level.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.field.ensure_same(other.field)?;
        let n = self.declared_level().max(other.declared_level());
        let entries = (1..=n).map(|k| self.coeff(k) + other.coeff(k)).collect();
        Ok(Self {
            field: self.field,
            entries,
        })
    }

    pub fn scale(&self, s: Complex64) -> Result<Self> {
        if self.field == Field::Real && s.im != 0.0 {
            return Err(Error::FieldMismatch {
                expected: Field::Real,
                found: Field::Complex,
            });
        }
        Ok(Self {
            field: self.field,
            entries: self.entries.iter().map(|z| z * s).collect(),
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    pub fn to_json(&self) -> Value {
        let entries: Vec<Value> = self
            .entries
            .iter()
            .map(|&z| scalar_json::to_value(self.field, z))
            .collect();
        json!({ "field": self.field, "entries": entries })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let field: Field = serde_json::from_value(
            v.get("field")
                .cloned()
                .ok_or_else(|| Error::Argument("vector JSON needs \"field\"".into()))?,
        )?;
        let entries = v
            .get("entries")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Argument("vector JSON needs \"entries\"".into()))?
            .iter()
            .map(|x| scalar_json::from_value(field, x))
            .collect::<Result<Vec<_>>>()?;
        Self::new(field, entries)
    }
}

impl PartialEq for LevelledVector {
    /// Equality after zero-padding to the common level.
    fn eq(&self, other: &Self) -> bool {
        let n = self.declared_level().max(other.declared_level());
        self.field == other.field && (1..=n).all(|k| self.coeff(k) == other.coeff(k))
    }
}

impl Serialize for LevelledVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LevelledVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Self::from_json(&v).map_err(serde::de::Error::custom)
    }
}

/// The open polydisk `{x ∈ 𝕂^n : |x_j| < r for all j}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polydisk {
    radius: f64,
    dimension: usize,
}

impl Polydisk {
    pub fn new(radius: f64, dimension: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Argument(format!(
                "polydisk radius {radius} must be positive"
            )));
        }
        Ok(Self { radius, dimension })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Strict membership; the boundary is excluded.
    pub fn contains(&self, v: &LevelledVector) -> Result<bool> {
        let level = v.canonical_level();
        if level > self.dimension {
            return Err(Error::Dimension(format!(
                "vector of canonical level {level} does not lie in a polydisk of dimension {}",
                self.dimension
            )));
        }
        Ok((1..=self.dimension).all(|k| v.coeff(k).norm() < self.radius))
    }
}

pub fn polydisk_contains(v: &LevelledVector, d: &Polydisk) -> Result<bool> {
    d.contains(v)
}

/// Least level whose coefficient space contains every vector of `set`.
pub fn min_level_of_set(set: &[LevelledVector]) -> Result<usize> {
    if set.is_empty() {
        return Err(Error::Argument("min_level_of_set needs a nonempty set".into()));
    }
    Ok(set.iter().map(LevelledVector::canonical_level).max().unwrap_or(0))
}
