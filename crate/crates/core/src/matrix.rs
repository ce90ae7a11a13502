//! Square matrices over ℝ or ℂ with a fixed field tag.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::field::scalar_json;
use crate::{Error, Field, Result};

pub type CMat = DMatrix<Complex64>;

/// A square matrix tagged with its ground field.
///
/// Real matrices are stored with exactly zero imaginary parts; every
/// constructor checks this.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    field: Field,
    data: CMat,
}

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

impl Matrix {
    pub fn new(field: Field, data: CMat) -> Result<Self> {
        if !data.is_square() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, expected square",
                data.nrows(),
                data.ncols()
            )));
        }
        if field == Field::Real && data.iter().any(|z| z.im != 0.0) {
            return Err(Error::FieldMismatch {
                expected: Field::Real,
                found: Field::Complex,
            });
        }
        Ok(Self { field, data })
    }

    /// Wraps `data`, dropping imaginary parts when `field` is real.
    pub(crate) fn from_parts(field: Field, mut data: CMat) -> Self {
        if field == Field::Real {
            data.iter_mut().for_each(|z| z.im = 0.0);
        }
        Self { field, data }
    }

    pub fn real(n: usize, row_major: &[f64]) -> Result<Self> {
        if row_major.len() != n * n {
            return Err(Error::Dimension(format!(
                "{} entries for a {n}x{n} matrix",
                row_major.len()
            )));
        }
        Ok(Self {
            field: Field::Real,
            data: CMat::from_row_iterator(n, n, row_major.iter().map(|&x| c(x))),
        })
    }

    pub fn complex(n: usize, row_major: &[Complex64]) -> Result<Self> {
        if row_major.len() != n * n {
            return Err(Error::Dimension(format!(
                "{} entries for a {n}x{n} matrix",
                row_major.len()
            )));
        }
        Ok(Self {
            field: Field::Complex,
            data: CMat::from_row_slice(n, n, row_major),
        })
    }

    pub fn zeros(field: Field, n: usize) -> Self {
        Self {
            field,
            data: CMat::zeros(n, n),
        }
    }

    pub fn identity(field: Field, n: usize) -> Self {
        Self {
            field,
            data: CMat::identity(n, n),
        }
    }

    /// Matrix unit with a single one at zero-based position `(i, j)`.
    pub fn unit(field: Field, n: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(field, n);
        m.data[(i, j)] = c(1.0);
        m
    }

    pub fn diag(field: Field, entries: &[Complex64]) -> Result<Self> {
        let n = entries.len();
        let mut data = CMat::zeros(n, n);
        for (k, z) in entries.iter().enumerate() {
            data[(k, k)] = *z;
        }
        Self::new(field, data)
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &CMat {
        &self.data
    }

    pub fn into_data(self) -> CMat {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn conform(&self, other: &Matrix) -> Result<()> {
        self.field.ensure_same(other.field)?;
        if self.n() != other.n() {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.n(),
                self.n(),
                other.n(),
                other.n()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.conform(other)?;
        Ok(Self::from_parts(self.field, &self.data + &other.data))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.conform(other)?;
        Ok(Self::from_parts(self.field, &self.data - &other.data))
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        self.conform(other)?;
        Ok(Self::from_parts(self.field, &self.data * &other.data))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Self::from_parts(self.field, &self.data * c(s))
    }

    /// Complex scaling; the result is always tagged complex.
    pub fn scale_complex(&self, s: Complex64) -> Matrix {
        Self {
            field: Field::Complex,
            data: &self.data * s,
        }
    }

    /// Reinterprets a real matrix as a complex one.
    pub fn to_complex(&self) -> Matrix {
        Self {
            field: Field::Complex,
            data: self.data.clone(),
        }
    }

    pub fn neg(&self) -> Matrix {
        Self::from_parts(self.field, -&self.data)
    }

    pub fn transpose(&self) -> Matrix {
        Self::from_parts(self.field, self.data.transpose())
    }

    pub fn adjoint(&self) -> Matrix {
        Self::from_parts(self.field, self.data.adjoint())
    }

    pub fn trace(&self) -> Complex64 {
        self.data.trace()
    }

    pub fn det(&self) -> Complex64 {
        self.data.determinant()
    }

    pub fn inverse(&self) -> Result<Matrix> {
        if self.det().norm() <= 1e-12 {
            return Err(Error::Numeric("matrix is singular".into()));
        }
        self.data
            .clone()
            .try_inverse()
            .map(|d| Self::from_parts(self.field, d))
            .ok_or_else(|| Error::Numeric("matrix is singular".into()))
    }

    /// Entrywise maximum modulus.
    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.data)
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        one_norm(&self.data)
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(&self.data)
    }

    /// Sup-norm distance; infinite if shapes or fields disagree.
    pub fn dist(&self, other: &Matrix) -> f64 {
        if self.field != other.field || self.n() != other.n() {
            return f64::INFINITY;
        }
        sup_norm(&(&self.data - &other.data))
    }

    pub fn approx_eq(&self, other: &Matrix, tol: f64) -> bool {
        self.dist(other) <= tol
    }

    /// `diag(self, I)` of size `m`: the group-side block embedding.
    pub fn embed_group(&self, m: usize) -> Result<Matrix> {
        let mut out = Self::identity(self.field, m);
        self.place_into(&mut out)?;
        Ok(out)
    }

    /// `diag(self, 0)` of size `m`: the algebra-side block embedding.
    pub fn embed_algebra(&self, m: usize) -> Result<Matrix> {
        let mut out = Self::zeros(self.field, m);
        self.place_into(&mut out)?;
        Ok(out)
    }

    fn place_into(&self, out: &mut Matrix) -> Result<()> {
        let n = self.n();
        if out.n() < n {
            return Err(Error::Level {
                requested: out.n(),
                current: n,
            });
        }
        out.data.view_mut((0, 0), (n, n)).copy_from(&self.data);
        Ok(())
    }

    /// Upper-left `k x k` block.
    pub fn top_left(&self, k: usize) -> Result<Matrix> {
        if k > self.n() {
            return Err(Error::Dimension(format!("block {k} exceeds size {}", self.n())));
        }
        Ok(Self::from_parts(
            self.field,
            self.data.view((0, 0), (k, k)).into_owned(),
        ))
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = (0..self.n())
            .map(|i| {
                Value::Array(
                    (0..self.n())
                        .map(|j| scalar_json::to_value(self.field, self.data[(i, j)]))
                        .collect(),
                )
            })
            .collect();
        json!({ "n": self.n(), "field": self.field, "rows": rows })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let field: Field = match v.get("field") {
            Some(f) => serde_json::from_value(f.clone())?,
            None => Field::Real,
        };
        let rows = v
            .get("rows")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Argument("matrix JSON needs \"rows\"".into()))?;
        let n = rows.len();
        if let Some(declared) = v.get("n") {
            if declared.as_u64() != Some(n as u64) {
                return Err(Error::Dimension(format!(
                    "declared n = {declared} but {n} rows given"
                )));
            }
        }
        let mut data = CMat::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            let row = row
                .as_array()
                .filter(|r| r.len() == n)
                .ok_or_else(|| Error::Dimension(format!("row {i} must have {n} entries")))?;
            for (j, x) in row.iter().enumerate() {
                data[(i, j)] = scalar_json::from_value(field, x)?;
            }
        }
        let m = Self::new(field, data)?;
        if !m.is_finite() {
            return Err(Error::Numeric("non-finite matrix entry".into()));
        }
        Ok(m)
    }

    /// Row-major flattening; complex entries contribute `re, im` pairs.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n() * self.n() * 2);
        for i in 0..self.n() {
            for j in 0..self.n() {
                let z = self.data[(i, j)];
                out.push(z.re);
                if self.field == Field::Complex {
                    out.push(z.im);
                }
            }
        }
        out
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Matrix::from_json(&v).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn sup_norm(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub(crate) fn one_norm(m: &CMat) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub(crate) fn spectral_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().fold(0.0, |acc, &s| acc.max(s))
}
