use std::fmt;

use serde::{Deserialize, Serialize};

/// Ground field tag. Scalars are stored as `Complex64` in both cases; a real
/// value carries an exactly zero imaginary part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    #[serde(rename = "R")]
    Real,
    #[serde(rename = "C")]
    Complex,
}

impl Field {
    pub fn ensure_same(self, other: Field) -> crate::Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(crate::Error::FieldMismatch {
                expected: self,
                found: other,
            })
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Real => f.write_str("R"),
            Field::Complex => f.write_str("C"),
        }
    }
}

pub(crate) mod scalar_json {
    //! Scalars serialize as plain numbers over the reals and as `[re, im]`
    //! pairs over the complex numbers.
    use num_complex::Complex64;
    use serde_json::Value;

    use super::Field;
    use crate::{Error, Result};

    pub fn to_value(field: Field, z: Complex64) -> Value {
        match field {
            Field::Real => Value::from(z.re),
            Field::Complex => Value::Array(vec![Value::from(z.re), Value::from(z.im)]),
        }
    }

    pub fn from_value(field: Field, v: &Value) -> Result<Complex64> {
        let z = match v {
            Value::Number(n) => Complex64::new(
                n.as_f64()
                    .ok_or_else(|| Error::Argument(format!("bad number {n}")))?,
                0.0,
            ),
            Value::Array(pair) if pair.len() == 2 => {
                let re = pair[0].as_f64();
                let im = pair[1].as_f64();
                match (re, im) {
                    (Some(re), Some(im)) => Complex64::new(re, im),
                    _ => return Err(Error::Argument(format!("bad complex scalar {v}"))),
                }
            }
            _ => return Err(Error::Argument(format!("bad scalar {v}"))),
        };
        if field == Field::Real && z.im != 0.0 {
            return Err(Error::FieldMismatch {
                expected: Field::Real,
                found: Field::Complex,
            });
        }
        Ok(z)
    }
}
