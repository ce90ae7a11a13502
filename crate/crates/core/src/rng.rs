//! Seeded randomness. Every consumer draws from a substream derived from
//! `(seed, label)`, so adding a consumer never shifts another's samples.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::matrix::CMat;
use crate::{Field, Matrix};

pub type SeededRng = ChaCha8Rng;

pub fn substream(seed: u64, label: &str) -> SeededRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Matrix with independent entries uniform in `[-r, r]` (both parts for
/// complex fields), so the sup norm is at most `r`.
pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, field: Field, n: usize, r: f64) -> Matrix {
    let data = CMat::from_fn(n, n, |_, _| match field {
        Field::Real => Complex64::new(rng.random_range(-r..=r), 0.0),
        Field::Complex => {
            let re: f64 = rng.random_range(-r..=r);
            let im: f64 = rng.random_range(-r..=r);
            // keep the modulus within r
            Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        }
    });
    Matrix::from_parts(field, data)
}
