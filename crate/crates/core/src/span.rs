//! Coordinates, spans and rank decisions for subspaces of matrix algebras.
//!
//! All rank decisions go through a relative pivot threshold (default
//! [`PIVOT_TOL`]); it is the most sensitive constant in the crate, so every
//! entry point accepts an override.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::matrix::{c, CMat};
use crate::{Error, Field, Matrix, Result};

pub type CVec = DVector<Complex64>;

/// Relative pivot threshold for independence tests.
pub const PIVOT_TOL: f64 = 1e-10;

/// The ambient matrix algebra `gl_n` together with the scalars used for
/// spans. Real spans of complex matrices (e.g. `u(n)`) use
/// `field = Complex, scalars = Real`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ambient {
    pub n: usize,
    pub field: Field,
    pub scalars: Field,
}

impl Ambient {
    pub fn new(n: usize, field: Field, scalars: Field) -> Result<Self> {
        if field == Field::Real && scalars == Field::Complex {
            return Err(Error::Argument(
                "complex spans of real matrices leave the real field".into(),
            ));
        }
        Ok(Self { n, field, scalars })
    }

    pub fn real(n: usize) -> Self {
        Self {
            n,
            field: Field::Real,
            scalars: Field::Real,
        }
    }

    pub fn complex(n: usize) -> Self {
        Self {
            n,
            field: Field::Complex,
            scalars: Field::Complex,
        }
    }

    /// Real spans of complex matrices.
    pub fn real_form(n: usize) -> Self {
        Self {
            n,
            field: Field::Complex,
            scalars: Field::Real,
        }
    }

    pub fn coord_len(&self) -> usize {
        match (self.field, self.scalars) {
            (Field::Complex, Field::Real) => 2 * self.n * self.n,
            _ => self.n * self.n,
        }
    }

    pub fn check(&self, m: &Matrix) -> Result<()> {
        self.field.ensure_same(m.field())?;
        if m.n() != self.n {
            return Err(Error::Dimension(format!(
                "expected {0}x{0}, got {1}x{1}",
                self.n,
                m.n()
            )));
        }
        Ok(())
    }

    pub fn vectorize(&self, m: &Matrix) -> Result<CVec> {
        self.check(m)?;
        let n = self.n;
        let d = m.data();
        let v = match (self.field, self.scalars) {
            (Field::Complex, Field::Real) => CVec::from_iterator(
                2 * n * n,
                (0..n * n)
                    .map(|k| c(d[(k / n, k % n)].re))
                    .chain((0..n * n).map(|k| c(d[(k / n, k % n)].im))),
            ),
            _ => CVec::from_iterator(n * n, (0..n * n).map(|k| d[(k / n, k % n)])),
        };
        Ok(v)
    }

    pub fn devectorize(&self, v: &CVec) -> Matrix {
        let n = self.n;
        let mut data = CMat::zeros(n, n);
        match (self.field, self.scalars) {
            (Field::Complex, Field::Real) => {
                for k in 0..n * n {
                    data[(k / n, k % n)] = Complex64::new(v[k].re, v[k + n * n].re);
                }
            }
            _ => {
                for k in 0..n * n {
                    data[(k / n, k % n)] = v[k];
                }
            }
        }
        Matrix::from_parts(self.field, data)
    }

    /// A basis of the whole of `gl_n` over the span scalars.
    pub fn full_basis(&self) -> Vec<Matrix> {
        let mut out = Vec::with_capacity(self.coord_len());
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(Matrix::unit(self.field, self.n, i, j));
            }
        }
        if self.field == Field::Complex && self.scalars == Field::Real {
            let imag: Vec<Matrix> = out.iter().map(|m| m.scale_complex(Complex64::i())).collect();
            out.extend(imag);
        }
        out
    }
}

fn dot(a: &CVec, b: &CVec) -> Complex64 {
    a.dotc(b)
}

/// Incrementally built orthonormal basis (classical Gram-Schmidt with one
/// reorthogonalisation pass).
#[derive(Debug, Clone)]
pub struct Orthonormal {
    len: usize,
    tol: f64,
    vecs: Vec<CVec>,
}

impl Orthonormal {
    pub fn new(len: usize, tol: f64) -> Self {
        Self {
            len,
            tol,
            vecs: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.vecs.len()
    }

    pub fn vectors(&self) -> &[CVec] {
        &self.vecs
    }

    fn residual(&self, v: &CVec) -> CVec {
        let mut r = v.clone();
        for _ in 0..2 {
            for q in &self.vecs {
                let p = dot(q, &r);
                r.axpy(-p, q, c(1.0));
            }
        }
        r
    }

    /// Distance from `v` to the span, relative to `|v|`.
    pub fn relative_residual(&self, v: &CVec) -> f64 {
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        self.residual(v).norm() / nv
    }

    /// Adds `v` if it is independent of the current span; returns whether it
    /// was added.
    pub fn push(&mut self, v: &CVec) -> bool {
        assert_eq!(v.len(), self.len, "coordinate length mismatch");
        let nv = v.norm();
        if nv == 0.0 || !nv.is_finite() {
            return false;
        }
        let r = self.residual(v);
        let nr = r.norm();
        if nr / nv <= self.tol {
            return false;
        }
        self.vecs.push(r / c(nr));
        true
    }

    /// Orthogonal projection onto the span.
    pub fn project(&self, v: &CVec) -> CVec {
        v - self.residual(v)
    }
}

/// Rank of a family of coordinate vectors.
pub fn rank(vecs: &[CVec], tol: f64) -> usize {
    let Some(first) = vecs.first() else { return 0 };
    let mut on = Orthonormal::new(first.len(), tol);
    vecs.iter().filter(|v| on.push(v)).count()
}

fn to_real(m: &CMat) -> DMatrix<f64> {
    m.map(|z| z.re)
}

/// Basis of the kernel of `m` over the given scalars. Singular values at or
/// below `tol * max(1, sigma_max)` count as zero.
pub fn nullspace(m: &CMat, scalars: Field, tol: f64) -> Vec<CVec> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Vec::new();
    }
    if rows == 0 {
        return (0..cols)
            .map(|k| {
                let mut e = CVec::zeros(cols);
                e[k] = c(1.0);
                e
            })
            .collect();
    }
    // pad to at least square so the SVD returns a full set of right vectors
    let padded = if rows < cols {
        let mut p = CMat::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    match scalars {
        Field::Real => {
            let svd = to_real(&padded).svd(false, true);
            let vt = svd.v_t.expect("v_t requested");
            let smax = svd.singular_values.max().max(1.0);
            (0..cols)
                .filter(|&k| svd.singular_values[k] <= tol * smax)
                .map(|k| vt.row(k).transpose().map(c))
                .collect()
        }
        Field::Complex => {
            let svd = padded.svd(false, true);
            let vt = svd.v_t.expect("v_t requested");
            let smax = svd.singular_values.max().max(1.0);
            (0..cols)
                .filter(|&k| svd.singular_values[k] <= tol * smax)
                .map(|k| vt.row(k).adjoint())
                .collect()
        }
    }
}

/// Least-squares coordinates of `v` in the (independent) family `cols`,
/// together with the absolute residual norm.
pub fn coordinates(cols: &[CVec], v: &CVec, scalars: Field) -> (CVec, f64) {
    if cols.is_empty() {
        return (CVec::zeros(0), v.norm());
    }
    let a = CMat::from_columns(cols);
    let x = match scalars {
        Field::Real => {
            let ar = to_real(&a);
            let vr = v.map(|z| z.re);
            let svd = ar.svd(true, true);
            let x = svd.solve(&vr, 1e-14).expect("u and v_t requested");
            x.map(c)
        }
        Field::Complex => {
            let svd = a.clone().svd(true, true);
            svd.solve(v, 1e-14).expect("u and v_t requested")
        }
    };
    let resid = (&a * &x - v).norm();
    (x, resid)
}

/// Basis of `span(a) ∩ span(b)`, expressed in ambient coordinates.
pub fn intersect(a: &[CVec], b: &[CVec], scalars: Field, tol: f64) -> Vec<CVec> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let len = a[0].len();
    let mut cols: Vec<CVec> = a.to_vec();
    cols.extend(b.iter().map(|v| -v));
    let m = CMat::from_columns(&cols);
    let mut on = Orthonormal::new(len, tol);
    let mut out = Vec::new();
    for z in nullspace(&m, scalars, tol) {
        let mut v = CVec::zeros(len);
        for (k, ak) in a.iter().enumerate() {
            v.axpy(z[k], ak, c(1.0));
        }
        if on.push(&v) {
            out.push(v);
        }
    }
    out
}

/// A basis of a linear subspace of `gl_n` with a cached pseudo-inverse for
/// coordinate extraction.
#[derive(Debug, Clone)]
pub struct Frame {
    ambient: Ambient,
    basis: Vec<Matrix>,
    cols: CMat,
    pinv: CMat,
}

impl Frame {
    /// Fails unless `basis` is independent at the pivot threshold.
    pub fn new(ambient: Ambient, basis: Vec<Matrix>) -> Result<Self> {
        Self::with_tol(ambient, basis, PIVOT_TOL)
    }

    pub fn with_tol(ambient: Ambient, basis: Vec<Matrix>, tol: f64) -> Result<Self> {
        let vecs = basis
            .iter()
            .map(|b| ambient.vectorize(b))
            .collect::<Result<Vec<_>>>()?;
        if rank(&vecs, tol) != vecs.len() {
            return Err(Error::Argument("frame vectors are linearly dependent".into()));
        }
        let len = ambient.coord_len();
        let (cols, pinv) = if vecs.is_empty() {
            (CMat::zeros(len, 0), CMat::zeros(0, len))
        } else {
            let cols = CMat::from_columns(&vecs);
            let pinv = match ambient.scalars {
                Field::Real => to_real(&cols)
                    .pseudo_inverse(1e-14)
                    .map_err(|e| Error::Numeric(e.to_string()))?
                    .map(c),
                Field::Complex => cols
                    .clone()
                    .pseudo_inverse(1e-14)
                    .map_err(|e| Error::Numeric(e.to_string()))?,
            };
            (cols, pinv)
        };
        Ok(Self {
            ambient,
            basis,
            cols,
            pinv,
        })
    }

    /// The whole of `gl_n` with its matrix-unit basis.
    pub fn gl(ambient: Ambient) -> Self {
        Self::new(ambient, ambient.full_basis()).expect("matrix units are independent")
    }

    pub fn ambient(&self) -> Ambient {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Matrix] {
        &self.basis
    }

    pub fn columns(&self) -> Vec<CVec> {
        self.cols.column_iter().map(|c| c.into_owned()).collect()
    }

    /// Coordinates of `m` and the absolute residual of the fit.
    pub fn coords(&self, m: &Matrix) -> Result<(CVec, f64)> {
        let v = self.ambient.vectorize(m)?;
        let mut x = &self.pinv * &v;
        if self.ambient.scalars == Field::Real {
            x.iter_mut().for_each(|z| z.im = 0.0);
        }
        let resid = (&self.cols * &x - &v).norm();
        Ok((x, resid))
    }

    pub fn combine(&self, coeffs: &CVec) -> Matrix {
        assert_eq!(coeffs.len(), self.dim(), "coefficient count mismatch");
        let v = &self.cols * coeffs;
        self.ambient.devectorize(&v)
    }
}
