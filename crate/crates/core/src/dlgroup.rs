//! Arithmetic in direct limit groups.
//!
//! Group and algebra elements are [`LimitPoint`]s of a matrix-group
//! [`SystemDescriptor`]; algebra points are lifted with the bonding
//! derivatives. Binary operations promote both operands to the larger level
//! and never demote; [`compact`] is the explicit way down.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dirsys::{Bonding, LimitPoint, ObjectKind, SystemDescriptor};
use crate::kinf::LevelledVector;
use crate::matrix::{c, CMat};
use crate::mlie::{bracket, expm, expm_minus_identity_data};
use crate::span::{nullspace, Ambient, CVec, Frame, Orthonormal};
use crate::{Error, Field, Matrix, Result};

/// Threshold separating roundoff plateaus from genuine errors in ladders.
pub const PLATEAU: f64 = 1e-11;

fn ensure_group(sys: &SystemDescriptor) -> Result<()> {
    if sys.kind() != ObjectKind::MatrixGroup {
        return Err(Error::Argument("expected a matrix-group system".into()));
    }
    Ok(())
}

fn invertible(m: &Matrix) -> Result<()> {
    if !m.is_finite() || m.det().norm() <= 1e-12 {
        return Err(Error::Numeric("group representative is singular".into()));
    }
    Ok(())
}

/// Lifts an algebra point along the bonding derivatives.
pub fn lift_algebra(sys: &SystemDescriptor, x: &LimitPoint, i: usize) -> Result<LimitPoint> {
    if i < x.level {
        return Err(Error::Level {
            requested: i,
            current: x.level,
        });
    }
    sys.dim(i)?;
    let mut cur = x.rep.as_matrix()?.clone();
    if cur.n() != sys.dim(x.level)? {
        return Err(Error::Dimension(format!(
            "{0}x{0} algebra element at level {1}",
            cur.n(),
            x.level
        )));
    }
    for level in x.level..i {
        cur = sys.bond_derivative(level, &cur)?;
    }
    Ok(LimitPoint::new(i, cur))
}

fn promote_pair(
    sys: &SystemDescriptor,
    a: &LimitPoint,
    b: &LimitPoint,
    algebra: bool,
) -> Result<(usize, Matrix, Matrix)> {
    let level = a.level.max(b.level);
    let lift = |p: &LimitPoint| -> Result<Matrix> {
        let l = if algebra {
            lift_algebra(sys, p, level)?
        } else {
            sys.lift(p, level)?
        };
        Ok(l.rep.as_matrix()?.clone())
    };
    Ok((level, lift(a)?, lift(b)?))
}

pub fn group_op(sys: &SystemDescriptor, a: &LimitPoint, b: &LimitPoint) -> Result<LimitPoint> {
    ensure_group(sys)?;
    let (level, x, y) = promote_pair(sys, a, b, false)?;
    invertible(&x)?;
    invertible(&y)?;
    Ok(LimitPoint::new(level, x.mul(&y)?))
}

pub fn group_inv(sys: &SystemDescriptor, a: &LimitPoint) -> Result<LimitPoint> {
    ensure_group(sys)?;
    sys.check_shape(a.level, &a.rep)?;
    let m = a.rep.as_matrix()?;
    invertible(m)?;
    Ok(LimitPoint::new(a.level, m.inverse()?))
}

pub fn identity(sys: &SystemDescriptor, level: usize) -> Result<LimitPoint> {
    Ok(LimitPoint::new(level, sys.identity(level)?))
}

/// Smallest level at which `p` is represented, descending through block
/// bondings only.
pub fn compact(sys: &SystemDescriptor, p: &LimitPoint) -> Result<LimitPoint> {
    sys.check_shape(p.level, &p.rep)?;
    let mut cur = p.clone();
    while cur.level > 1 {
        if !matches!(sys.bonding()[cur.level - 2], Bonding::Block) {
            break;
        }
        let m = cur.rep.as_matrix()?;
        let k = sys.dim(cur.level - 1)?;
        let top = m.top_left(k)?;
        let back = match sys.kind() {
            ObjectKind::MatrixGroup => top.embed_group(m.n())?,
            _ => top.embed_algebra(m.n())?,
        };
        if back.data() != m.data() {
            break;
        }
        cur = LimitPoint::new(cur.level - 1, top);
    }
    Ok(cur)
}

/// `(x.level, expm(x.rep))`.
pub fn exp_limit(sys: &SystemDescriptor, x: &LimitPoint) -> Result<LimitPoint> {
    ensure_group(sys)?;
    let m = x.rep.as_matrix()?;
    if m.n() != sys.dim(x.level)? {
        return Err(Error::Dimension(
            "algebra element does not match its level".into(),
        ));
    }
    Ok(LimitPoint::new(x.level, expm(m)?))
}

/// `g^n` by binary powering.
pub fn matrix_power(g: &Matrix, mut n: u64) -> Result<Matrix> {
    let mut acc = Matrix::identity(g.field(), g.n());
    let mut base = g.clone();
    while n > 0 {
        if n & 1 == 1 {
            acc = acc.mul(&base)?;
        }
        n >>= 1;
        if n > 0 {
            base = base.mul(&base)?;
        }
    }
    Ok(acc)
}

// Products near the identity are carried as `D = g − I` so that rounding
// stays relative to `‖D‖` through long powers.

fn delta_exp(x: &Matrix, s: f64) -> CMat {
    expm_minus_identity_data(&(x.data() * c(s)))
}

/// `(I + D₁)(I + D₂) − I`.
fn delta_mul(d1: &CMat, d2: &CMat) -> CMat {
    d1 + d2 + d1 * d2
}

/// `(I + D)^n − I` by binary powering.
fn delta_power(d: &CMat, mut n: u64) -> CMat {
    let mut acc = CMat::zeros(d.nrows(), d.ncols());
    let mut base = d.clone();
    while n > 0 {
        if n & 1 == 1 {
            acc = delta_mul(&acc, &base);
        }
        n >>= 1;
        if n > 0 {
            base = delta_mul(&base, &base);
        }
    }
    acc
}

fn from_delta(field: Field, d: CMat) -> Matrix {
    let n = d.nrows();
    Matrix::from_parts(field, d + CMat::identity(n, n))
}

/// `(exp(x/n) exp(y/n))^n` at the common level.
pub fn trotter(sys: &SystemDescriptor, x: &LimitPoint, y: &LimitPoint, n: u64) -> Result<LimitPoint> {
    ensure_group(sys)?;
    if n == 0 {
        return Err(Error::Argument("n must be positive".into()));
    }
    let (level, a, b) = promote_pair(sys, x, y, true)?;
    let s = 1.0 / n as f64;
    let step = delta_mul(&delta_exp(&a, s), &delta_exp(&b, s));
    Ok(LimitPoint::new(
        level,
        from_delta(a.field(), delta_power(&step, n)),
    ))
}

/// `‖trotter(x, y, n) − exp(x + y)‖_∞`.
pub fn trotter_error(sys: &SystemDescriptor, x: &LimitPoint, y: &LimitPoint, n: u64) -> Result<f64> {
    let (level, a, b) = promote_pair(sys, x, y, true)?;
    let target = expm(&a.add(&b)?)?;
    let t = trotter(sys, &LimitPoint::new(level, a), &LimitPoint::new(level, b), n)?;
    Ok(t.rep.as_matrix()?.dist(&target))
}

/// `(exp(x/n) exp(y/n) exp(−x/n) exp(−y/n))^{n²}`.
pub fn commutator_formula(
    sys: &SystemDescriptor,
    x: &LimitPoint,
    y: &LimitPoint,
    n: u64,
) -> Result<LimitPoint> {
    ensure_group(sys)?;
    if n == 0 {
        return Err(Error::Argument("n must be positive".into()));
    }
    let (level, a, b) = promote_pair(sys, x, y, true)?;
    let s = 1.0 / n as f64;
    let step = [
        delta_exp(&a, s),
        delta_exp(&b, s),
        delta_exp(&a, -s),
        delta_exp(&b, -s),
    ]
    .iter()
    .fold(CMat::zeros(a.n(), a.n()), |acc, d| delta_mul(&acc, d));
    let power = n
        .checked_mul(n)
        .ok_or_else(|| Error::Argument(format!("n = {n} too large")))?;
    Ok(LimitPoint::new(
        level,
        from_delta(a.field(), delta_power(&step, power)),
    ))
}

/// `‖commutator_formula(x, y, n) − exp([x, y])‖_∞`.
pub fn commutator_error(sys: &SystemDescriptor, x: &LimitPoint, y: &LimitPoint, n: u64) -> Result<f64> {
    let (level, a, b) = promote_pair(sys, x, y, true)?;
    let target = expm(&bracket(&a, &b)?)?;
    let r = commutator_formula(sys, &LimitPoint::new(level, a), &LimitPoint::new(level, b), n)?;
    Ok(r.rep.as_matrix()?.dist(&target))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ladder {
    pub ns: Vec<u64>,
    pub errors: Vec<f64>,
}

impl Ladder {
    /// Each step does not increase the error, unless it is already below
    /// `plateau`.
    pub fn is_monotone(&self, plateau: f64) -> bool {
        self.errors.windows(2).all(|w| w[1] <= w[0] || w[1] <= plateau)
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }

    /// Least-squares slope of `log err` against `log n`, over points above
    /// `plateau`. `None` if fewer than two such points.
    pub fn loglog_slope(&self, plateau: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .ns
            .iter()
            .zip(&self.errors)
            .filter(|(_, &e)| e > plateau)
            .map(|(&n, &e)| ((n as f64).ln(), e.ln()))
            .collect();
        loglog_fit(&pts)
    }
}

pub(crate) fn loglog_fit(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `16, 32, …, 4096`-style doubling ladder.
pub fn doubling(from: u64, to: u64) -> Vec<u64> {
    std::iter::successors(Some(from.max(1)), |&n| n.checked_mul(2))
        .take_while(|&n| n <= to)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formula {
    Trotter,
    Commutator,
}

/// Error ladder of one formula, evaluated in parallel over `ns`.
pub fn ladder(
    sys: &SystemDescriptor,
    x: &LimitPoint,
    y: &LimitPoint,
    ns: &[u64],
    formula: Formula,
) -> Result<Ladder> {
    let errors = ns
        .par_iter()
        .map(|&n| match formula {
            Formula::Trotter => trotter_error(sys, x, y, n),
            Formula::Commutator => commutator_error(sys, x, y, n),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ladder {
        ns: ns.to_vec(),
        errors,
    })
}

/// The default test grid `{±2^{-k} : k = 0..10} ∪ {±1, ±2}`.
pub fn default_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (0..=10).map(|k| 2f64.powi(-k)).collect();
    g.push(2.0);
    let neg: Vec<f64> = g.iter().map(|t| -t).collect();
    g.extend(neg);
    g
}

/// A closed subgroup given by defining equations: `A` is a member iff every
/// entry of `residual(A)` has modulus at most `tol`.
type Residual<'a> = Box<dyn Fn(&Matrix) -> Result<Vec<f64>> + Send + Sync + 'a>;

pub struct Membership<'a> {
    residual: Residual<'a>,
    pub tol: f64,
}

impl<'a> Membership<'a> {
    pub fn new<F>(residual: F) -> Self
    where
        F: Fn(&Matrix) -> Result<Vec<f64>> + Send + Sync + 'a,
    {
        Self {
            residual: Box::new(residual),
            tol: 1e-8,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn residual(&self, a: &Matrix) -> Result<Vec<f64>> {
        (self.residual)(a)
    }

    pub fn contains(&self, a: &Matrix) -> Result<bool> {
        Ok(self
            .residual(a)?
            .iter()
            .all(|r| r.abs() <= self.tol * a.sup_norm().max(1.0)))
    }

    /// `AᵀA = I`.
    pub fn orthogonal() -> Self {
        Self::new(|a: &Matrix| {
            let r = a.transpose().mul(a)?.sub(&Matrix::identity(a.field(), a.n()))?;
            Ok(r.flatten())
        })
    }

    /// `A*A = I`.
    pub fn unitary() -> Self {
        Self::new(|a: &Matrix| {
            let r = a.adjoint().mul(a)?.sub(&Matrix::identity(a.field(), a.n()))?;
            Ok(r.flatten())
        })
    }

    /// `det A = 1`.
    pub fn special_linear() -> Self {
        Self::new(|a: &Matrix| {
            let d = a.det() - c(1.0);
            Ok(vec![d.re, d.im])
        })
    }

    pub fn everything() -> Self {
        Self::new(|_: &Matrix| Ok(Vec::new()))
    }
}

const JACOBIAN_STEP: f64 = 1e-6;
const TANGENT_TOL: f64 = 1e-6;

/// Basis of `{v : member(exp(t v)) for all t in grid}` inside `gl_n(field)`.
///
/// Candidates come from the kernel of the finite-difference Jacobian of the
/// defining equations at the identity; each candidate is then tested on the
/// grid (and on `i·t` for complex groups). Passing the grid certifies
/// membership only at the grid points.
pub fn subgroup_algebra(member: &Membership, field: Field, n: usize, grid: &[f64]) -> Result<Vec<Matrix>> {
    let id = Matrix::identity(field, n);
    if !member.contains(&id)? {
        return Err(Error::Contract("predicate fails at the identity".into()));
    }
    let real = match field {
        Field::Real => Ambient::real(n),
        Field::Complex => Ambient::real_form(n),
    };
    let frame = Frame::gl(real);
    let cols: Vec<Vec<f64>> = frame
        .basis()
        .iter()
        .map(|b| {
            let plus = member.residual(&expm(&b.scale(JACOBIAN_STEP))?)?;
            let minus = member.residual(&expm(&b.scale(-JACOBIAN_STEP))?)?;
            if plus.len() != minus.len() {
                return Err(Error::Contract("residual length varies".into()));
            }
            Ok(plus
                .iter()
                .zip(&minus)
                .map(|(p, m)| (p - m) / (2.0 * JACOBIAN_STEP))
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows = cols.first().map_or(0, Vec::len);
    let jac = crate::matrix::CMat::from_fn(rows, cols.len(), |i, j| c(cols[j][i]));
    let candidates: Vec<CVec> = if rows == 0 {
        (0..frame.dim())
            .map(|k| CVec::from_fn(frame.dim(), |i, _| c(if i == k { 1.0 } else { 0.0 })))
            .collect()
    } else {
        nullspace(&jac, Field::Real, TANGENT_TOL)
    };

    let passes = |v: &Matrix| -> Result<bool> {
        for &t in grid {
            if !member.contains(&expm(&v.scale(t))?)? {
                return Ok(false);
            }
            if field == Field::Complex
                && !member.contains(&expm(&v.scale_complex(Complex64::new(0.0, t)))?)?
            {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let out_amb = Ambient::new(n, field, field)?;
    let mut span = Orthonormal::new(out_amb.coord_len(), crate::span::PIVOT_TOL);
    let mut basis = Vec::new();
    for v in &candidates {
        let m = frame.combine(&v.map(|z| c(z.re)));
        if passes(&m)? && span.push(&out_amb.vectorize(&m)?) {
            basis.push(m);
        }
    }
    Ok(basis)
}

/// Element `(z, t)` of `ℂ^∞ ⋊_α ℝ` with `α(t)(z)_k = e^{ikt} z_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemidirectElement {
    #[serde(serialize_with = "ser_levelled")]
    pub z: LevelledVector,
    pub t: f64,
}

fn ser_levelled<S: serde::Serializer>(v: &LevelledVector, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.to_json().serialize(s)
}

/// `e^{iθ} − 1` without cancellation near multiples of `2π`.
fn expm1_i(theta: f64) -> Complex64 {
    let h = (0.5 * theta).sin();
    Complex64::new(-2.0 * h * h, theta.sin())
}

/// `α(t) z`.
pub fn rotate(z: &LevelledVector, t: f64) -> LevelledVector {
    let e = z
        .entries()
        .iter()
        .enumerate()
        .map(|(k, w)| w * Complex64::from_polar(1.0, (k + 1) as f64 * t))
        .collect();
    LevelledVector::new(Field::Complex, e).expect("complex entries")
}

fn to_complex(v: &LevelledVector) -> LevelledVector {
    LevelledVector::new(Field::Complex, v.entries().to_vec()).expect("complex entries")
}

impl SemidirectElement {
    pub fn new(z: LevelledVector, t: f64) -> Self {
        Self { z: to_complex(&z), t }
    }

    pub fn identity() -> Self {
        Self::new(LevelledVector::zeros(Field::Complex, 1), 0.0)
    }

    /// `(z, t)·(w, s) = (z + α(t)w, t + s)`.
    pub fn mul(&self, other: &Self) -> Self {
        let n = self.z.declared_level().max(other.z.declared_level());
        let a = self.z.embed(n).expect("promotion");
        let b = rotate(&other.z.embed(n).expect("promotion"), self.t);
        Self {
            z: a.add(&b).expect("same field"),
            t: self.t + other.t,
        }
    }

    pub fn inv(&self) -> Self {
        let z = rotate(&self.z, -self.t).scale(c(-1.0)).expect("scalar");
        Self { z, t: -self.t }
    }

    pub fn dist(&self, other: &Self) -> f64 {
        let n = self.z.declared_level().max(other.z.declared_level());
        let zd = (1..=n).fold(0.0f64, |acc, k| {
            acc.max((self.z.coeff(k) - other.z.coeff(k)).norm())
        });
        zd.max((self.t - other.t).abs())
    }
}

/// `β_k(s) = (e^{iks} − 1)/(iks)`, and `1` at `s = 0`.
pub fn beta(k: usize, s: f64) -> Complex64 {
    let theta = k as f64 * s;
    if theta == 0.0 {
        return c(1.0);
    }
    expm1_i(theta) / Complex64::new(0.0, theta)
}

/// Exponential of the algebra element `(v, s)`: `(β(s)·v, s)`.
pub fn semidirect_exp(v: &LevelledVector, s: f64) -> SemidirectElement {
    let z = v
        .entries()
        .iter()
        .enumerate()
        .map(|(k, w)| w * beta(k + 1, s))
        .collect();
    SemidirectElement {
        z: LevelledVector::new(Field::Complex, z).expect("complex entries"),
        t: s,
    }
}

/// Integrates the one-parameter subgroup `γ' = γ·(v, s)` over `[0, 1]` with
/// classical RK4. The `z`-equation is `z'(τ) = α(τ s) v`.
pub fn semidirect_exp_ode(v: &LevelledVector, s: f64, steps: usize) -> SemidirectElement {
    let h = 1.0 / steps as f64;
    let v = to_complex(v);
    let f = |tau: f64| rotate(&v, tau * s);
    let mut z = LevelledVector::zeros(Field::Complex, v.declared_level().max(1));
    for step in 0..steps {
        let tau = step as f64 * h;
        let k1 = f(tau);
        let k23 = f(tau + 0.5 * h);
        let k4 = f(tau + h);
        let incr = k1
            .add(&k23.scale(c(4.0)).expect("scalar"))
            .and_then(|a| a.add(&k4))
            .expect("same field")
            .scale(c(h / 6.0))
            .expect("scalar");
        z = z.add(&incr).expect("same field");
    }
    SemidirectElement { z, t: s }
}

/// RK4 step count resolving the fastest rotation `k·|s|` at `1e-8`.
pub fn ode_steps(v: &LevelledVector, s: f64) -> usize {
    let omega = v.declared_level() as f64 * s.abs();
    ((omega * 1e3).ceil() as usize).max(1000)
}

/// A non-injectivity witness: `exp(c·e_k, 2π/k) = (0, 2π/k)`.
pub fn period_witness(k: usize, coeff: Complex64) -> (LevelledVector, f64) {
    let mut e = vec![c(0.0); k];
    e[k - 1] = coeff;
    (
        LevelledVector::new(Field::Complex, e).expect("complex entries"),
        TAU / k as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirsys::limit_eq;
    use crate::dirsys::Element;
    use crate::rng::{substream, uniform_matrix};
    use proptest::prelude::*;

    fn gl(levels: usize) -> SystemDescriptor {
        SystemDescriptor::gl_block(Field::Real, (1..=levels).collect()).unwrap()
    }

    fn real(n: usize, xs: &[f64]) -> Matrix {
        Matrix::real(n, xs).unwrap()
    }

    #[test]
    fn group_arithmetic() {
        let s = gl(4);
        let a = LimitPoint::new(1, real(1, &[2.0]));
        let b = LimitPoint::new(2, real(2, &[3.0, 0.0, 0.0, 1.0]));
        let ab = group_op(&s, &a, &b).unwrap();
        assert_eq!(ab, LimitPoint::new(2, real(2, &[6.0, 0.0, 0.0, 1.0])));
        let e = group_op(&s, &b, &group_inv(&s, &b).unwrap()).unwrap();
        assert!(limit_eq(&s, &e, &identity(&s, 1).unwrap(), 4).unwrap());
        assert!(limit_eq(&s, &identity(&s, 4).unwrap(), &identity(&s, 1).unwrap(), 4).unwrap());
        let sing = LimitPoint::new(1, real(1, &[0.0]));
        assert!(matches!(group_op(&s, &sing, &a), Err(Error::Numeric(_))));
        assert!(matches!(group_inv(&s, &sing), Err(Error::Numeric(_))));
    }

    #[test]
    fn compaction() {
        let s = gl(4);
        let p = LimitPoint::new(4, real(1, &[2.0]).embed_group(4).unwrap());
        assert_eq!(compact(&s, &p).unwrap(), LimitPoint::new(1, real(1, &[2.0])));
        let q = LimitPoint::new(2, real(2, &[1.0, 1.0, 0.0, 1.0]));
        assert_eq!(compact(&s, &q).unwrap(), q);
    }

    #[test]
    fn exponential() {
        let s = gl(3);
        let zero = LimitPoint::new(2, Matrix::zeros(Field::Real, 2));
        assert_eq!(exp_limit(&s, &zero).unwrap(), identity(&s, 2).unwrap());
        let e12 = LimitPoint::new(2, Matrix::unit(Field::Real, 2, 0, 1));
        let ex = exp_limit(&s, &e12).unwrap();
        assert_eq!(ex.rep, Element::Matrix(real(2, &[1.0, 1.0, 0.0, 1.0])));

        let mut rng = substream(5, "exp");
        let x = uniform_matrix(&mut rng, Field::Real, 2, 1.0);
        let lifted = lift_algebra(&s, &LimitPoint::new(2, x.clone()), 3).unwrap();
        let a = exp_limit(&s, &lifted).unwrap();
        let b = s
            .lift(&exp_limit(&s, &LimitPoint::new(2, x)).unwrap(), 3)
            .unwrap();
        assert!(a.rep.dist(&b.rep) <= 1e-12);
    }

    #[test]
    fn trotter_examples() {
        let s = gl(2);
        let x = LimitPoint::new(2, Matrix::unit(Field::Real, 2, 0, 1));
        let y = LimitPoint::new(2, Matrix::unit(Field::Real, 2, 1, 0));
        let (ch, sh) = (1f64.cosh(), 1f64.sinh());
        let target = real(2, &[ch, sh, sh, ch]);
        let sum = x
            .rep
            .as_matrix()
            .unwrap()
            .add(y.rep.as_matrix().unwrap())
            .unwrap();
        assert!(expm(&sum).unwrap().dist(&target) < 1e-14);
        let l = ladder(&s, &x, &y, &doubling(16, 1024), Formula::Trotter).unwrap();
        assert!(l.is_strictly_decreasing());
        assert!(l.errors[l.errors.len() - 1] < l.errors[0] / 10.0);

        let d1 = LimitPoint::new(2, Matrix::diag(Field::Real, &[c(0.3), c(-0.2)]).unwrap());
        let d2 = LimitPoint::new(1, real(1, &[0.7]));
        for n in doubling(1, 4096) {
            assert!(trotter_error(&s, &d1, &d2, n).unwrap() <= 1e-12);
            assert!(trotter_error(&s, &x, &LimitPoint::new(1, real(1, &[0.0])), n).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn commutator_examples() {
        let s = gl(3);
        let x = LimitPoint::new(2, Matrix::unit(Field::Real, 2, 0, 1));
        let y = LimitPoint::new(2, Matrix::unit(Field::Real, 2, 1, 0));
        let l = ladder(&s, &x, &y, &doubling(8, 256), Formula::Commutator).unwrap();
        assert!(l.is_strictly_decreasing(), "{l:?}");
        assert!(l.errors[l.errors.len() - 1] < 1e-2);
        let r = commutator_formula(&s, &x, &y, 256).unwrap();
        let e = std::f64::consts::E;
        assert!(r.rep.as_matrix().unwrap().dist(&real(2, &[e, 0.0, 0.0, 1.0 / e])) < 1e-2);

        let x3 = LimitPoint::new(3, Matrix::unit(Field::Real, 3, 0, 1));
        let y3 = LimitPoint::new(3, Matrix::unit(Field::Real, 3, 0, 2));
        let r = commutator_formula(&s, &x3, &y3, 64).unwrap();
        assert!(r.rep.as_matrix().unwrap().dist(&Matrix::identity(Field::Real, 3)) <= 1e-10);
        let d = LimitPoint::new(1, real(1, &[0.5]));
        assert!(commutator_error(&s, &d, &d, 16).unwrap() <= 1e-12);
    }

    #[test]
    fn slope_fit() {
        let l = Ladder {
            ns: vec![1, 2, 4, 8],
            errors: vec![1.0, 0.5, 0.25, 0.125],
        };
        assert!((l.loglog_slope(0.0).unwrap() + 1.0).abs() < 1e-12);
        assert!(l.loglog_slope(0.3).is_some());
        assert!(l.loglog_slope(0.6).is_none());
        assert_eq!(doubling(16, 4096).len(), 9);
    }

    #[test]
    fn subgroup_algebras() {
        let grid = default_grid();
        let o3 = subgroup_algebra(&Membership::orthogonal(), Field::Real, 3, &grid).unwrap();
        assert_eq!(o3.len(), 3);
        for v in &o3 {
            assert!(v.add(&v.transpose()).unwrap().sup_norm() < 1e-8);
        }
        let sl2 = subgroup_algebra(&Membership::special_linear(), Field::Real, 2, &grid).unwrap();
        assert_eq!(sl2.len(), 3);
        for v in &sl2 {
            assert!(v.trace().norm() < 1e-8);
        }
        let all = subgroup_algebra(&Membership::everything(), Field::Real, 2, &grid).unwrap();
        assert_eq!(all.len(), 4);
        let all_c = subgroup_algebra(&Membership::everything(), Field::Complex, 2, &grid).unwrap();
        assert_eq!(all_c.len(), 4);
        // U(2) is not a complex subgroup: no direction survives i·t
        let u2 = subgroup_algebra(&Membership::unitary(), Field::Complex, 2, &grid).unwrap();
        assert!(u2.is_empty());
        let slc = subgroup_algebra(&Membership::special_linear(), Field::Complex, 2, &grid).unwrap();
        assert_eq!(slc.len(), 3);
        let never = Membership::new(|_: &Matrix| Ok(vec![1.0]));
        assert!(matches!(
            subgroup_algebra(&never, Field::Real, 2, &grid),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn grid_filter_rejects_non_subgroup_directions() {
        // first-order tangent is all of gl_1, but only t = 0 stays in the set
        let m = Membership::new(|a: &Matrix| {
            let x = a.get(0, 0).re - 1.0;
            Ok(vec![x * x])
        });
        let out = subgroup_algebra(&m, Field::Real, 1, &default_grid()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn semidirect_examples() {
        let v = LevelledVector::complex(&[c(1.0), Complex64::new(0.5, -1.0)]);
        assert_eq!(semidirect_exp(&v, 0.0), SemidirectElement::new(v.clone(), 0.0));
        for k in 1..=8 {
            for coeff in [c(1.0), c(2.0), Complex64::i()] {
                let mut e = vec![c(0.0); k];
                e[k - 1] = coeff;
                let w = LevelledVector::complex(&e);
                let g = semidirect_exp(&w, TAU);
                assert!(g.z.sup_norm() <= 1e-14, "k={k}: {:?}", g.z);
                assert_eq!(g.t, TAU);
                let (w, s) = period_witness(k, coeff);
                assert!(semidirect_exp(&w, s).z.sup_norm() <= 1e-14);
            }
        }
        for (s, k) in [(0.7, 3usize), (TAU, 2), (TAU / 3.0, 3), (-1.3, 4)] {
            let mut e = vec![c(0.0); k];
            e[k - 1] = Complex64::new(0.4, 0.9);
            e[0] = c(1.0);
            let w = LevelledVector::complex(&e);
            let a = semidirect_exp(&w, s);
            let b = semidirect_exp_ode(&w, s, ode_steps(&w, s));
            assert!(a.dist(&b) <= 1e-8, "{s} {k}: {}", a.dist(&b));
        }
    }

    #[test]
    fn semidirect_group_law() {
        let a = SemidirectElement::new(LevelledVector::complex(&[c(1.0)]), 0.3);
        let b = SemidirectElement::new(LevelledVector::complex(&[c(0.0), Complex64::i()]), -1.1);
        let e = SemidirectElement::identity();
        assert!(a.mul(&a.inv()).dist(&e) < 1e-15);
        assert!(a.mul(&e).dist(&a) == 0.0);
        // one-parameter subgroup property
        let v = LevelledVector::complex(&[c(1.0), c(-0.5)]);
        let x = semidirect_exp(&v.scale(c(0.3)).unwrap(), 0.3);
        let y = semidirect_exp(&v.scale(c(0.5)).unwrap(), 0.5);
        let xy = semidirect_exp(&v.scale(c(0.8)).unwrap(), 0.8);
        assert!(x.mul(&y).dist(&xy) < 1e-14);
        assert!(a.mul(&b).dist(&b.mul(&a)) > 1e-3);
    }

    fn elem() -> impl Strategy<Value = SemidirectElement> {
        (
            prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 1..5),
            -4.0..4.0f64,
        )
            .prop_map(|(z, t)| {
                let e: Vec<Complex64> = z.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
                SemidirectElement::new(LevelledVector::complex(&e), t)
            })
    }

    proptest! {
        #[test]
        fn semidirect_associative(a in elem(), b in elem(), c3 in elem()) {
            let l = a.mul(&b).mul(&c3);
            let r = a.mul(&b.mul(&c3));
            prop_assert!(l.dist(&r) <= 1e-13);
        }

        #[test]
        fn group_op_associative(seed in 0u64..1000) {
            let s = gl(4);
            let mut rng = substream(seed, "assoc");
            let pts: Vec<LimitPoint> = (0..3)
                .map(|k| {
                    let level = 1 + (seed as usize + k) % 4;
                    LimitPoint::new(level, expm(&uniform_matrix(&mut rng, Field::Real, level, 1.0)).unwrap())
                })
                .collect();
            let l = group_op(&s, &group_op(&s, &pts[0], &pts[1]).unwrap(), &pts[2]).unwrap();
            let r = group_op(&s, &pts[0], &group_op(&s, &pts[1], &pts[2]).unwrap()).unwrap();
            prop_assert!(l.rep.dist(&r.rep) <= 1e-10);
        }

        #[test]
        fn exp_inverse(seed in 0u64..1000) {
            let s = gl(3);
            let mut rng = substream(seed, "expinv");
            let x = uniform_matrix(&mut rng, Field::Real, 3, 1.0);
            let a = exp_limit(&s, &LimitPoint::new(3, x.clone())).unwrap();
            let b = exp_limit(&s, &LimitPoint::new(3, x.neg())).unwrap();
            let p = group_op(&s, &a, &b).unwrap();
            prop_assert!(p.rep.dist(&Element::Matrix(Matrix::identity(Field::Real, 3))) <= 1e-11);
        }
    }
}
