//! Finite-level matrix Lie theory: exponential and logarithm, brackets,
//! generated subalgebras with structure constants, derivatives of
//! homomorphisms, truncated Baker–Campbell–Hausdorff series and centers.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::matrix::{c, one_norm, spectral_norm, sup_norm, CMat};
use crate::span::{nullspace, Ambient, CVec, Frame, Orthonormal, PIVOT_TOL};
use crate::{Error, Field, Matrix, Result};

/// Scaled matrices have 1-norm at most this before the Taylor core runs.
pub const SCALING_THRESHOLD: f64 = 0.5;
/// Number of Taylor terms in the core approximation.
pub const TAYLOR_TERMS: u32 = 20;
/// `logm_near_identity` accepts `|A - I|_2` strictly below this radius.
pub const LOG_RADIUS: f64 = 0.5;
/// Central-difference step for derivatives at the identity.
pub const FD_STEP: f64 = 1e-5;
/// Highest supported BCH order.
pub const BCH_MAX_ORDER: usize = 6;

pub(crate) fn expm_data(a: &CMat) -> CMat {
    let n = a.nrows();
    let id = CMat::identity(n, n);
    if n == 0 {
        return id;
    }
    let norm = one_norm(a);
    let squarings = if norm > SCALING_THRESHOLD {
        (norm / SCALING_THRESHOLD).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * c(2f64.powi(-squarings));
    // Horner form of the truncated Taylor series
    let mut p = id.clone();
    for k in (1..=TAYLOR_TERMS).rev() {
        p = &id + (&scaled * &p) * c(1.0 / f64::from(k));
    }
    for _ in 0..squarings {
        p = &p * &p;
    }
    p
}

/// Matrix exponential by scaling and squaring around a 20-term Taylor core.
pub fn expm(a: &Matrix) -> Result<Matrix> {
    if !a.is_finite() {
        return Err(Error::Numeric("expm of a matrix with non-finite entries".into()));
    }
    Ok(Matrix::from_parts(a.field(), expm_data(a.data())))
}

/// `e^A − I` without forming `e^A`, accurate relative to `‖A‖` for small
/// `A`: the Taylor core omits the constant term and squaring runs as
/// `D ↦ 2D + D²`.
pub(crate) fn expm_minus_identity_data(a: &CMat) -> CMat {
    let n = a.nrows();
    let id = CMat::identity(n, n);
    let norm = one_norm(a);
    let squarings = if norm > SCALING_THRESHOLD {
        (norm / SCALING_THRESHOLD).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * c(2f64.powi(-squarings));
    // A (I + A/2 (I + A/3 (…)))
    let mut p = id.clone();
    for k in (2..=TAYLOR_TERMS).rev() {
        p = &id + (&scaled * &p) * c(1.0 / f64::from(k));
    }
    let mut d = &scaled * p;
    for _ in 0..squarings {
        d = &d * c(2.0) + &d * &d;
    }
    d
}

/// `e^A − I`; see [`expm`].
pub fn expm_minus_identity(a: &Matrix) -> Result<Matrix> {
    if !a.is_finite() {
        return Err(Error::Numeric("expm of a matrix with non-finite entries".into()));
    }
    Ok(Matrix::from_parts(a.field(), expm_minus_identity_data(a.data())))
}

pub(crate) fn logm_data(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    let id = CMat::identity(n, n);
    let dist = spectral_norm(&(a - &id));
    if !(dist < LOG_RADIUS) {
        return Err(Error::Domain(format!(
            "logm_near_identity needs |A - I| < {LOG_RADIUS}, got {dist:.3e}"
        )));
    }
    // log A = 2 artanh(Z) with Z = (A - I)(A + I)^-1, |Z| <= 1/3 here
    let inv = (a + &id)
        .try_inverse()
        .ok_or_else(|| Error::Numeric("A + I is singular".into()))?;
    let z = (a - &id) * inv;
    let z2 = &z * &z;
    let mut term = z.clone();
    let mut sum = z;
    for k in 1..200 {
        term = &term * &z2;
        let denom = f64::from(2 * k + 1);
        if sup_norm(&term) / denom < 1e-20 {
            break;
        }
        sum += &term * c(1.0 / denom);
    }
    Ok(sum * c(2.0))
}

/// Principal logarithm for matrices within [`LOG_RADIUS`] of the identity.
pub fn logm_near_identity(a: &Matrix) -> Result<Matrix> {
    if !a.is_finite() {
        return Err(Error::Numeric("logm of a matrix with non-finite entries".into()));
    }
    Ok(Matrix::from_parts(a.field(), logm_data(a.data())?))
}

pub fn bracket(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.mul(b)?.sub(&b.mul(a)?)
}

pub(crate) fn bracket_data(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// A finite-dimensional subalgebra of `gl_n` with structure constants
/// `[b_i, b_j] = Σ_k c_ij^k b_k`.
#[derive(Debug, Clone)]
pub struct SubalgebraBasis {
    frame: Frame,
    // structure[i][j] = coordinates of [b_i, b_j]
    structure: Vec<Vec<CVec>>,
    closure_residual: f64,
}

/// Tolerance on `|[b_i, b_j] - Σ c_ij^k b_k|` for a basis to count as
/// closed.
pub const CLOSURE_TOL: f64 = 1e-9;

impl SubalgebraBasis {
    /// Wraps an independent basis, rejecting it unless it is closed under the
    /// bracket.
    pub fn from_basis(ambient: Ambient, basis: Vec<Matrix>) -> Result<Self> {
        Self::from_basis_with_tol(ambient, basis, PIVOT_TOL)
    }

    pub fn from_basis_with_tol(ambient: Ambient, basis: Vec<Matrix>, tol: f64) -> Result<Self> {
        let frame = Frame::with_tol(ambient, basis, tol)?;
        let d = frame.dim();
        let zero = CVec::zeros(d);
        let mut structure = vec![vec![zero; d]; d];
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                let br = bracket(&frame.basis()[i], &frame.basis()[j])?;
                let (coords, resid) = frame.coords(&br)?;
                worst = worst.max(resid / br.sup_norm().max(1.0));
                structure[j][i] = -&coords;
                structure[i][j] = coords;
            }
        }
        if worst > CLOSURE_TOL {
            return Err(Error::Rejected(format!(
                "basis is not closed under the bracket (residual {worst:.3e})"
            )));
        }
        Ok(Self {
            frame,
            structure,
            closure_residual: worst,
        })
    }

    pub fn ambient(&self) -> Ambient {
        self.frame.ambient()
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn dim(&self) -> usize {
        self.frame.dim()
    }

    pub fn basis(&self) -> &[Matrix] {
        self.frame.basis()
    }

    /// `c_ij^k`.
    pub fn structure_constant(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.structure[i][j][k]
    }

    /// Coordinates of `[b_i, b_j]`.
    pub fn bracket_coords(&self, i: usize, j: usize) -> &CVec {
        &self.structure[i][j]
    }

    /// Bracket of two coordinate vectors computed from the structure
    /// constants.
    pub fn bracket_in_coords(&self, x: &CVec, y: &CVec) -> CVec {
        let d = self.dim();
        let mut out = CVec::zeros(d);
        for i in 0..d {
            if x[i] == c(0.0) {
                continue;
            }
            for j in 0..d {
                if y[j] == c(0.0) || i == j {
                    continue;
                }
                out.axpy(x[i] * y[j], &self.structure[i][j], c(1.0));
            }
        }
        out
    }

    pub fn closure_residual(&self) -> f64 {
        self.closure_residual
    }

    /// Largest Jacobi-identity defect over basis triples, in coordinates.
    pub fn jacobi_residual(&self) -> f64 {
        let d = self.dim();
        let e = |k: usize| {
            let mut v = CVec::zeros(d);
            v[k] = c(1.0);
            v
        };
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let (x, y, z) = (e(i), e(j), e(k));
                    let t1 = self.bracket_in_coords(&x, &self.bracket_in_coords(&y, &z));
                    let t2 = self.bracket_in_coords(&y, &self.bracket_in_coords(&z, &x));
                    let t3 = self.bracket_in_coords(&z, &self.bracket_in_coords(&x, &y));
                    let s = t1 + t2 + t3;
                    worst = worst.max(s.iter().fold(0.0, |a, z| a.max(z.norm())));
                }
            }
        }
        worst
    }

    pub fn coords(&self, m: &Matrix) -> Result<(CVec, f64)> {
        self.frame.coords(m)
    }

    pub fn contains(&self, m: &Matrix, tol: f64) -> bool {
        match self.coords(m) {
            Ok((_, resid)) => resid <= tol * m.sup_norm().max(1.0),
            Err(_) => false,
        }
    }

    pub fn element(&self, coeffs: &CVec) -> Matrix {
        self.frame.combine(coeffs)
    }

    /// Whether `self ⊆ other` (same ambient), with the worst residual.
    pub fn inclusion_residual(&self, other: &SubalgebraBasis) -> Result<f64> {
        let mut worst = 0.0f64;
        for b in self.basis() {
            let (_, r) = other.coords(b)?;
            worst = worst.max(r);
        }
        Ok(worst)
    }
}

/// Smallest subalgebra containing `gens`, found by closing the span under
/// brackets until it stabilises.
pub fn generated_subalgebra(gens: &[Matrix], ambient: Ambient, dim_cap: usize) -> Result<SubalgebraBasis> {
    generated_subalgebra_with_tol(gens, ambient, dim_cap, PIVOT_TOL)
}

pub fn generated_subalgebra_with_tol(
    gens: &[Matrix],
    ambient: Ambient,
    dim_cap: usize,
    tol: f64,
) -> Result<SubalgebraBasis> {
    let mut on = Orthonormal::new(ambient.coord_len(), tol);
    let mut basis: Vec<Matrix> = Vec::new();
    for g in gens {
        if on.push(&ambient.vectorize(g)?) {
            basis.push(g.clone());
            if basis.len() > dim_cap {
                return Err(Error::CapExceeded { cap: dim_cap });
            }
        }
    }
    let mut j = 0;
    while j < basis.len() {
        for i in 0..j {
            let br = bracket(&basis[i], &basis[j])?;
            if on.push(&ambient.vectorize(&br)?) {
                basis.push(br);
                if basis.len() > dim_cap {
                    return Err(Error::CapExceeded { cap: dim_cap });
                }
            }
        }
        j += 1;
    }
    SubalgebraBasis::from_basis_with_tol(ambient, basis, tol)
}

/// Terms `g^1 = g, g^{k+1} = [g, g^k]` of the lower central series, as
/// dimensions, stopping at zero or after `max_len` terms.
pub fn lower_central_series(b: &SubalgebraBasis, max_len: usize) -> Result<Vec<usize>> {
    let amb = b.ambient();
    let mut current: Vec<Matrix> = b.basis().to_vec();
    let mut dims = vec![current.len()];
    while !current.is_empty() && dims.len() < max_len {
        let mut on = Orthonormal::new(amb.coord_len(), PIVOT_TOL);
        let mut next = Vec::new();
        for x in b.basis() {
            for y in &current {
                let br = bracket(x, y)?;
                if on.push(&amb.vectorize(&br)?) {
                    next.push(br);
                }
            }
        }
        dims.push(next.len());
        current = next;
    }
    Ok(dims)
}

/// Nilpotency class (0 for the zero algebra), if it is at most `max_class`.
pub fn nilpotency_class(b: &SubalgebraBasis, max_class: usize) -> Result<Option<usize>> {
    let dims = lower_central_series(b, max_class + 2)?;
    Ok(dims.iter().position(|&d| d == 0).filter(|&c| c <= max_class))
}

/// Center `{x : [x, b_i] = 0 for all i}` of a subalgebra.
pub fn center(b: &SubalgebraBasis) -> Result<SubalgebraBasis> {
    let d = b.dim();
    let amb = b.ambient();
    if d == 0 {
        return SubalgebraBasis::from_basis(amb, Vec::new());
    }
    // rows (j, k), columns i: entry c_ij^k
    let mut m = CMat::zeros(d * d, d);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                m[(j * d + k, i)] = b.structure_constant(i, j, k);
            }
        }
    }
    let null = nullspace(&m, amb.scalars, PIVOT_TOL);
    let elems: Vec<Matrix> = null.iter().map(|v| b.element(v)).collect();
    SubalgebraBasis::from_basis(amb, elems)
}

/// Central-difference derivative at the identity of a group homomorphism,
/// as a matrix from `source` coordinates to `target` coordinates.
pub fn derivative_at_identity<F>(f: F, source: &Frame, target: &Frame) -> Result<CMat>
where
    F: Fn(&Matrix) -> Result<Matrix>,
{
    derivative_at_identity_with_step(f, source, target, FD_STEP)
}

pub fn derivative_at_identity_with_step<F>(f: F, source: &Frame, target: &Frame, h: f64) -> Result<CMat>
where
    F: Fn(&Matrix) -> Result<Matrix>,
{
    let src = source.ambient();
    let tgt = target.ambient();
    let fid = f(&Matrix::identity(src.field, src.n))?;
    if fid.dist(&Matrix::identity(tgt.field, tgt.n)) > 1e-10 {
        return Err(Error::Contract("homomorphism does not fix the identity".into()));
    }
    let mut out = CMat::zeros(target.dim(), source.dim());
    for (k, b) in source.basis().iter().enumerate() {
        let plus = logm_near_identity(&f(&expm(&b.scale(h))?)?)?;
        let minus = logm_near_identity(&f(&expm(&b.scale(-h))?)?)?;
        let d = plus.sub(&minus)?.scale(0.5 / h);
        let (coords, resid) = target.coords(&d)?;
        if resid > 1e-6 * d.sup_norm().max(1.0) {
            return Err(Error::Contract(format!(
                "derivative leaves the target algebra (residual {resid:.3e})"
            )));
        }
        out.set_column(k, &coords);
    }
    Ok(out)
}

/// `max |L[b_i, b_j] - [L b_i, L b_j]|` over basis pairs of `source`.
pub fn homomorphism_residual(map: &CMat, source: &SubalgebraBasis, target: &Frame) -> Result<f64> {
    let d = source.dim();
    let image = |v: &CVec| target.combine(&(map * v));
    let e = |k: usize| {
        let mut v = CVec::zeros(d);
        v[k] = c(1.0);
        v
    };
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            let lhs = image(source.bracket_coords(i, j));
            let rhs = bracket(&image(&e(i)), &image(&e(j)))?;
            worst = worst.max(lhs.dist(&rhs));
        }
    }
    Ok(worst)
}

// Dynkin's form of the BCH series: for each word in X (false) and Y (true),
// the coefficient of the right-nested bracket [w_1, [w_2, ..., w_m]].
fn dynkin_terms() -> &'static [(Vec<bool>, f64)] {
    static TERMS: OnceLock<Vec<(Vec<bool>, f64)>> = OnceLock::new();
    TERMS.get_or_init(|| {
        let mut acc: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
        let fact = |k: usize| (1..=k).map(|x| x as f64).product::<f64>();
        // depth-first over sequences of (r_i, s_i) blocks
        fn walk(
            blocks: &mut Vec<(usize, usize)>,
            degree: usize,
            acc: &mut BTreeMap<Vec<bool>, f64>,
            fact: &dyn Fn(usize) -> f64,
        ) {
            if degree > 0 {
                let n = blocks.len();
                let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
                let denom: f64 = blocks.iter().map(|&(r, s)| fact(r) * fact(s)).product();
                let coeff = sign / (n as f64) / denom / (degree as f64);
                let word: Vec<bool> = blocks
                    .iter()
                    .flat_map(|&(r, s)| std::iter::repeat_n(false, r).chain(std::iter::repeat_n(true, s)))
                    .collect();
                let m = word.len();
                let vanishes = m >= 2 && word[m - 1] == word[m - 2];
                if !vanishes {
                    *acc.entry(word).or_insert(0.0) += coeff;
                }
            }
            for r in 0..=(BCH_MAX_ORDER - degree) {
                for s in 0..=(BCH_MAX_ORDER - degree - r) {
                    if r + s == 0 {
                        continue;
                    }
                    blocks.push((r, s));
                    walk(blocks, degree + r + s, acc, fact);
                    blocks.pop();
                }
            }
        }
        walk(&mut Vec::new(), 0, &mut acc, &fact);
        acc.into_iter().filter(|(_, v)| v.abs() > 1e-15).collect()
    })
}

/// Truncated BCH series `log(exp x exp y)` through nested brackets of length
/// `order`. Exact when `x, y` generate a nilpotent algebra of class at most
/// `order`.
pub fn bch(x: &Matrix, y: &Matrix, order: usize) -> Result<Matrix> {
    if order == 0 || order > BCH_MAX_ORDER {
        return Err(Error::Unsupported(format!(
            "BCH order {order}; supported orders are 1..={BCH_MAX_ORDER}"
        )));
    }
    x.field().ensure_same(y.field())?;
    if x.n() != y.n() {
        return Err(Error::Dimension("bch operands differ in size".into()));
    }
    let (xd, yd) = (x.data(), y.data());
    let mut memo: BTreeMap<Vec<bool>, CMat> = BTreeMap::new();
    let mut total = CMat::zeros(x.n(), x.n());
    for (word, coeff) in dynkin_terms() {
        if word.len() > order {
            continue;
        }
        let nested = nested_bracket(word, xd, yd, &mut memo);
        total += nested * c(*coeff);
    }
    Ok(Matrix::from_parts(x.field(), total))
}

fn nested_bracket(word: &[bool], x: &CMat, y: &CMat, memo: &mut BTreeMap<Vec<bool>, CMat>) -> CMat {
    if let Some(m) = memo.get(word) {
        return m.clone();
    }
    let letter = |b: bool| if b { y } else { x };
    let out = if word.len() == 1 {
        letter(word[0]).clone()
    } else {
        let inner = nested_bracket(&word[1..], x, y, memo);
        bracket_data(letter(word[0]), &inner)
    };
    memo.insert(word.to_vec(), out.clone());
    out
}

/// `Ad(g) X = g X g^{-1}`.
pub fn adjoint_action(g: &Matrix, x: &Matrix) -> Result<Matrix> {
    g.mul(x)?.mul(&g.inverse()?)
}

/// Whether `m` is a real-field matrix; helper for callers choosing spans.
pub fn default_ambient(m: &Matrix) -> Ambient {
    match m.field() {
        Field::Real => Ambient::real(m.n()),
        Field::Complex => Ambient::complex(m.n()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, uniform_matrix};

    fn e(n: usize, i: usize, j: usize) -> Matrix {
        Matrix::unit(Field::Real, n, i - 1, j - 1)
    }

    #[test]
    fn expm_minus_identity_is_relative() {
        let a = Matrix::real(2, &[0.3, -1.2, 0.8, 0.1]).unwrap();
        let d = expm_minus_identity(&a).unwrap();
        assert!(
            d.add(&Matrix::identity(Field::Real, 2))
                .unwrap()
                .dist(&expm(&a).unwrap())
                <= 1e-14
        );
        // diag(ε, −ε): e^{±ε} − 1 to full relative precision
        let eps = 1e-13;
        let d = expm_minus_identity(&Matrix::real(2, &[eps, 0.0, 0.0, -eps]).unwrap()).unwrap();
        assert!((d.get(0, 0).re - eps.exp_m1()).abs() <= 1e-16 * eps);
        assert!((d.get(1, 1).re - (-eps).exp_m1()).abs() <= 1e-16 * eps);
        let big = Matrix::real(1, &[3.0]).unwrap();
        assert!((expm_minus_identity(&big).unwrap().get(0, 0).re - 3f64.exp_m1()).abs() <= 1e-13);
    }

    #[test]
    fn expm_basics() {
        let z = Matrix::zeros(Field::Real, 3);
        assert_eq!(expm(&z).unwrap(), Matrix::identity(Field::Real, 3));
        let n = e(2, 1, 2);
        let en = expm(&n).unwrap();
        assert!(en.dist(&Matrix::identity(Field::Real, 2).add(&n).unwrap()) == 0.0);
    }

    #[test]
    fn expm_rotation_closed_form() {
        let th = std::f64::consts::FRAC_PI_3;
        let j = Matrix::real(2, &[0.0, -th, th, 0.0]).unwrap();
        let r = expm(&j).unwrap();
        let want = Matrix::real(2, &[th.cos(), -th.sin(), th.sin(), th.cos()]).unwrap();
        assert!(r.dist(&want) < 1e-15);
    }

    #[test]
    fn expm_large_norm_relative_accuracy() {
        // diagonal with entries up to 10: compare with scalar exponentials
        let d = [10.0, -7.5, 3.25];
        let a = Matrix::diag(Field::Real, &d.map(c)).unwrap();
        let ea = expm(&a).unwrap();
        for (k, x) in d.iter().enumerate() {
            let rel = (ea.get(k, k).re - x.exp()).abs() / x.exp();
            assert!(rel < 1e-12, "relative error {rel}");
        }
        // rotation generator of norm 10 against cos/sin
        let th = 10.0;
        let j = Matrix::real(2, &[0.0, -th, th, 0.0]).unwrap();
        let want = Matrix::real(2, &[th.cos(), -th.sin(), th.sin(), th.cos()]).unwrap();
        assert!(expm(&j).unwrap().dist(&want) < 1e-12);
    }

    #[test]
    fn expm_rejects_non_finite() {
        let a = Matrix::real(1, &[f64::NAN]).unwrap();
        assert!(matches!(expm(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn expm_inverse_pairs() {
        let mut rng = substream(3, "expm-inverse");
        for field in [Field::Real, Field::Complex] {
            for _ in 0..20 {
                let a = uniform_matrix(&mut rng, field, 3, 5.0 / 3.0);
                let p = expm(&a).unwrap().mul(&expm(&a.neg()).unwrap()).unwrap();
                // inverse pair error scales with the condition of exp(A)
                assert!(p.dist(&Matrix::identity(field, 3)) < 1e-11 * 1e2);
            }
        }
    }

    #[test]
    fn logm_cases() {
        let id = Matrix::identity(Field::Real, 3);
        assert_eq!(logm_near_identity(&id).unwrap(), Matrix::zeros(Field::Real, 3));
        let n = e(2, 1, 2);
        let a = Matrix::identity(Field::Real, 2).add(&n).unwrap();
        // |E12|_2 = 1 exceeds the radius
        assert!(matches!(logm_near_identity(&a), Err(Error::Domain(_))));
        let small = Matrix::identity(Field::Real, 2).add(&n.scale(0.4)).unwrap();
        assert!(logm_near_identity(&small).unwrap().dist(&n.scale(0.4)) < 1e-16);
    }

    #[test]
    fn logm_round_trip() {
        let mut rng = substream(5, "logm");
        for field in [Field::Real, Field::Complex] {
            for _ in 0..50 {
                let x = uniform_matrix(&mut rng, field, 3, 0.2 / 3.0);
                let back = logm_near_identity(&expm(&x).unwrap()).unwrap();
                assert!(back.dist(&x) < 1e-14);
                let a = expm(&x).unwrap();
                let again = expm(&logm_near_identity(&a).unwrap()).unwrap();
                assert!(again.dist(&a) < 1e-10);
            }
        }
    }

    #[test]
    fn bracket_examples() {
        let a = e(2, 1, 2);
        assert_eq!(bracket(&a, &a).unwrap(), Matrix::zeros(Field::Real, 2));
        let h = bracket(&e(2, 1, 2), &e(2, 2, 1)).unwrap();
        assert_eq!(h, e(2, 1, 1).sub(&e(2, 2, 2)).unwrap());
        assert_eq!(bracket(&e(3, 1, 2), &e(3, 2, 3)).unwrap(), e(3, 1, 3));
        assert!(matches!(
            bracket(&e(2, 1, 2), &e(3, 1, 2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn generated_subalgebra_examples() {
        let g = generated_subalgebra(&[], Ambient::real(3), 10).unwrap();
        assert_eq!(g.dim(), 0);
        let heis = generated_subalgebra(&[e(3, 1, 2), e(3, 2, 3)], Ambient::real(3), 10).unwrap();
        assert_eq!(heis.dim(), 3);
        assert!(heis.contains(&e(3, 1, 3), 1e-12));
        let sl2 = generated_subalgebra(&[e(2, 1, 2), e(2, 2, 1)], Ambient::real(2), 10).unwrap();
        assert_eq!(sl2.dim(), 3);
        assert!(!sl2.contains(&Matrix::identity(Field::Real, 2), 1e-9));
        assert!(sl2.jacobi_residual() < 1e-8);
        assert!(matches!(
            generated_subalgebra(&[e(2, 1, 2), e(2, 2, 1)], Ambient::real(2), 2),
            Err(Error::CapExceeded { cap: 2 })
        ));
    }

    #[test]
    fn generated_subalgebra_is_idempotent() {
        let sl2 = generated_subalgebra(&[e(2, 1, 2), e(2, 2, 1)], Ambient::real(2), 10).unwrap();
        let again = generated_subalgebra(sl2.basis(), Ambient::real(2), 10).unwrap();
        assert_eq!(again.dim(), sl2.dim());
        assert!(again.inclusion_residual(&sl2).unwrap() < 1e-12);
    }

    #[test]
    fn structure_constants_antisymmetric() {
        let sl2 = generated_subalgebra(&[e(2, 1, 2), e(2, 2, 1)], Ambient::real(2), 10).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    assert_eq!(sl2.structure_constant(i, j, k), -sl2.structure_constant(j, i, k));
                }
            }
        }
    }

    #[test]
    fn from_basis_rejects_non_closed() {
        let r = SubalgebraBasis::from_basis(Ambient::real(2), vec![e(2, 1, 2), e(2, 2, 1)]);
        assert!(matches!(r, Err(Error::Rejected(_))));
    }

    #[test]
    fn centers() {
        let ab = generated_subalgebra(&[e(3, 1, 1), e(3, 2, 2)], Ambient::real(3), 10).unwrap();
        assert_eq!(center(&ab).unwrap().dim(), 2);
        let heis = generated_subalgebra(&[e(3, 1, 2), e(3, 2, 3)], Ambient::real(3), 10).unwrap();
        let z = center(&heis).unwrap();
        assert_eq!(z.dim(), 1);
        assert!(z.contains(&e(3, 1, 3), 1e-10));
        let sl2 = generated_subalgebra(&[e(2, 1, 2), e(2, 2, 1)], Ambient::real(2), 10).unwrap();
        assert_eq!(center(&sl2).unwrap().dim(), 0);
    }

    #[test]
    fn nilpotency() {
        let heis = generated_subalgebra(&[e(3, 1, 2), e(3, 2, 3)], Ambient::real(3), 10).unwrap();
        assert_eq!(nilpotency_class(&heis, 6).unwrap(), Some(2));
        let n4 = generated_subalgebra(&[e(4, 1, 2), e(4, 2, 3), e(4, 3, 4)], Ambient::real(4), 10).unwrap();
        assert_eq!(nilpotency_class(&n4, 6).unwrap(), Some(3));
        let sl2 = generated_subalgebra(&[e(2, 1, 2), e(2, 2, 1)], Ambient::real(2), 10).unwrap();
        assert_eq!(nilpotency_class(&sl2, 6).unwrap(), None);
    }

    #[test]
    fn bch_examples() {
        let x = e(3, 1, 2);
        let y = e(3, 2, 3);
        let z = Matrix::zeros(Field::Real, 3);
        assert_eq!(bch(&x, &z, 3).unwrap(), x);
        let b = bch(&x, &y, 2).unwrap();
        let want = x.add(&y).unwrap().add(&e(3, 1, 3).scale(0.5)).unwrap();
        assert!(b.dist(&want) < 1e-15);
        let lhs = expm(&b).unwrap();
        let rhs = expm(&x).unwrap().mul(&expm(&y).unwrap()).unwrap();
        assert!(lhs.dist(&rhs) < 1e-12);
        let d1 = Matrix::diag(Field::Real, &[c(0.3), c(-1.0)]).unwrap();
        let d2 = Matrix::diag(Field::Real, &[c(2.0), c(0.5)]).unwrap();
        for order in 1..=6 {
            assert!(bch(&d1, &d2, order).unwrap().dist(&d1.add(&d2).unwrap()) < 1e-15);
        }
        assert!(matches!(bch(&x, &y, 7), Err(Error::Unsupported(_))));
    }

    #[test]
    fn bch_low_order_coefficients() {
        // degree-3 part is [X,[X,Y]]/12 - [Y,[X,Y]]/12
        let mut rng = substream(11, "bch3");
        let x = uniform_matrix(&mut rng, Field::Real, 3, 1.0);
        let y = uniform_matrix(&mut rng, Field::Real, 3, 1.0);
        let xy = bracket(&x, &y).unwrap();
        let want = bracket(&x, &xy)
            .unwrap()
            .scale(1.0 / 12.0)
            .sub(&bracket(&y, &xy).unwrap().scale(1.0 / 12.0))
            .unwrap();
        let got = bch(&x, &y, 3).unwrap().sub(&bch(&x, &y, 2).unwrap()).unwrap();
        assert!(got.dist(&want) < 1e-14);
        // degree-4 part is -[Y,[X,[X,Y]]]/24
        let want4 = bracket(&y, &bracket(&x, &xy).unwrap())
            .unwrap()
            .scale(-1.0 / 24.0);
        let got4 = bch(&x, &y, 4).unwrap().sub(&bch(&x, &y, 3).unwrap()).unwrap();
        assert!(got4.dist(&want4) < 1e-14);
    }

    #[test]
    fn bch_converges_to_log_of_product() {
        // truncation error of order |x|^{order+1}
        let mut rng = substream(12, "bch-log");
        let x = uniform_matrix(&mut rng, Field::Real, 3, 0.05);
        let y = uniform_matrix(&mut rng, Field::Real, 3, 0.05);
        let exact = logm_near_identity(&expm(&x).unwrap().mul(&expm(&y).unwrap()).unwrap()).unwrap();
        let errs: Vec<f64> = (1..=6).map(|o| bch(&x, &y, o).unwrap().dist(&exact)).collect();
        assert!(errs[5] < 5e-11, "order 6 error {}", errs[5]);
        for w in errs.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn derivative_of_det_is_trace() {
        let src = Frame::gl(Ambient::real(2));
        let tgt = Frame::gl(Ambient::real(1));
        let det = |a: &Matrix| Matrix::real(1, &[a.det().re]);
        let l = derivative_at_identity(det, &src, &tgt).unwrap();
        let want = [1.0, 0.0, 0.0, 1.0];
        for k in 0..4 {
            assert!((l[(0, k)].re - want[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_of_identity_and_conjugation() {
        let src = Frame::gl(Ambient::real(2));
        let l = derivative_at_identity(|a: &Matrix| Ok(a.clone()), &src, &src).unwrap();
        assert!(sup_norm(&(l - CMat::identity(4, 4))) < 1e-9);

        let g = Matrix::real(2, &[1.0, 2.0, 0.5, 3.0]).unwrap();
        let conj = |a: &Matrix| adjoint_action(&g, a);
        let l = derivative_at_identity(conj, &src, &src).unwrap();
        for (k, b) in src.basis().iter().enumerate() {
            let want = adjoint_action(&g, b).unwrap();
            let got = src.combine(&l.column(k).into_owned());
            assert!(got.dist(&want) < 1e-8);
        }
    }

    #[test]
    fn derivative_requires_identity_preservation() {
        let src = Frame::gl(Ambient::real(1));
        let shift = |a: &Matrix| Ok(a.scale(2.0));
        assert!(matches!(
            derivative_at_identity(shift, &src, &src),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn derivative_chain_rule() {
        let src = Frame::gl(Ambient::real(2));
        let g = Matrix::real(2, &[2.0, 1.0, 1.0, 1.0]).unwrap();
        let h = Matrix::real(2, &[1.0, -1.0, 0.0, 1.0]).unwrap();
        let f1 = |a: &Matrix| adjoint_action(&g, a);
        let f2 = |a: &Matrix| adjoint_action(&h, a);
        let comp = |a: &Matrix| adjoint_action(&h, &adjoint_action(&g, a)?);
        let l1 = derivative_at_identity(f1, &src, &src).unwrap();
        let l2 = derivative_at_identity(f2, &src, &src).unwrap();
        let l = derivative_at_identity(comp, &src, &src).unwrap();
        assert!(sup_norm(&(l - l2 * l1)) < 1e-5);
    }

    #[test]
    fn homomorphism_residual_of_derivative() {
        let sl2 = generated_subalgebra(&[e(2, 1, 2), e(2, 2, 1)], Ambient::real(2), 10).unwrap();
        let g = Matrix::real(2, &[1.0, 1.0, 0.0, 1.0]).unwrap();
        let tgt = Frame::gl(Ambient::real(2));
        let l = derivative_at_identity(|a: &Matrix| adjoint_action(&g, a), sl2.frame(), &tgt).unwrap();
        assert!(homomorphism_residual(&l, &sl2, &tgt).unwrap() < 1e-6);
    }
}
