//! Integration of locally finite Lie algebras given by ascending
//! filtrations of matrix subalgebras.
//!
//! Two group carriers are supported per level: the algebra itself with the
//! BCH product (nilpotent levels of class at most [`BCH_MAX_ORDER`]), and the
//! matrix group generated by exponentials in the ambient presentation.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::dirsys::{ObjectKind, SystemDescriptor};
use crate::matrix::{c, CMat};
use crate::mlie::{
    bch, expm, generated_subalgebra, logm_near_identity, nilpotency_class, SubalgebraBasis, BCH_MAX_ORDER,
    CLOSURE_TOL, FD_STEP,
};
use crate::rng::substream;
use crate::span::{intersect, Ambient, CVec, Frame, Orthonormal, PIVOT_TOL};
use crate::{Error, Field, Matrix, Result};

/// Nesting residual allowed between consecutive filtration levels.
pub const NESTING_TOL: f64 = 1e-9;
/// Allowed deviation of a bonding derivative from the inclusion map.
pub const BONDING_TOL: f64 = 1e-6;
/// Allowed image mismatch for words with equal source products.
pub const WELL_DEFINED_TOL: f64 = 1e-7;
/// Distance below which two source products count as equal.
pub const WORD_EQ_TOL: f64 = 1e-10;

/// Ascending subalgebras `𝔤_1 ⊆ 𝔤_2 ⊆ …` of a common `gl_n`.
#[derive(Debug, Clone)]
pub struct Filtration {
    ambient: Ambient,
    generators: Vec<Matrix>,
    depths: Vec<usize>,
    levels: Vec<SubalgebraBasis>,
    nesting_residual: f64,
}

/// `𝔤_k` is generated by the first `depths[k]` generators.
pub fn build_filtration(
    generators: &[Matrix],
    depths: &[usize],
    ambient: Ambient,
    dim_cap: usize,
) -> Result<Filtration> {
    if generators.is_empty() {
        return Err(Error::Argument(
            "a filtration needs at least one generator".into(),
        ));
    }
    if depths.is_empty() {
        return Err(Error::Argument("a filtration needs at least one level".into()));
    }
    for (k, &d) in depths.iter().enumerate() {
        if d == 0 || d > generators.len() {
            return Err(Error::Argument(format!(
                "depth {d} at level {} outside 1..={}",
                k + 1,
                generators.len()
            )));
        }
        if k > 0 && d < depths[k - 1] {
            return Err(Error::Argument("depths must be non-decreasing".into()));
        }
    }
    for g in generators {
        ambient.check(g)?;
    }
    let levels = depths
        .iter()
        .map(|&d| generated_subalgebra(&generators[..d], ambient, dim_cap))
        .collect::<Result<Vec<_>>>()?;
    let mut nesting_residual = 0.0f64;
    for w in levels.windows(2) {
        let r = w[0].inclusion_residual(&w[1])?;
        if r > NESTING_TOL {
            return Err(Error::Construction(format!(
                "filtration levels are not nested (residual {r:.3e})"
            )));
        }
        nesting_residual = nesting_residual.max(r);
    }
    Ok(Filtration {
        ambient,
        generators: generators.to_vec(),
        depths: depths.to_vec(),
        levels,
        nesting_residual,
    })
}

impl Filtration {
    pub fn ambient(&self) -> Ambient {
        self.ambient
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn generators(&self) -> &[Matrix] {
        &self.generators
    }

    pub fn depths(&self) -> &[usize] {
        &self.depths
    }

    pub fn dims(&self) -> Vec<usize> {
        self.levels.iter().map(SubalgebraBasis::dim).collect()
    }

    /// One-based.
    pub fn level(&self, k: usize) -> Result<&SubalgebraBasis> {
        self.levels
            .get(k.wrapping_sub(1))
            .ok_or_else(|| Error::Argument(format!("level {k} outside 1..={}", self.depth())))
    }

    pub fn nesting_residual(&self) -> f64 {
        self.nesting_residual
    }

    /// Coordinates of the level-`n` basis in the level-`m` basis.
    pub fn inclusion(&self, m: usize, n: usize) -> Result<CMat> {
        if m < n {
            return Err(Error::Level {
                requested: m,
                current: n,
            });
        }
        let (src, tgt) = (self.level(n)?, self.level(m)?);
        let mut out = CMat::zeros(tgt.dim(), src.dim());
        for (k, b) in src.basis().iter().enumerate() {
            out.set_column(k, &tgt.coords(b)?.0);
        }
        Ok(out)
    }

    /// `{"generators": [matrix…], "depths": […], "field": "R"|"C",
    /// "scalars": "R"|"C", "dim_cap": n}`; generators may be bare row
    /// arrays.
    pub fn from_json(v: &Value) -> Result<Self> {
        let field: Field = match v.get("field") {
            Some(f) => serde_json::from_value(f.clone())?,
            None => Field::Real,
        };
        let scalars: Field = match v.get("scalars") {
            Some(f) => serde_json::from_value(f.clone())?,
            None => field,
        };
        let gens = v
            .get("generators")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Argument("filtration JSON needs \"generators\"".into()))?
            .iter()
            .map(|g| {
                if g.is_array() {
                    Matrix::from_json(&serde_json::json!({ "field": field, "rows": g }))
                } else {
                    Matrix::from_json(g)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let n = gens
            .first()
            .map(Matrix::n)
            .ok_or_else(|| Error::Argument("a filtration needs at least one generator".into()))?;
        if let Some(declared) = v.get("ambient").and_then(Value::as_u64) {
            if declared as usize != n {
                return Err(Error::Dimension(format!(
                    "ambient {declared} but generators are {n}x{n}"
                )));
            }
        }
        let depths: Vec<usize> = match v.get("depths") {
            Some(d) => serde_json::from_value(d.clone())?,
            None => (1..=gens.len()).collect(),
        };
        let cap = v
            .get("dim_cap")
            .and_then(Value::as_u64)
            .map_or(n * n * 2, |c| c as usize);
        build_filtration(&gens, &depths, Ambient::new(n, field, scalars)?, cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    NilpotentBch,
    MatrixRepresentation,
}

/// An element of a level carrier.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupPoint {
    /// Coordinates in the level basis (BCH carrier).
    Coords(CVec),
    Matrix(Matrix),
}

impl GroupPoint {
    pub fn dist(&self, other: &GroupPoint) -> f64 {
        match (self, other) {
            (GroupPoint::Coords(a), GroupPoint::Coords(b)) if a.len() == b.len() => {
                (a - b).iter().fold(0.0, |m, z| m.max(z.norm()))
            }
            (GroupPoint::Matrix(a), GroupPoint::Matrix(b)) => a.dist(b),
            _ => f64::INFINITY,
        }
    }
}

/// Group carriers over a filtration, with bondings induced by inclusion.
#[derive(Debug, Clone)]
pub struct IntegratedGroup {
    backend: Backend,
    filtration: Filtration,
    classes: Vec<Option<usize>>,
}

pub fn integrate_algebra(filtration: &Filtration, backend: Backend) -> Result<IntegratedGroup> {
    let classes = filtration
        .levels
        .iter()
        .map(|b| nilpotency_class(b, BCH_MAX_ORDER))
        .collect::<Result<Vec<_>>>()?;
    if backend == Backend::NilpotentBch && classes.iter().any(Option::is_none) {
        return Err(Error::NotNilpotent {
            max_class: BCH_MAX_ORDER,
        });
    }
    Ok(IntegratedGroup {
        backend,
        filtration: filtration.clone(),
        classes,
    })
}

fn random_coords<R: Rng + ?Sized>(rng: &mut R, d: usize, scalars: Field, r: f64) -> CVec {
    CVec::from_fn(d, |_, _| match scalars {
        Field::Real => c(rng.random_range(-r..=r)),
        Field::Complex => Complex64::new(rng.random_range(-r..=r), rng.random_range(-r..=r)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegrationSummary {
    pub backend: Backend,
    pub dims: Vec<usize>,
    pub nilpotency_classes: Vec<Option<usize>>,
    pub nesting_residual: f64,
    pub closure_residual: f64,
    pub jacobi_residual: f64,
    pub associativity_residual: f64,
    pub bonding_residual: f64,
    pub passed: bool,
}

impl IntegratedGroup {
    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn filtration(&self) -> &Filtration {
        &self.filtration
    }

    pub fn depth(&self) -> usize {
        self.filtration.depth()
    }

    pub fn dim(&self, level: usize) -> Result<usize> {
        Ok(self.filtration.level(level)?.dim())
    }

    pub fn nilpotency_classes(&self) -> &[Option<usize>] {
        &self.classes
    }

    fn scalars(&self) -> Field {
        self.filtration.ambient.scalars
    }

    fn check_coords(&self, level: usize, v: &CVec) -> Result<()> {
        let d = self.dim(level)?;
        if v.len() != d {
            return Err(Error::Dimension(format!(
                "{} coordinates at level {level} of dimension {d}",
                v.len()
            )));
        }
        Ok(())
    }

    fn order(&self, level: usize) -> usize {
        self.classes[level - 1].unwrap_or(BCH_MAX_ORDER).max(1)
    }

    pub fn identity(&self, level: usize) -> Result<GroupPoint> {
        self.exp(level, &CVec::zeros(self.dim(level)?))
    }

    pub fn exp(&self, level: usize, v: &CVec) -> Result<GroupPoint> {
        self.check_coords(level, v)?;
        match self.backend {
            Backend::NilpotentBch => Ok(GroupPoint::Coords(v.clone())),
            Backend::MatrixRepresentation => Ok(GroupPoint::Matrix(expm(
                &self.filtration.level(level)?.element(v),
            )?)),
        }
    }

    /// Coordinates of the logarithm; for matrix carriers only near the
    /// identity.
    pub fn log(&self, level: usize, g: &GroupPoint) -> Result<CVec> {
        let b = self.filtration.level(level)?;
        match g {
            GroupPoint::Coords(v) => {
                self.check_coords(level, v)?;
                Ok(v.clone())
            }
            GroupPoint::Matrix(m) => {
                let l = logm_near_identity(m)?;
                let (coords, resid) = b.coords(&l)?;
                if resid > 1e-8 * l.sup_norm().max(1.0) {
                    return Err(Error::Domain(format!(
                        "logarithm leaves the level-{level} algebra (residual {resid:.3e})"
                    )));
                }
                Ok(coords)
            }
        }
    }

    pub fn mul(&self, level: usize, a: &GroupPoint, b: &GroupPoint) -> Result<GroupPoint> {
        match (a, b) {
            (GroupPoint::Coords(x), GroupPoint::Coords(y)) => {
                self.check_coords(level, x)?;
                self.check_coords(level, y)?;
                let basis = self.filtration.level(level)?;
                let z = bch(&basis.element(x), &basis.element(y), self.order(level))?;
                Ok(GroupPoint::Coords(basis.coords(&z)?.0))
            }
            (GroupPoint::Matrix(x), GroupPoint::Matrix(y)) => Ok(GroupPoint::Matrix(x.mul(y)?)),
            _ => Err(Error::Argument("carrier elements of different backends".into())),
        }
    }

    pub fn inv(&self, level: usize, a: &GroupPoint) -> Result<GroupPoint> {
        match a {
            GroupPoint::Coords(x) => {
                self.check_coords(level, x)?;
                Ok(GroupPoint::Coords(-x))
            }
            GroupPoint::Matrix(m) => Ok(GroupPoint::Matrix(m.inverse()?)),
        }
    }

    /// Bonding from level `n` to level `m ≥ n` induced by the inclusion.
    pub fn bond(&self, m: usize, n: usize, a: &GroupPoint) -> Result<GroupPoint> {
        match a {
            GroupPoint::Coords(x) => {
                self.check_coords(n, x)?;
                Ok(GroupPoint::Coords(self.filtration.inclusion(m, n)? * x))
            }
            GroupPoint::Matrix(g) => {
                self.filtration.level(m)?;
                if m < n {
                    return Err(Error::Level {
                        requested: m,
                        current: n,
                    });
                }
                Ok(GroupPoint::Matrix(g.clone()))
            }
        }
    }

    /// `exp(x_1) ⋯ exp(x_r)` at `level`.
    pub fn word_product(&self, level: usize, word: &[CVec]) -> Result<GroupPoint> {
        let mut acc = self.identity(level)?;
        for x in word {
            acc = self.mul(level, &acc, &self.exp(level, x)?)?;
        }
        Ok(acc)
    }

    /// `max |(ab)c − a(bc)|` over random triples at every level.
    pub fn associativity_residual(&self, samples: usize, seed: u64) -> Result<f64> {
        let per_level = (1..=self.depth())
            .into_par_iter()
            .map(|level| {
                let mut rng = substream(seed, &format!("liethird/assoc/{level}"));
                let d = self.dim(level)?;
                let mut worst = 0.0f64;
                for _ in 0..samples {
                    let [a, b, cc] = [0, 1, 2].map(|_| random_coords(&mut rng, d, self.scalars(), 0.5));
                    let (a, b, cc) = (self.exp(level, &a)?, self.exp(level, &b)?, self.exp(level, &cc)?);
                    let l = self.mul(level, &self.mul(level, &a, &b)?, &cc)?;
                    let r = self.mul(level, &a, &self.mul(level, &b, &cc)?)?;
                    worst = worst.max(l.dist(&r));
                }
                Ok(worst)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(per_level.into_iter().fold(0.0, f64::max))
    }

    /// `max |L(bond_{m,n}) − inclusion_{m,n}|` over all pairs `m ≥ n`, with
    /// the derivative taken by central differences of `log ∘ bond ∘ exp`.
    pub fn bonding_residual(&self) -> Result<f64> {
        let pairs: Vec<(usize, usize)> = (1..=self.depth())
            .flat_map(|n| (n..=self.depth()).map(move |m| (m, n)))
            .collect();
        let per_pair = pairs
            .into_par_iter()
            .map(|(m, n)| {
                let incl = self.filtration.inclusion(m, n)?;
                let d = self.dim(n)?;
                let mut worst = 0.0f64;
                for k in 0..d {
                    let mut e = CVec::zeros(d);
                    e[k] = c(FD_STEP);
                    let plus = self.log(m, &self.bond(m, n, &self.exp(n, &e)?)?)?;
                    let minus = self.log(m, &self.bond(m, n, &self.exp(n, &-&e)?)?)?;
                    let fd = (plus - minus) * c(0.5 / FD_STEP);
                    let want = incl.column(k);
                    worst = worst.max((fd - want).iter().fold(0.0, |a, z| a.max(z.norm())));
                }
                Ok(worst)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(per_pair.into_iter().fold(0.0, f64::max))
    }

    pub fn summary(&self, samples: usize, seed: u64) -> Result<IntegrationSummary> {
        let associativity_residual = self.associativity_residual(samples, seed)?;
        let bonding_residual = self.bonding_residual()?;
        let assoc_tol = match self.backend {
            Backend::NilpotentBch => 1e-12,
            Backend::MatrixRepresentation => 1e-9,
        };
        let levels = &self.filtration.levels;
        let closure_residual = levels
            .iter()
            .map(SubalgebraBasis::closure_residual)
            .fold(0.0, f64::max);
        let jacobi_residual = levels
            .iter()
            .map(SubalgebraBasis::jacobi_residual)
            .fold(0.0, f64::max);
        Ok(IntegrationSummary {
            backend: self.backend,
            dims: self.filtration.dims(),
            nilpotency_classes: self.classes.clone(),
            nesting_residual: self.filtration.nesting_residual,
            closure_residual,
            jacobi_residual,
            associativity_residual,
            bonding_residual,
            passed: closure_residual <= CLOSURE_TOL
                && jacobi_residual <= CLOSURE_TOL
                && associativity_residual <= assoc_tol
                && bonding_residual <= BONDING_TOL,
        })
    }

    fn top(&self) -> usize {
        self.depth()
    }
}

/// `β(exp(x_1)⋯exp(x_r)) = exp(α x_1)⋯exp(α x_r)` between the top levels of
/// two integrated groups.
#[derive(Debug, Clone)]
pub struct IntegratedHom {
    alpha: CMat,
    source: IntegratedGroup,
    target: IntegratedGroup,
    homomorphism_residual: f64,
}

/// Rejects `α` unless `|α[b_i, b_j] − [α b_i, α b_j]| ≤ 1e−9` on basis
/// pairs.
pub fn integrate_hom(
    alpha: &CMat,
    source: &IntegratedGroup,
    target: &IntegratedGroup,
) -> Result<IntegratedHom> {
    let src = source.filtration.level(source.top())?;
    let tgt = target.filtration.level(target.top())?;
    if alpha.shape() != (tgt.dim(), src.dim()) {
        return Err(Error::Dimension(format!(
            "α must be {}x{}, got {}x{}",
            tgt.dim(),
            src.dim(),
            alpha.nrows(),
            alpha.ncols()
        )));
    }
    let mut worst = 0.0f64;
    for i in 0..src.dim() {
        for j in 0..src.dim() {
            let lhs = alpha * src.bracket_coords(i, j);
            let rhs = tgt.bracket_in_coords(&alpha.column(i).into_owned(), &alpha.column(j).into_owned());
            worst = worst.max((lhs - rhs).iter().fold(0.0, |a, z| a.max(z.norm())));
        }
    }
    if worst > CLOSURE_TOL {
        return Err(Error::Rejected(format!(
            "α is not a Lie algebra homomorphism (residual {worst:.3e})"
        )));
    }
    Ok(IntegratedHom {
        alpha: alpha.clone(),
        source: source.clone(),
        target: target.clone(),
        homomorphism_residual: worst,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WellDefinedReport {
    pub pairs_checked: usize,
    /// Largest source distance among pairs accepted as equal.
    pub max_source_gap: f64,
    pub max_image_gap: f64,
    pub passed: bool,
}

impl IntegratedHom {
    pub fn alpha(&self) -> &CMat {
        &self.alpha
    }

    pub fn homomorphism_residual(&self) -> f64 {
        self.homomorphism_residual
    }

    pub fn image_word(&self, word: &[CVec]) -> Vec<CVec> {
        word.iter().map(|x| &self.alpha * x).collect()
    }

    pub fn apply_word(&self, word: &[CVec]) -> Result<GroupPoint> {
        self.target
            .word_product(self.target.top(), &self.image_word(word))
    }

    /// `|β(w) − exp_target(α log_source(∏ w))|`; meaningful when the source
    /// logarithm is global (BCH carrier) or the word is short.
    pub fn cross_check(&self, word: &[CVec]) -> Result<f64> {
        let src = self.source.word_product(self.source.top(), word)?;
        let x = self.source.log(self.source.top(), &src)?;
        let direct = self.target.exp(self.target.top(), &(&self.alpha * x))?;
        Ok(self.apply_word(word)?.dist(&direct))
    }

    /// Random words rewritten into words with the same source product
    /// (splitting `x` into `x/2, x/2`, inserting `y, −y`); their images must
    /// agree.
    pub fn well_definedness(&self, samples: usize, seed: u64) -> Result<WellDefinedReport> {
        let mut rng = substream(seed, "liethird/well-defined");
        let top = self.source.top();
        let d = self.source.dim(top)?;
        let scalars = self.source.scalars();
        let mut report = WellDefinedReport {
            pairs_checked: 0,
            max_source_gap: 0.0,
            max_image_gap: 0.0,
            passed: true,
        };
        for _ in 0..samples {
            let len = rng.random_range(1..=4);
            let word: Vec<CVec> = (0..len)
                .map(|_| random_coords(&mut rng, d, scalars, 0.3))
                .collect();
            let mut other = Vec::with_capacity(len + 3);
            let split = rng.random_range(0..len);
            let insert = rng.random_range(0..=len);
            let y = random_coords(&mut rng, d, scalars, 0.3);
            for (k, x) in word.iter().enumerate() {
                if k == insert {
                    other.push(y.clone());
                    other.push(-&y);
                }
                if k == split {
                    other.push(x * c(0.5));
                    other.push(x * c(0.5));
                } else {
                    other.push(x.clone());
                }
            }
            if insert == len {
                other.push(y.clone());
                other.push(-&y);
            }
            let gap = self
                .source
                .word_product(top, &word)?
                .dist(&self.source.word_product(top, &other)?);
            if gap > WORD_EQ_TOL {
                continue;
            }
            report.pairs_checked += 1;
            report.max_source_gap = report.max_source_gap.max(gap);
            let img = self.apply_word(&word)?.dist(&self.apply_word(&other)?);
            report.max_image_gap = report.max_image_gap.max(img);
        }
        report.passed = report.max_image_gap <= WELL_DEFINED_TOL;
        Ok(report)
    }
}

/// `H = ⟨exp(𝔥)⟩` inside a direct system, with `𝔥_m = 𝔥 ∩ L(G_m)` per level.
#[derive(Debug, Clone)]
pub struct SubgroupDescriptor {
    level: usize,
    algebra: SubalgebraBasis,
    ambients: Vec<Ambient>,
    per_level: Vec<Vec<Matrix>>,
}

/// Pushes an algebra element from level `from` to level `to`.
fn push(sys: &SystemDescriptor, from: usize, to: usize, x: &Matrix) -> Result<Matrix> {
    let mut cur = x.clone();
    for level in from..to {
        cur = sys.bond_derivative(level, &cur)?;
    }
    Ok(cur)
}

pub fn integrate_subalgebra(
    basis: Vec<Matrix>,
    level: usize,
    sys: &SystemDescriptor,
) -> Result<SubgroupDescriptor> {
    if sys.kind() != ObjectKind::MatrixGroup {
        return Err(Error::Argument("subgroups need a matrix-group system".into()));
    }
    let amb = sys.algebra_ambient(level)?;
    let algebra = SubalgebraBasis::from_basis(amb, basis)?;
    let frame = sys.algebra_frame(level)?;
    for b in algebra.basis() {
        if frame.coords(b)?.1 > 1e-9 * b.sup_norm().max(1.0) {
            return Err(Error::Argument(format!(
                "𝔥 is not inside the level-{level} algebra"
            )));
        }
    }
    let top = sys.levels().max(level);
    let top_amb = sys.algebra_ambient(top)?;
    let pushed_h = algebra
        .basis()
        .iter()
        .map(|b| top_amb.vectorize(&push(sys, level, top, b)?))
        .collect::<Result<Vec<_>>>()?;
    let mut per_level = Vec::with_capacity(sys.levels());
    let mut ambients = Vec::with_capacity(sys.levels());
    for m in 1..=sys.levels() {
        let lm = sys.algebra_frame(m)?;
        let pushed: Vec<Matrix> = lm
            .basis()
            .iter()
            .map(|b| push(sys, m, top, b))
            .collect::<Result<_>>()?;
        let pushed_frame = Frame::new(top_amb, pushed).map_err(|_| {
            Error::Construction(format!("bonding derivative out of level {m} is not injective"))
        })?;
        let cols = pushed_frame.columns();
        let common = intersect(&pushed_h, &cols, top_amb.scalars, 1e-9);
        let mut basis_m = Vec::with_capacity(common.len());
        for v in common {
            let (coords, _) = pushed_frame.coords(&top_amb.devectorize(&v))?;
            basis_m.push(lm.combine(&coords));
        }
        ambients.push(lm.ambient());
        per_level.push(basis_m);
    }
    Ok(SubgroupDescriptor {
        level,
        algebra,
        ambients,
        per_level,
    })
}

impl SubgroupDescriptor {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn algebra(&self) -> &SubalgebraBasis {
        &self.algebra
    }

    /// Basis of `𝔥_m`.
    pub fn algebra_at(&self, m: usize) -> Result<&[Matrix]> {
        self.per_level
            .get(m.wrapping_sub(1))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Argument(format!("level {m} outside the system")))
    }

    pub fn dims(&self) -> Vec<usize> {
        self.per_level.iter().map(Vec::len).collect()
    }

    /// `expm(b_i)` for the basis of `𝔥_m`.
    pub fn generators(&self, m: usize) -> Result<Vec<Matrix>> {
        self.algebra_at(m)?.iter().map(expm).collect()
    }

    /// `∏ exp(t_i b_{j_i})` with `|t_i| ≤ radius`.
    pub fn sample_word<R: Rng + ?Sized>(
        &self,
        m: usize,
        len: usize,
        radius: f64,
        rng: &mut R,
    ) -> Result<Matrix> {
        let basis = self.algebra_at(m)?;
        let amb = self.ambients[m - 1];
        let mut acc = Matrix::identity(amb.field, amb.n);
        if basis.is_empty() {
            return Ok(acc);
        }
        for _ in 0..len {
            let b = &basis[rng.random_range(0..basis.len())];
            let t = rng.random_range(-radius..=radius);
            acc = acc.mul(&expm(&b.scale(t))?)?;
        }
        Ok(acc)
    }

    /// Largest distance of `logm(w)` from `span(𝔥_m)` over small sampled
    /// words.
    pub fn algebra_recovery(&self, m: usize, samples: usize, seed: u64) -> Result<f64> {
        let basis = self.algebra_at(m)?.to_vec();
        if basis.is_empty() {
            return Ok(0.0);
        }
        let frame = Frame::new(self.ambients[m - 1], basis)?;
        let mut rng = substream(seed, &format!("liethird/recovery/{m}"));
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let w = self.sample_word(m, 4, 0.05, &mut rng)?;
            let l = logm_near_identity(&w)?;
            worst = worst.max(frame.coords(&l)?.1);
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexifiedLevel {
    pub level: usize,
    pub real_dim: usize,
    pub complex_dim: usize,
    /// Real rank of `b_i, i·b_i`; equals `2·real_dim` iff the basis stays
    /// ℂ-independent.
    pub doubled_real_rank: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexificationReport {
    pub levels: Vec<ComplexifiedLevel>,
    /// Distance between the complexified bonding derivatives restricted to
    /// the real algebras and the original ones, together with their failure
    /// of ℂ-linearity.
    pub bonding_residual: f64,
    pub degenerate: bool,
    pub passed: bool,
}

/// Complexified algebras `L(G_n) ⊕ i L(G_n)` as complex spans, with the
/// dimension identity and the bonding restriction checked per level.
/// Degenerate levels (real bases that are not ℂ-independent) are reported,
/// and the complexified system then uses a ℂ-independent subset.
pub fn complexify_system(sys: &SystemDescriptor) -> Result<(SystemDescriptor, ComplexificationReport)> {
    if sys.algebra_scalars() != Field::Real {
        return Err(Error::Argument(
            "complexification needs real Lie algebra data".into(),
        ));
    }
    let mut levels = Vec::with_capacity(sys.levels());
    let mut bases = Vec::with_capacity(sys.levels());
    for m in 1..=sys.levels() {
        let frame = sys.algebra_frame(m)?;
        let n = frame.ambient().n;
        let cplx = Ambient::complex(n);
        let real_form = Ambient::real_form(n);
        let mut on_c = Orthonormal::new(cplx.coord_len(), PIVOT_TOL);
        let mut on_r = Orthonormal::new(real_form.coord_len(), PIVOT_TOL);
        let mut basis_c = Vec::new();
        for b in frame.basis() {
            let bc = b.to_complex();
            if on_c.push(&cplx.vectorize(&bc)?) {
                basis_c.push(bc.clone());
            }
            on_r.push(&real_form.vectorize(&bc)?);
            on_r.push(&real_form.vectorize(&bc.scale_complex(Complex64::i()))?);
        }
        let real_dim = frame.dim();
        levels.push(ComplexifiedLevel {
            level: m,
            real_dim,
            complex_dim: on_c.dim(),
            doubled_real_rank: on_r.dim(),
            degenerate: on_c.dim() != real_dim || on_r.dim() != 2 * real_dim,
        });
        bases.push(basis_c);
    }
    let complexified = SystemDescriptor::new(
        sys.kind(),
        Field::Complex,
        sys.dims().to_vec(),
        sys.bonding().to_vec(),
    )?
    .with_algebra_scalars(Field::Complex)
    .with_tol(sys.tol())
    .with_algebra(bases)?;

    let mut bonding_residual = 0.0f64;
    for m in 1..sys.levels() {
        let next = complexified.algebra_frame(m + 1)?;
        for b in sys.algebra_frame(m)?.basis() {
            let orig = sys.bond_derivative(m, b)?.to_complex();
            let ext = complexified.bond_derivative(m, &b.to_complex())?;
            let ib = complexified.bond_derivative(m, &b.scale_complex(Complex64::i()))?;
            bonding_residual = bonding_residual
                .max(ext.dist(&orig))
                .max(ib.dist(&ext.scale_complex(Complex64::i())))
                .max(next.coords(&ext)?.1);
        }
    }
    let degenerate = levels.iter().any(|l| l.degenerate);
    Ok((
        complexified,
        ComplexificationReport {
            passed: !degenerate && bonding_residual <= 1e-10,
            levels,
            bonding_residual,
            degenerate,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlie::{bracket, center};
    use crate::rng::uniform_matrix;

    fn e(n: usize, i: usize, j: usize) -> Matrix {
        Matrix::unit(Field::Real, n, i - 1, j - 1)
    }

    fn heisenberg() -> Filtration {
        build_filtration(&[e(3, 1, 2), e(3, 2, 3)], &[1, 2], Ambient::real(3), 9).unwrap()
    }

    fn coords(xs: &[f64]) -> CVec {
        CVec::from_iterator(xs.len(), xs.iter().map(|&x| c(x)))
    }

    #[test]
    fn filtration_dims() {
        let f = build_filtration(
            &[e(4, 1, 2), e(4, 2, 3), e(4, 3, 4)],
            &[1, 2, 3],
            Ambient::real(4),
            16,
        )
        .unwrap();
        assert_eq!(f.dims(), vec![1, 3, 6]);
        let single = build_filtration(&[e(3, 1, 3)], &[1, 1, 1], Ambient::real(3), 9).unwrap();
        assert_eq!(single.dims(), vec![1, 1, 1]);
        // E_{k,k+1}, E_{k+1,k} for k ≤ 3 generate sl_4
        let gens = [
            e(4, 1, 2),
            e(4, 2, 1),
            e(4, 2, 3),
            e(4, 3, 2),
            e(4, 3, 4),
            e(4, 4, 3),
        ];
        let sl = build_filtration(&gens, &[2, 4, 6], Ambient::real(4), 16).unwrap();
        assert_eq!(sl.dims(), vec![3, 8, 15]);
        assert!(matches!(
            build_filtration(&gens, &[6], Ambient::real(4), 10),
            Err(Error::CapExceeded { .. })
        ));
        assert!(build_filtration(&[], &[1], Ambient::real(2), 4).is_err());
        assert!(build_filtration(&gens, &[3, 2], Ambient::real(4), 16).is_err());
    }

    #[test]
    fn heisenberg_bch_group() {
        let g = integrate_algebra(&heisenberg(), Backend::NilpotentBch).unwrap();
        let top = g.depth();
        let h = g.filtration().level(top).unwrap();
        let x = coords(&[0.3, -0.2, 0.7]);
        let y = coords(&[-0.5, 0.4, 0.1]);
        let p = g
            .mul(top, &g.exp(top, &x).unwrap(), &g.exp(top, &y).unwrap())
            .unwrap();
        let want = h
            .element(&x)
            .add(&h.element(&y))
            .unwrap()
            .add(&bracket(&h.element(&x), &h.element(&y)).unwrap().scale(0.5))
            .unwrap();
        assert!(h.element(&g.log(top, &p).unwrap()).dist(&want) < 1e-15);
        assert!(g.associativity_residual(20, 1).unwrap() <= 1e-12);
        assert!(g.bonding_residual().unwrap() <= 1e-6);
        let s = g.summary(10, 2).unwrap();
        assert!(s.passed, "{s:?}");
        assert_eq!(s.nilpotency_classes, vec![Some(1), Some(2)]);
    }

    #[test]
    fn abelian_group_law_is_addition() {
        let f = build_filtration(&[e(3, 1, 1), e(3, 2, 2)], &[1, 2], Ambient::real(3), 9).unwrap();
        let g = integrate_algebra(&f, Backend::NilpotentBch).unwrap();
        let (x, y) = (coords(&[0.4, 1.5]), coords(&[-2.0, 0.25]));
        let p = g.mul(2, &g.exp(2, &x).unwrap(), &g.exp(2, &y).unwrap()).unwrap();
        assert!(p.dist(&GroupPoint::Coords(coords(&[-1.6, 1.75]))) < 1e-15);
    }

    #[test]
    fn sl2_matrix_backend() {
        let f = build_filtration(&[e(2, 1, 2), e(2, 2, 1)], &[1, 2], Ambient::real(2), 4).unwrap();
        assert_eq!(f.dims(), vec![1, 3]);
        assert!(matches!(
            integrate_algebra(&f, Backend::NilpotentBch),
            Err(Error::NotNilpotent { .. })
        ));
        let g = integrate_algebra(&f, Backend::MatrixRepresentation).unwrap();
        let w = g
            .word_product(2, &[coords(&[0.3, 0.1, -0.2]), coords(&[1.0, -0.5, 0.2])])
            .unwrap();
        match &w {
            GroupPoint::Matrix(m) => assert!((m.det() - c(1.0)).norm() < 1e-12),
            _ => panic!("matrix carrier expected"),
        }
        assert!(g.bonding_residual().unwrap() <= 1e-6);
        assert!(g.associativity_residual(10, 3).unwrap() <= 1e-12);
    }

    #[test]
    fn homomorphisms() {
        let line = build_filtration(&[e(1, 1, 1)], &[1], Ambient::real(1), 1).unwrap();
        let src = integrate_algebra(&line, Backend::NilpotentBch).unwrap();
        let tgt = integrate_algebra(&line, Backend::MatrixRepresentation).unwrap();
        let alpha = CMat::from_element(1, 1, c(2.0));
        let beta = integrate_hom(&alpha, &src, &tgt).unwrap();
        let img = beta.apply_word(&[coords(&[0.7])]).unwrap();
        assert!(img.dist(&GroupPoint::Matrix(Matrix::real(1, &[1.4f64.exp()]).unwrap())) < 1e-14);

        let h = heisenberg();
        let bch_g = integrate_algebra(&h, Backend::NilpotentBch).unwrap();
        let mat_g = integrate_algebra(&h, Backend::MatrixRepresentation).unwrap();
        let id = CMat::identity(3, 3);
        let same = integrate_hom(&id, &bch_g, &bch_g).unwrap();
        let w = vec![coords(&[0.3, -0.1, 0.2]), coords(&[0.5, 0.6, -0.4])];
        assert_eq!(same.apply_word(&w).unwrap(), bch_g.word_product(2, &w).unwrap());
        let rep = integrate_hom(&id, &bch_g, &mat_g).unwrap();
        let mut rng = substream(4, "words");
        for _ in 0..20 {
            let word: Vec<CVec> = (0..5)
                .map(|_| random_coords(&mut rng, 3, Field::Real, 1.0))
                .collect();
            assert!(rep.cross_check(&word).unwrap() <= 1e-9);
        }
        let wd = rep.well_definedness(30, 5).unwrap();
        assert!(wd.passed && wd.pairs_checked == 30, "{wd:?}");

        // not a homomorphism: swaps the centre with a generator
        let mut bad = CMat::zeros(3, 3);
        bad[(2, 0)] = c(1.0);
        bad[(1, 1)] = c(1.0);
        bad[(0, 2)] = c(1.0);
        assert!(matches!(
            integrate_hom(&bad, &bch_g, &bch_g),
            Err(Error::Rejected(_))
        ));
    }

    #[test]
    fn hom_composition() {
        let h = heisenberg();
        let g = integrate_algebra(&h, Backend::NilpotentBch).unwrap();
        // dilations (x, y, z) -> (a x, b y, ab z) are automorphisms
        let dil = |a: f64, b: f64| CMat::from_diagonal(&coords(&[a, b, a * b]));
        let (a1, a2) = (dil(2.0, 0.5), dil(-1.0, 3.0));
        let b1 = integrate_hom(&a1, &g, &g).unwrap();
        let b2 = integrate_hom(&a2, &g, &g).unwrap();
        let b21 = integrate_hom(&(&a2 * &a1), &g, &g).unwrap();
        let w = vec![
            coords(&[0.3, -0.1, 0.2]),
            coords(&[0.5, 0.6, -0.4]),
            coords(&[-0.2, 0.1, 0.0]),
        ];
        let lhs = b21.apply_word(&w).unwrap();
        let rhs = b2.apply_word(&b1.image_word(&w)).unwrap();
        assert!(lhs.dist(&rhs) <= 1e-7);
    }

    #[test]
    fn central_elements_commute() {
        let f = build_filtration(&[e(3, 1, 2), e(3, 2, 3)], &[2], Ambient::real(3), 9).unwrap();
        let z = center(f.level(1).unwrap()).unwrap();
        assert_eq!(z.dim(), 1);
        assert!(z.closure_residual() == 0.0);
        let mut rng = substream(6, "centre");
        let g = integrate_algebra(&f, Backend::MatrixRepresentation).unwrap();
        let ez = expm(&z.basis()[0].scale(0.7)).unwrap();
        for _ in 0..10 {
            let x = random_coords(&mut rng, 3, Field::Real, 1.0);
            let GroupPoint::Matrix(m) = g.exp(1, &x).unwrap() else {
                panic!()
            };
            assert!(ez.mul(&m).unwrap().dist(&m.mul(&ez).unwrap()) <= 1e-10);
        }
    }

    #[test]
    fn subgroups() {
        let sys = SystemDescriptor::gl_block(Field::Real, vec![2, 3]).unwrap();
        let j = Matrix::real(2, &[0.0, -1.0, 1.0, 0.0]).unwrap();
        let rot = integrate_subalgebra(vec![j.clone()], 1, &sys).unwrap();
        assert_eq!(rot.dims(), vec![1, 1]);
        assert!(rot.algebra_recovery(1, 20, 1).unwrap() <= 1e-7);
        assert!(rot.algebra_recovery(2, 20, 1).unwrap() <= 1e-7);

        let g3 = SystemDescriptor::gl_block(Field::Real, vec![1, 2, 3]).unwrap();
        let upper = vec![e(3, 1, 2), e(3, 1, 3), e(3, 2, 3)];
        let n3 = integrate_subalgebra(upper, 3, &g3).unwrap();
        assert_eq!(n3.dims(), vec![0, 1, 3]);
        let mut rng = substream(7, "unipotent");
        for _ in 0..10 {
            let w = n3.sample_word(3, 6, 1.0, &mut rng).unwrap();
            let nil = w.sub(&Matrix::identity(Field::Real, 3)).unwrap();
            let cube = nil.mul(&nil).unwrap().mul(&nil).unwrap();
            assert!(cube.sup_norm() <= 1e-14);
            assert!(w.get(1, 0).norm() == 0.0 && w.get(2, 0).norm() == 0.0 && w.get(2, 1).norm() == 0.0);
        }
        assert!(n3.algebra_recovery(3, 20, 2).unwrap() <= 1e-7);

        let sl2 = vec![e(2, 1, 2), e(2, 2, 1), e(2, 1, 1).sub(&e(2, 2, 2)).unwrap()];
        let s = integrate_subalgebra(sl2, 2, &g3).unwrap();
        assert_eq!(s.dims(), vec![0, 3, 3]);
        for _ in 0..10 {
            let w = s.sample_word(3, 6, 1.0, &mut rng).unwrap();
            assert!((w.det() - c(1.0)).norm() <= 1e-10);
        }
        assert_eq!(s.generators(2).unwrap().len(), 3);

        let not_closed = vec![e(2, 1, 2), e(2, 2, 1)];
        assert!(matches!(
            integrate_subalgebra(not_closed, 2, &g3),
            Err(Error::Rejected(_))
        ));
    }

    #[test]
    fn complexification() {
        for n in 1..=4 {
            let (cs, rep) = complexify_system(&SystemDescriptor::unitary_chain(n).unwrap()).unwrap();
            assert!(rep.passed, "{rep:?}");
            for l in &rep.levels {
                assert_eq!(l.complex_dim, l.level * l.level);
                assert_eq!(l.real_dim, l.complex_dim);
            }
            assert!(rep.bonding_residual <= 1e-10);
            assert_eq!(cs.algebra_scalars(), Field::Complex);
        }
        let (cs, rep) =
            complexify_system(&SystemDescriptor::gl_block(Field::Real, vec![1, 2, 3]).unwrap()).unwrap();
        assert!(rep.passed);
        assert_eq!(cs.algebra_frame(3).unwrap().dim(), 9);
        assert_eq!(cs.field(), Field::Complex);

        // ℂ^× as a real group: {1, i} is not ℂ-independent
        let (_, rep) = complexify_system(&SystemDescriptor::cx_squaring(2).unwrap()).unwrap();
        assert!(rep.degenerate && !rep.passed);
        assert_eq!(rep.levels[0].real_dim, 2);
        assert_eq!(rep.levels[0].complex_dim, 1);

        let complex = SystemDescriptor::gl_block(Field::Complex, vec![1, 2]).unwrap();
        assert!(complexify_system(&complex).is_err());
    }

    #[test]
    fn filtration_json() {
        let v = serde_json::json!({
            "generators": [[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
                           [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]],
            "depths": [1, 2],
            "ambient": 3
        });
        let f = Filtration::from_json(&v).unwrap();
        assert_eq!(f.dims(), vec![1, 3]);
        let bad = serde_json::json!({"generators": [[[1.0]]], "ambient": 2});
        assert!(Filtration::from_json(&bad).is_err());
    }

    #[test]
    fn random_matrix_words_stay_consistent() {
        let mut rng = substream(8, "matrix-words");
        let x = uniform_matrix(&mut rng, Field::Real, 3, 1.0);
        let y = uniform_matrix(&mut rng, Field::Real, 3, 1.0);
        let f = build_filtration(&[x, y], &[1, 2], Ambient::real(3), 9).unwrap();
        let g = integrate_algebra(&f, Backend::MatrixRepresentation).unwrap();
        assert!(g.bonding_residual().unwrap() <= 1e-6);
        assert!(g.associativity_residual(10, 9).unwrap() <= 1e-9);
    }
}
