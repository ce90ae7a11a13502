//! Countable direct systems indexed by `(ℕ, ≤)`.
//!
//! A [`SystemDescriptor`] lists per-level dimensions and one bonding map per
//! consecutive pair of levels; the composite `φ_{i,j}` is the chain
//! composition. Levels are one-based throughout.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::field::scalar_json;
use crate::kinf::LevelledVector;
use crate::matrix::{c, CMat};
use crate::mlie::{expm, logm_near_identity};
use crate::span::{nullspace, Ambient, CVec, Frame, Orthonormal, PIVOT_TOL};
use crate::{Error, Field, Matrix, Result, EQ_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    MatrixGroup,
    MatrixAlgebra,
    VectorSpace,
}

pub type MapFn = Arc<dyn Fn(&Matrix) -> Result<Matrix> + Send + Sync>;

/// A registered homomorphism: its evaluator on the group and its derivative
/// at the identity.
#[derive(Clone)]
pub struct NamedHom {
    pub eval: MapFn,
    pub derivative: MapFn,
}

impl NamedHom {
    pub fn new<E, D>(eval: E, derivative: D) -> Self
    where
        E: Fn(&Matrix) -> Result<Matrix> + Send + Sync + 'static,
        D: Fn(&Matrix) -> Result<Matrix> + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            derivative: Arc::new(derivative),
        }
    }
}

/// Named homomorphisms available to JSON system files.
#[derive(Clone)]
pub struct Registry {
    homs: BTreeMap<String, NamedHom>,
}

impl Registry {
    /// Built-ins: `"square"` (`A ↦ A²`, derivative `X ↦ 2X`) and
    /// `"identity"`. `"block"` is resolved to the block embedding.
    pub fn builtin() -> Self {
        let mut homs = BTreeMap::new();
        homs.insert(
            "square".to_string(),
            NamedHom::new(|a: &Matrix| a.mul(a), |x: &Matrix| Ok(x.scale(2.0))),
        );
        homs.insert(
            "identity".to_string(),
            NamedHom::new(|a: &Matrix| Ok(a.clone()), |x: &Matrix| Ok(x.clone())),
        );
        Self { homs }
    }

    pub fn register(&mut self, name: &str, hom: NamedHom) {
        self.homs.insert(name.to_string(), hom);
    }

    pub fn resolve(&self, name: &str) -> Result<Bonding> {
        if name == "block" {
            return Ok(Bonding::Block);
        }
        self.homs
            .get(name)
            .map(|hom| Bonding::Named {
                name: name.to_string(),
                hom: hom.clone(),
            })
            .ok_or_else(|| Error::Argument(format!("unknown named homomorphism {name:?}")))
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Bonding map from level `n` to level `n + 1`.
#[derive(Clone)]
pub enum Bonding {
    /// `A ↦ diag(A, I)` on groups, `X ↦ diag(X, 0)` on algebras, zero
    /// padding on vectors.
    Block,
    /// Explicit linear map on coordinates (row-major vectorisation for
    /// matrix algebras). Not allowed on groups.
    Linear(CMat),
    Named {
        name: String,
        hom: NamedHom,
    },
}

impl fmt::Debug for Bonding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bonding::Block => f.write_str("Block"),
            Bonding::Linear(m) => write!(f, "Linear({}x{})", m.nrows(), m.ncols()),
            Bonding::Named { name, .. } => write!(f, "Named({name})"),
        }
    }
}

/// A representative of some level object.
#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Matrix(Matrix),
    Vector(LevelledVector),
}

impl Element {
    pub fn as_matrix(&self) -> Result<&Matrix> {
        match self {
            Element::Matrix(m) => Ok(m),
            Element::Vector(_) => Err(Error::Argument("expected a matrix element".into())),
        }
    }

    pub fn as_vector(&self) -> Result<&LevelledVector> {
        match self {
            Element::Vector(v) => Ok(v),
            Element::Matrix(_) => Err(Error::Argument("expected a vector element".into())),
        }
    }

    /// Sup-norm distance; infinite across incompatible shapes or fields.
    pub fn dist(&self, other: &Element) -> f64 {
        match (self, other) {
            (Element::Matrix(a), Element::Matrix(b)) => a.dist(b),
            (Element::Vector(a), Element::Vector(b)) => {
                if a.field() != b.field() {
                    return f64::INFINITY;
                }
                let n = a.declared_level().max(b.declared_level());
                (1..=n).fold(0.0, |acc, k| acc.max((a.coeff(k) - b.coeff(k)).norm()))
            }
            _ => f64::INFINITY,
        }
    }
}

impl From<Matrix> for Element {
    fn from(m: Matrix) -> Self {
        Element::Matrix(m)
    }
}

impl From<LevelledVector> for Element {
    fn from(v: LevelledVector) -> Self {
        Element::Vector(v)
    }
}

/// Equivalence-class representative `(level, rep)` of a direct limit.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPoint {
    pub level: usize,
    pub rep: Element,
}

impl LimitPoint {
    pub fn new(level: usize, rep: impl Into<Element>) -> Self {
        Self {
            level,
            rep: rep.into(),
        }
    }
}

#[derive(Clone)]
pub struct SystemDescriptor {
    kind: ObjectKind,
    field: Field,
    dims: Vec<usize>,
    bonding: Vec<Bonding>,
    algebra_scalars: Field,
    algebra: Option<Vec<Vec<Matrix>>>,
    tol: f64,
}

impl fmt::Debug for SystemDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDescriptor")
            .field("kind", &self.kind)
            .field("field", &self.field)
            .field("dims", &self.dims)
            .field("bonding", &self.bonding)
            .finish()
    }
}

impl SystemDescriptor {
    pub fn new(kind: ObjectKind, field: Field, dims: Vec<usize>, bonding: Vec<Bonding>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Argument("a system needs at least one level".into()));
        }
        if bonding.len() + 1 != dims.len() {
            return Err(Error::Argument(format!(
                "{} levels need {} bonding maps, got {}",
                dims.len(),
                dims.len() - 1,
                bonding.len()
            )));
        }
        for (k, b) in bonding.iter().enumerate() {
            let (from, to) = (dims[k], dims[k + 1]);
            match b {
                Bonding::Block if to < from => {
                    return Err(Error::Dimension(format!(
                        "block bonding from level {} shrinks {from} to {to}",
                        k + 1
                    )))
                }
                Bonding::Linear(_) if kind == ObjectKind::MatrixGroup => {
                    return Err(Error::Argument(
                        "linear bondings are not group homomorphisms in general".into(),
                    ))
                }
                Bonding::Linear(m) => {
                    let (r, cdim) = match kind {
                        ObjectKind::MatrixAlgebra => (to * to, from * from),
                        _ => (to, from),
                    };
                    if m.shape() != (r, cdim) {
                        return Err(Error::Dimension(format!(
                            "linear bonding from level {} must be {r}x{cdim}",
                            k + 1
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(Self {
            kind,
            field,
            dims,
            bonding,
            algebra_scalars: field,
            algebra: None,
            tol: EQ_TOL,
        })
    }

    /// `GL_{d_1} ⊆ GL_{d_2} ⊆ …` by block embedding.
    pub fn gl_block(field: Field, dims: Vec<usize>) -> Result<Self> {
        let b = vec![Bonding::Block; dims.len().saturating_sub(1)];
        Self::new(ObjectKind::MatrixGroup, field, dims, b)
    }

    /// `gl_{d_1} ⊆ gl_{d_2} ⊆ …` by zero padding.
    pub fn gl_algebra_block(field: Field, dims: Vec<usize>) -> Result<Self> {
        let b = vec![Bonding::Block; dims.len().saturating_sub(1)];
        Self::new(ObjectKind::MatrixAlgebra, field, dims, b)
    }

    pub fn vector_block(field: Field, dims: Vec<usize>) -> Result<Self> {
        let b = vec![Bonding::Block; dims.len().saturating_sub(1)];
        Self::new(ObjectKind::VectorSpace, field, dims, b)
    }

    /// `ℂ^× → ℂ^× → …` with every bonding `z ↦ z²`, viewed as real Lie
    /// groups.
    pub fn cx_squaring(levels: usize) -> Result<Self> {
        let sq = Registry::builtin().resolve("square")?;
        let s = Self::new(
            ObjectKind::MatrixGroup,
            Field::Complex,
            vec![1; levels],
            vec![sq; levels.saturating_sub(1)],
        )?;
        Ok(s.with_algebra_scalars(Field::Real))
    }

    /// `ℝ × SO(2)`, realised as `diag(e^t, R)`, with bondings `g ↦ g²`.
    pub fn r_times_so2(levels: usize) -> Result<Self> {
        let sq = Registry::builtin().resolve("square")?;
        let s = Self::new(
            ObjectKind::MatrixGroup,
            Field::Real,
            vec![3; levels],
            vec![sq; levels.saturating_sub(1)],
        )?;
        let basis = vec![Matrix::unit(Field::Real, 3, 0, 0), rotation_generator_3()];
        s.with_algebra(vec![basis; levels])
    }

    /// `U(1) ⊆ U(2) ⊆ … ⊆ U(n)` by block embedding, with the real Lie
    /// algebras `u(k)` as level algebras.
    pub fn unitary_chain(n: usize) -> Result<Self> {
        let dims: Vec<usize> = (1..=n).collect();
        let s = Self::gl_block(Field::Complex, dims.clone())?.with_algebra_scalars(Field::Real);
        s.with_algebra(dims.iter().map(|&k| unitary_basis(k)).collect())
    }

    /// Supplies explicit bases of the level Lie algebras (groups) or of the
    /// level subalgebras (algebra systems).
    pub fn with_algebra(mut self, bases: Vec<Vec<Matrix>>) -> Result<Self> {
        if bases.len() != self.dims.len() {
            return Err(Error::Argument("one algebra basis per level required".into()));
        }
        for (k, b) in bases.iter().enumerate() {
            let amb = Ambient::new(self.dims[k], self.field, self.algebra_scalars)?;
            Frame::new(amb, b.clone())?;
        }
        self.algebra = Some(bases);
        Ok(self)
    }

    pub fn with_algebra_scalars(mut self, scalars: Field) -> Self {
        self.algebra_scalars = scalars;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn kind(&self) -> ObjectKind {
        self.kind
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn algebra_scalars(&self) -> Field {
        self.algebra_scalars
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn levels(&self) -> usize {
        self.dims.len()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn bonding(&self) -> &[Bonding] {
        &self.bonding
    }

    pub fn has_explicit_algebra(&self) -> bool {
        self.algebra.is_some()
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.levels() {
            return Err(Error::Argument(format!(
                "level {level} outside 1..={}",
                self.levels()
            )));
        }
        Ok(())
    }

    pub fn dim(&self, level: usize) -> Result<usize> {
        self.check_level(level)?;
        Ok(self.dims[level - 1])
    }

    /// Whether `x` has the shape demanded at `level`.
    pub fn check_shape(&self, level: usize, x: &Element) -> Result<()> {
        let d = self.dim(level)?;
        match (self.kind, x) {
            (ObjectKind::VectorSpace, Element::Vector(v)) => {
                self.field.ensure_same(v.field())?;
                if v.declared_level() != d {
                    return Err(Error::Dimension(format!(
                        "vector of level {} at system level {level} (dimension {d})",
                        v.declared_level()
                    )));
                }
                Ok(())
            }
            (ObjectKind::MatrixGroup | ObjectKind::MatrixAlgebra, Element::Matrix(m)) => {
                self.field.ensure_same(m.field())?;
                if m.n() != d {
                    return Err(Error::Dimension(format!(
                        "{0}x{0} matrix at level {level} of size {d}",
                        m.n()
                    )));
                }
                Ok(())
            }
            _ => Err(Error::Argument(format!(
                "element kind does not match a {:?} system",
                self.kind
            ))),
        }
    }

    /// `φ_{level+1, level}(x)`.
    pub fn bond(&self, level: usize, x: &Element) -> Result<Element> {
        self.check_shape(level, x)?;
        if level >= self.levels() {
            return Err(Error::Argument(format!("no bonding map out of level {level}")));
        }
        let to = self.dims[level];
        let out = match (&self.bonding[level - 1], x) {
            (Bonding::Block, Element::Matrix(m)) => match self.kind {
                ObjectKind::MatrixGroup => Element::Matrix(m.embed_group(to)?),
                _ => Element::Matrix(m.embed_algebra(to)?),
            },
            (Bonding::Block, Element::Vector(v)) => Element::Vector(v.embed(to)?),
            (Bonding::Linear(lin), Element::Vector(v)) => {
                let col = CVec::from_column_slice(v.entries());
                let img = lin * col;
                Element::Vector(LevelledVector::new(self.field, img.iter().copied().collect())?)
            }
            (Bonding::Linear(lin), Element::Matrix(m)) => {
                let n = m.n();
                let col = CVec::from_iterator(n * n, (0..n * n).map(|k| m.get(k / n, k % n)));
                let img = lin * col;
                let data = CMat::from_row_slice(to, to, img.as_slice());
                Element::Matrix(Matrix::from_parts(self.field, data))
            }
            (Bonding::Named { hom, .. }, Element::Matrix(m)) => match self.kind {
                ObjectKind::MatrixGroup => Element::Matrix((hom.eval)(m)?),
                _ => Element::Matrix((hom.derivative)(m)?),
            },
            (Bonding::Named { name, .. }, Element::Vector(_)) => {
                return Err(Error::Argument(format!(
                    "named map {name:?} acts on matrices, not vectors"
                )))
            }
        };
        self.check_shape(level + 1, &out)?;
        Ok(out)
    }

    /// `φ_{i,j}(x)` as the chain composition.
    pub fn composite(&self, i: usize, j: usize, x: &Element) -> Result<Element> {
        if i < j {
            return Err(Error::Level {
                requested: i,
                current: j,
            });
        }
        self.check_level(i)?;
        self.check_shape(j, x)?;
        let mut cur = x.clone();
        for level in j..i {
            cur = self.bond(level, &cur)?;
        }
        Ok(cur)
    }

    /// Derivative at the identity of the bonding out of `level`, applied to
    /// an algebra element (the bonding itself on algebra systems).
    pub fn bond_derivative(&self, level: usize, x: &Matrix) -> Result<Matrix> {
        let to = self.dim(level + 1)?;
        match &self.bonding[level - 1] {
            Bonding::Block => x.embed_algebra(to),
            Bonding::Named { hom, .. } => (hom.derivative)(x),
            Bonding::Linear(_) => self
                .bond(level, &Element::Matrix(x.clone()))?
                .as_matrix()
                .cloned(),
        }
    }

    pub fn algebra_ambient(&self, level: usize) -> Result<Ambient> {
        Ambient::new(self.dim(level)?, self.field, self.algebra_scalars)
    }

    /// Basis of the level Lie algebra (explicit, or all of `gl_n`).
    pub fn algebra_frame(&self, level: usize) -> Result<Frame> {
        let amb = self.algebra_ambient(level)?;
        match &self.algebra {
            Some(b) => Frame::new(amb, b[level - 1].clone()),
            None => Ok(Frame::gl(amb)),
        }
    }

    /// The level Lie algebra over ℝ: complex spans are doubled by `i`.
    pub fn real_algebra_frame(&self, level: usize) -> Result<Frame> {
        let frame = self.algebra_frame(level)?;
        match (self.field, self.algebra_scalars) {
            (Field::Complex, Field::Complex) => {
                let amb = Ambient::real_form(frame.ambient().n);
                let mut basis = frame.basis().to_vec();
                basis.extend(frame.basis().iter().map(|b| b.scale_complex(Complex64::i())));
                Frame::new(amb, basis)
            }
            _ => Ok(frame),
        }
    }

    /// Matrix of `L(φ_{level+1, level})` between real algebra frames.
    pub fn step_derivative_matrix(&self, level: usize) -> Result<CMat> {
        let src = self.real_algebra_frame(level)?;
        let tgt = self.real_algebra_frame(level + 1)?;
        let mut out = CMat::zeros(tgt.dim(), src.dim());
        for (k, b) in src.basis().iter().enumerate() {
            let img = self.bond_derivative(level, b)?;
            let (coords, resid) = tgt.coords(&img)?;
            if resid > 1e-9 * img.sup_norm().max(1.0) {
                return Err(Error::Contract(format!(
                    "bonding derivative out of level {level} leaves the next level algebra"
                )));
            }
            out.set_column(k, &coords);
        }
        Ok(out)
    }

    /// Matrix of `L(φ_{i,j})` between real algebra frames.
    pub fn derivative_matrix(&self, i: usize, j: usize) -> Result<CMat> {
        if i < j {
            return Err(Error::Level {
                requested: i,
                current: j,
            });
        }
        let d = self.real_algebra_frame(j)?.dim();
        let mut acc = CMat::identity(d, d);
        for level in j..i {
            acc = self.step_derivative_matrix(level)? * acc;
        }
        Ok(acc)
    }

    /// The system of Lie algebras: bondings replaced by their derivatives.
    pub fn algebra_system(&self) -> Result<SystemDescriptor> {
        if self.kind != ObjectKind::MatrixGroup {
            return Ok(self.clone());
        }
        let mut s = self.clone();
        s.kind = ObjectKind::MatrixAlgebra;
        Ok(s)
    }

    pub fn identity(&self, level: usize) -> Result<Matrix> {
        Ok(Matrix::identity(self.field, self.dim(level)?))
    }

    /// Random element at `level`: `exp` of a random algebra element for
    /// groups, a random algebra element for algebras, uniform coefficients
    /// for vectors.
    pub fn sample_element<R: Rng + ?Sized>(&self, level: usize, rng: &mut R) -> Result<Element> {
        let d = self.dim(level)?;
        match self.kind {
            ObjectKind::VectorSpace => {
                let entries = (0..d)
                    .map(|_| match self.field {
                        Field::Real => c(rng.random_range(-1.0..1.0)),
                        Field::Complex => {
                            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                        }
                    })
                    .collect();
                Ok(Element::Vector(LevelledVector::new(self.field, entries)?))
            }
            _ => {
                let frame = self.algebra_frame(level)?;
                let coeffs = CVec::from_iterator(
                    frame.dim(),
                    (0..frame.dim()).map(|_| c(rng.random_range(-0.5..0.5))),
                );
                let x = frame.combine(&coeffs);
                if self.kind == ObjectKind::MatrixGroup {
                    Ok(Element::Matrix(expm(&x)?))
                } else {
                    Ok(Element::Matrix(x))
                }
            }
        }
    }

    /// Sampled validation of the coherence laws and, for groups, of the
    /// homomorphism property and of each named derivative evaluator.
    pub fn validate<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<ValidationReport> {
        let mut report = ValidationReport::default();
        let top = self.levels();
        for _ in 0..samples {
            for k in 1..=top {
                let x = self.sample_element(k, rng)?;
                for j in k..=top {
                    let direct = self.composite(j, k, &x)?;
                    for i in j..=top {
                        let via = self.composite(i, j, &direct)?;
                        let whole = self.composite(i, k, &x)?;
                        report.coherence_residual = report.coherence_residual.max(via.dist(&whole));
                    }
                }
            }
        }
        if self.kind == ObjectKind::MatrixGroup {
            for level in 1..top {
                for _ in 0..samples {
                    let x = self.sample_element(level, rng)?;
                    let y = self.sample_element(level, rng)?;
                    let xy = Element::Matrix(x.as_matrix()?.mul(y.as_matrix()?)?);
                    let lhs = self.bond(level, &xy)?;
                    let rhs = self
                        .bond(level, &x)?
                        .as_matrix()?
                        .mul(self.bond(level, &y)?.as_matrix()?)?;
                    report.homomorphism_residual =
                        report.homomorphism_residual.max(lhs.dist(&Element::Matrix(rhs)));
                }
                // derivative evaluator against central differences
                let frame = self.algebra_frame(level)?;
                for b in frame.basis() {
                    let h = crate::mlie::FD_STEP;
                    let plus = self.bond(level, &Element::Matrix(expm(&b.scale(h))?))?;
                    let minus = self.bond(level, &Element::Matrix(expm(&b.scale(-h))?))?;
                    let fd = logm_near_identity(plus.as_matrix()?)?
                        .sub(&logm_near_identity(minus.as_matrix()?)?)?
                        .scale(0.5 / h);
                    let declared = self.bond_derivative(level, b)?;
                    report.derivative_residual = report.derivative_residual.max(fd.dist(&declared));
                }
            }
        }
        report.passed = report.coherence_residual <= 1e-12
            && report.homomorphism_residual <= 1e-10
            && report.derivative_residual <= 1e-6;
        Ok(report)
    }

    pub fn lift(&self, p: &LimitPoint, i: usize) -> Result<LimitPoint> {
        lift(self, p, i)
    }

    /// Parses a system file; returns the system and its kernel ledger.
    pub fn from_json(v: &Value, registry: &Registry) -> Result<(Self, KernelLedger)> {
        let kind: ObjectKind = serde_json::from_value(
            v.get("kind")
                .cloned()
                .ok_or_else(|| Error::Argument("system JSON needs \"kind\"".into()))?,
        )?;
        let field: Field = match v.get("field") {
            Some(f) => serde_json::from_value(f.clone())?,
            None => Field::Real,
        };
        let dims: Vec<usize> = serde_json::from_value(
            v.get("dims")
                .cloned()
                .ok_or_else(|| Error::Argument("system JSON needs \"dims\"".into()))?,
        )?;
        let bonding = match v.get("bonding").and_then(Value::as_array) {
            Some(list) => list
                .iter()
                .map(|b| parse_bonding(b, field, registry))
                .collect::<Result<Vec<_>>>()?,
            None => vec![Bonding::Block; dims.len().saturating_sub(1)],
        };
        let mut sys = Self::new(kind, field, dims, bonding)?;
        if let Some(s) = v.get("algebra_scalars") {
            sys = sys.with_algebra_scalars(serde_json::from_value(s.clone())?);
        }
        if let Some(alg) = v.get("algebra").and_then(Value::as_array) {
            let bases = alg
                .iter()
                .map(|lvl| {
                    lvl.as_array()
                        .ok_or_else(|| Error::Argument("algebra levels must be lists".into()))?
                        .iter()
                        .map(Matrix::from_json)
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            sys = sys.with_algebra(bases)?;
        }
        if let Some(t) = v.get("tol").and_then(Value::as_f64) {
            sys = sys.with_tol(t);
        }
        let ledger = match v.get("kernels") {
            Some(k) => KernelLedger::from_json(k)?,
            None => KernelLedger::default(),
        };
        Ok((sys, ledger))
    }
}

fn parse_bonding(b: &Value, field: Field, registry: &Registry) -> Result<Bonding> {
    match b.get("type").and_then(Value::as_str) {
        Some("block") => Ok(Bonding::Block),
        Some("named") => {
            let name = b
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Argument("named bonding needs \"name\"".into()))?;
            registry.resolve(name)
        }
        Some("linear") => {
            let rows = b
                .get("matrix")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Argument("linear bonding needs \"matrix\" rows".into()))?;
            let r = rows.len();
            let cols = rows.first().and_then(Value::as_array).map_or(0, Vec::len);
            let mut m = CMat::zeros(r, cols);
            for (i, row) in rows.iter().enumerate() {
                let row = row
                    .as_array()
                    .filter(|row| row.len() == cols)
                    .ok_or_else(|| Error::Dimension("ragged linear bonding matrix".into()))?;
                for (j, x) in row.iter().enumerate() {
                    m[(i, j)] = scalar_json::from_value(field, x)?;
                }
            }
            Ok(Bonding::Linear(m))
        }
        other => Err(Error::Argument(format!("unknown bonding type {other:?}"))),
    }
}

/// Basis of `u(n)`: `iE_jj`, `E_jk − E_kj` and `i(E_jk + E_kj)` for `j < k`.
pub fn unitary_basis(n: usize) -> Vec<Matrix> {
    let e = |i: usize, j: usize| Matrix::unit(Field::Complex, n, i, j);
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        out.push(e(j, j).scale_complex(Complex64::i()));
    }
    for j in 0..n {
        for k in (j + 1)..n {
            out.push(e(j, k).sub(&e(k, j)).expect("same shape"));
            out.push(
                e(j, k)
                    .add(&e(k, j))
                    .expect("same shape")
                    .scale_complex(Complex64::i()),
            );
        }
    }
    out
}

fn rotation_generator_3() -> Matrix {
    let mut j = Matrix::zeros(Field::Real, 3).into_data();
    j[(1, 2)] = c(-1.0);
    j[(2, 1)] = c(1.0);
    Matrix::from_parts(Field::Real, j)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub coherence_residual: f64,
    pub homomorphism_residual: f64,
    pub derivative_residual: f64,
    pub passed: bool,
}

/// `(i, φ_{i, p.level}(p.rep))`.
pub fn lift(sys: &SystemDescriptor, p: &LimitPoint, i: usize) -> Result<LimitPoint> {
    if i < p.level {
        return Err(Error::Level {
            requested: i,
            current: p.level,
        });
    }
    Ok(LimitPoint {
        level: i,
        rep: sys.composite(i, p.level, &p.rep)?,
    })
}

/// Whether `p` and `q` are identified at some level up to `search_bound`.
/// `false` means "not identified up to the bound".
pub fn limit_eq(sys: &SystemDescriptor, p: &LimitPoint, q: &LimitPoint, search_bound: usize) -> Result<bool> {
    let start = p.level.max(q.level);
    if search_bound < start {
        return Err(Error::Level {
            requested: search_bound,
            current: start,
        });
    }
    let bound = search_bound.min(sys.levels());
    let mut a = lift(sys, p, start)?.rep;
    let mut b = lift(sys, q, start)?.rep;
    for level in start..=bound {
        if a.dist(&b) <= sys.tol() {
            return Ok(true);
        }
        if level < bound {
            a = sys.bond(level, &a)?;
            b = sys.bond(level, &b)?;
        }
    }
    Ok(false)
}

pub type ConeMap = Arc<dyn Fn(&Element) -> Result<Element> + Send + Sync>;

/// Cone residual threshold.
pub const CONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct ConeReport {
    pub max_residual: f64,
    /// `(i, j)` pair attaining the maximum.
    pub worst_pair: Option<(usize, usize)>,
    pub passed: bool,
}

/// Samples `|ψ_i(φ_{i,j}(x)) - ψ_j(x)|` over all pairs `i > j`.
pub fn check_cone<R: Rng + ?Sized>(
    sys: &SystemDescriptor,
    psi: &[ConeMap],
    samples: usize,
    rng: &mut R,
) -> Result<ConeReport> {
    if psi.len() != sys.levels() {
        return Err(Error::Argument(format!(
            "{} cone maps for {} levels",
            psi.len(),
            sys.levels()
        )));
    }
    let mut worst = 0.0f64;
    let mut worst_pair = None;
    for _ in 0..samples {
        for j in 1..=sys.levels() {
            let x = sys.sample_element(j, rng)?;
            let base = psi[j - 1](&x)?;
            let mut cur = x;
            for i in (j + 1)..=sys.levels() {
                cur = sys.bond(i - 1, &cur)?;
                let r = psi[i - 1](&cur)?.dist(&base);
                if r > worst || worst_pair.is_none() {
                    worst = worst.max(r);
                    worst_pair = Some((i, j));
                }
            }
        }
    }
    Ok(ConeReport {
        max_residual: worst,
        worst_pair,
        passed: worst <= CONE_TOL,
    })
}

/// The map induced on the limit by a cone.
pub struct MediatingMap {
    psi: Vec<ConeMap>,
}

impl MediatingMap {
    pub fn apply(&self, p: &LimitPoint) -> Result<Element> {
        let f = self
            .psi
            .get(p.level.wrapping_sub(1))
            .ok_or_else(|| Error::Argument(format!("no cone map at level {}", p.level)))?;
        f(&p.rep)
    }
}

/// Checks the cone condition on seeded samples and returns
/// `p ↦ ψ_{p.level}(p.rep)`.
pub fn mediating_map(sys: &SystemDescriptor, psi: &[ConeMap]) -> Result<MediatingMap> {
    let mut rng = crate::rng::substream(0, "dirsys/mediating");
    let report = check_cone(sys, psi, 8, &mut rng)?;
    if !report.passed {
        return Err(Error::Contract(format!(
            "cone condition fails (residual {:.3e})",
            report.max_residual
        )));
    }
    Ok(MediatingMap { psi: psi.to_vec() })
}

/// Closure rule describing the smallest closed subgroup containing the
/// union of a kernel family.
#[derive(Debug, Clone, PartialEq)]
pub enum Closure {
    Finite,
    /// The union is dense in the circle `{exp(t D)}`; contributes `ℝ·D`.
    DenseInCircle {
        direction: Matrix,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelGenerator {
    pub element: Matrix,
    /// A level `i` with `φ_{i, level}(element) = 1`.
    pub witness: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelFamily {
    pub level: usize,
    pub generators: Vec<KernelGenerator>,
    pub closure: Closure,
}

/// Declared kernels of the bonding maps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KernelLedger {
    pub families: Vec<KernelFamily>,
}

impl KernelLedger {
    /// Roots of unity of order `2^d` at every level of the `ℂ^×` squaring
    /// system; their union is dense in the unit circle.
    pub fn cx_squaring(levels: usize) -> Self {
        let families = (1..=levels)
            .map(|level| {
                let generators = (1..=levels - level)
                    .map(|d| {
                        let angle = std::f64::consts::TAU / 2f64.powi(d as i32);
                        KernelGenerator {
                            element: Matrix::complex(1, &[Complex64::from_polar(1.0, angle)]).expect("1x1"),
                            witness: level + d,
                        }
                    })
                    .collect();
                KernelFamily {
                    level,
                    generators,
                    closure: Closure::DenseInCircle {
                        direction: Matrix::complex(1, &[Complex64::i()]).expect("1x1"),
                    },
                }
            })
            .collect();
        Self { families }
    }

    /// Rotations by `2π / 2^d` in the `SO(2)` factor of
    /// [`SystemDescriptor::r_times_so2`].
    pub fn r_times_so2(levels: usize) -> Self {
        let families = (1..=levels)
            .map(|level| {
                let generators = (1..=levels - level)
                    .map(|d| {
                        let a = std::f64::consts::TAU / 2f64.powi(d as i32);
                        let g =
                            Matrix::real(3, &[1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos()])
                                .expect("3x3");
                        KernelGenerator {
                            element: g,
                            witness: level + d,
                        }
                    })
                    .collect();
                KernelFamily {
                    level,
                    generators,
                    closure: Closure::DenseInCircle {
                        direction: rotation_generator_3(),
                    },
                }
            })
            .collect();
        Self { families }
    }

    /// Checks `φ_{witness, level}(g) = 1` for every generator.
    pub fn verify(&self, sys: &SystemDescriptor) -> Result<()> {
        for fam in &self.families {
            for g in &fam.generators {
                if g.witness < fam.level || g.witness > sys.levels() {
                    return Err(Error::Contract(format!(
                        "kernel witness {} invalid for level {} of a {}-level system",
                        g.witness,
                        fam.level,
                        sys.levels()
                    )));
                }
                let img = sys.composite(g.witness, fam.level, &Element::Matrix(g.element.clone()))?;
                let id = Element::Matrix(sys.identity(g.witness)?);
                let r = img.dist(&id);
                if r > EQ_TOL {
                    return Err(Error::Contract(format!(
                        "declared kernel generator at level {} is not killed by level {} (residual {r:.3e})",
                        fam.level, g.witness
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let list = v
            .as_array()
            .ok_or_else(|| Error::Argument("\"kernels\" must be a list".into()))?;
        let mut families = Vec::new();
        for fam in list {
            let level = fam
                .get("level")
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::Argument("kernel family needs \"level\"".into()))?
                as usize;
            let closure = match fam.get("closure").and_then(Value::as_str).unwrap_or("finite") {
                "finite" => Closure::Finite,
                "dense-in-circle" => Closure::DenseInCircle {
                    direction: Matrix::from_json(fam.get("direction").ok_or_else(|| {
                        Error::Argument("dense-in-circle family needs \"direction\"".into())
                    })?)?,
                },
                other => return Err(Error::Argument(format!("unknown closure {other:?}"))),
            };
            let generators = fam
                .get("generators")
                .and_then(Value::as_array)
                .map(|gs| {
                    gs.iter()
                        .map(|g| {
                            Ok(KernelGenerator {
                                element: Matrix::from_json(g.get("value").ok_or_else(|| {
                                    Error::Argument("kernel generator needs \"value\"".into())
                                })?)?,
                                witness: g.get("witness").and_then(Value::as_u64).ok_or_else(|| {
                                    Error::Argument("kernel generator needs \"witness\"".into())
                                })? as usize,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?
                .unwrap_or_default();
            families.push(KernelFamily {
                level,
                generators,
                closure,
            });
        }
        Ok(Self { families })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QuotientLevel {
    pub level: usize,
    /// Real dimension of `L(G_j)`.
    pub algebra_dim: usize,
    /// Dimension of `𝔫_j` over the category's field.
    pub kernel_dim: usize,
    /// Dimension of `L(G_j) / 𝔫_j` over the category's field.
    pub quotient_dim: usize,
    /// `dim 𝔫_j` (over ℝ) after accumulating kernels up to each depth
    /// `j..=bound`.
    pub kernel_dims_by_depth: Vec<usize>,
    #[serde(skip)]
    pub kernel_basis: Vec<Matrix>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuotientReport {
    pub category: Field,
    pub bound: usize,
    pub levels: Vec<QuotientLevel>,
    /// Smallest singular value of each induced bonding derivative.
    pub injectivity_margins: Vec<f64>,
    pub stabilized: bool,
}

/// Lie algebras of the injective quotient system associated with `sys`,
/// accumulating kernels up to `bound`.
///
/// `𝔫_j` is spanned by the circle directions of families declared dense,
/// the logarithms of their generators that lie in the logarithm's domain,
/// and the kernels of `L(φ_{i,j})` for `i ≤ bound`. For the complex
/// category `𝔫_j` is additionally closed under multiplication by `i`.
/// The returned system is a vector-space system of the quotient algebras
/// (realified) with the induced bonding derivatives as linear bondings.
pub fn injective_quotient(
    sys: &SystemDescriptor,
    ledger: &KernelLedger,
    bound: usize,
    category: Field,
) -> Result<(SystemDescriptor, QuotientReport)> {
    if sys.kind() != ObjectKind::MatrixGroup {
        return Err(Error::Argument(
            "injective quotients need a matrix-group system".into(),
        ));
    }
    if bound == 0 || bound > sys.levels() {
        return Err(Error::Argument(format!(
            "bound {bound} outside 1..={}",
            sys.levels()
        )));
    }
    if category == Field::Complex && sys.field() != Field::Complex {
        return Err(Error::Argument("complex quotients need complex groups".into()));
    }
    ledger.verify(sys)?;

    let frames: Vec<Frame> = (1..=bound)
        .map(|l| sys.real_algebra_frame(l))
        .collect::<Result<_>>()?;
    let mut kernels: Vec<Orthonormal> = Vec::with_capacity(bound);
    let mut levels = Vec::with_capacity(bound);
    for j in 1..=bound {
        let frame = &frames[j - 1];
        let amb = frame.ambient();
        let mut on = Orthonormal::new(frame.dim(), PIVOT_TOL);
        let mut kernel_basis = Vec::new();
        let mut by_depth = Vec::new();
        let add = |m: &Matrix, on: &mut Orthonormal, kb: &mut Vec<Matrix>| -> Result<()> {
            let m = if amb.field == Field::Complex {
                m.to_complex()
            } else {
                m.clone()
            };
            let (coords, resid) = frame.coords(&m)?;
            if resid > 1e-9 * m.sup_norm().max(1.0) {
                return Err(Error::Construction(format!(
                    "kernel direction at level {j} lies outside the level algebra"
                )));
            }
            if on.push(&coords) {
                kb.push(m.clone());
            }
            if category == Field::Complex {
                let im = m.scale_complex(Complex64::i());
                let (coords, _) = frame.coords(&im)?;
                if on.push(&coords) {
                    kb.push(im);
                }
            }
            Ok(())
        };
        for fam in ledger.families.iter().filter(|f| f.level == j) {
            if let Closure::DenseInCircle { direction } = &fam.closure {
                add(direction, &mut on, &mut kernel_basis)?;
            }
        }
        for depth in j..=bound {
            for fam in ledger.families.iter().filter(|f| f.level == j) {
                if !matches!(fam.closure, Closure::DenseInCircle { .. }) {
                    continue;
                }
                for g in fam.generators.iter().filter(|g| g.witness == depth) {
                    if let Ok(log) = logm_near_identity(&g.element) {
                        if log.sup_norm() > 0.0 {
                            add(&log, &mut on, &mut kernel_basis)?;
                        }
                    }
                }
            }
            let dphi = sys.derivative_matrix(depth, j)?;
            for v in nullspace(&dphi, Field::Real, PIVOT_TOL) {
                let m = frame.combine(&v.map(|z| c(z.re)));
                add(&m, &mut on, &mut kernel_basis)?;
            }
            by_depth.push(on.dim());
        }
        let scale = if category == Field::Complex { 2 } else { 1 };
        levels.push(QuotientLevel {
            level: j,
            algebra_dim: frame.dim(),
            kernel_dim: on.dim() / scale,
            quotient_dim: (frame.dim() - on.dim()) / scale,
            kernel_dims_by_depth: by_depth,
            kernel_basis,
        });
        kernels.push(on);
    }

    // orthonormal complements in frame coordinates
    let complements: Vec<Vec<CVec>> = kernels
        .iter()
        .zip(&frames)
        .map(|(on, frame)| complement(on, frame.dim()))
        .collect();
    let mut bonding = Vec::with_capacity(bound.saturating_sub(1));
    let mut margins = Vec::with_capacity(bound.saturating_sub(1));
    for j in 1..bound {
        let dphi = sys.step_derivative_matrix(j)?;
        // 𝔫_j must land in 𝔫_{j+1}
        for v in kernels[j - 1].vectors() {
            let img = &dphi * v;
            if kernels[j].relative_residual(&img) > 1e-8 && img.norm() > 1e-12 {
                return Err(Error::Construction(format!(
                    "bonding derivative maps 𝔫_{j} outside 𝔫_{}",
                    j + 1
                )));
            }
        }
        let (src, tgt) = (&complements[j - 1], &complements[j]);
        let mut induced = CMat::zeros(tgt.len(), src.len());
        for (col, v) in src.iter().enumerate() {
            let img = &dphi * v;
            for (row, q) in tgt.iter().enumerate() {
                induced[(row, col)] = q.dotc(&img);
            }
        }
        let margin = if src.is_empty() {
            f64::INFINITY
        } else if tgt.len() < src.len() {
            0.0
        } else {
            induced.map(|z| z.re).singular_values().min()
        };
        if margin <= PIVOT_TOL {
            return Err(Error::Construction(format!(
                "induced bonding derivative out of level {j} is not injective (margin {margin:.3e}); kernels are mis-declared"
            )));
        }
        margins.push(margin);
        bonding.push(Bonding::Linear(induced));
    }
    let stabilized = levels.iter().all(|l| {
        let d = &l.kernel_dims_by_depth;
        d.len() < 2 || d[d.len() - 1] == d[d.len() - 2]
    });
    let qsys = SystemDescriptor::new(
        ObjectKind::VectorSpace,
        Field::Real,
        complements.iter().map(Vec::len).collect(),
        bonding,
    )?;
    Ok((
        qsys,
        QuotientReport {
            category,
            bound,
            levels,
            injectivity_margins: margins,
            stabilized,
        },
    ))
}

fn complement(on: &Orthonormal, dim: usize) -> Vec<CVec> {
    let mut full = on.clone();
    let mut out = Vec::new();
    for k in 0..dim {
        let mut e = CVec::zeros(dim);
        e[k] = c(1.0);
        let before = full.dim();
        if full.push(&e) {
            out.push(full.vectors()[before].clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn diag(xs: &[f64]) -> Matrix {
        Matrix::diag(Field::Real, &xs.iter().map(|&x| c(x)).collect::<Vec<_>>()).unwrap()
    }

    fn cx(z: Complex64) -> Matrix {
        Matrix::complex(1, &[z]).unwrap()
    }

    #[test]
    fn lift_block_system() {
        let s = SystemDescriptor::gl_block(Field::Real, vec![1, 2, 3]).unwrap();
        let p = LimitPoint::new(1, diag(&[2.0]));
        let l = lift(&s, &p, 3).unwrap();
        assert_eq!(l.level, 3);
        assert_eq!(l.rep, Element::Matrix(diag(&[2.0, 1.0, 1.0])));
        assert_eq!(lift(&s, &p, 1).unwrap(), p);
        assert!(matches!(
            lift(&s, &LimitPoint::new(2, diag(&[1.0, 1.0])), 1),
            Err(Error::Level { .. })
        ));
    }

    #[test]
    fn lift_squaring_system() {
        let s = SystemDescriptor::cx_squaring(3).unwrap();
        let p = LimitPoint::new(1, cx(Complex64::i()));
        let l = lift(&s, &p, 3).unwrap();
        // i^4 = 1
        assert!(l.rep.dist(&Element::Matrix(cx(c(1.0)))) < 1e-15);
    }

    #[test]
    fn limit_equality() {
        let s = SystemDescriptor::gl_block(Field::Real, vec![1, 2, 3]).unwrap();
        let p = LimitPoint::new(1, diag(&[2.0]));
        assert!(limit_eq(&s, &p, &LimitPoint::new(2, diag(&[2.0, 1.0])), 3).unwrap());
        assert!(!limit_eq(&s, &p, &LimitPoint::new(1, diag(&[3.0])), 3).unwrap());

        let sq = SystemDescriptor::cx_squaring(3).unwrap();
        let a = LimitPoint::new(1, cx(c(-1.0)));
        let b = LimitPoint::new(1, cx(c(1.0)));
        assert!(!limit_eq(&sq, &a, &b, 1).unwrap());
        assert!(limit_eq(&sq, &a, &b, 2).unwrap());
        assert!(limit_eq(&s, &p, &p, 1).unwrap());
        assert!(limit_eq(&s, &p, &p, 0).is_err());
    }

    #[test]
    fn cones() {
        let mut rng = substream(1, "cones");
        let s = SystemDescriptor::gl_block(Field::Real, vec![1, 2, 3]).unwrap();
        let det: ConeMap =
            Arc::new(|x: &Element| Ok(Element::Matrix(Matrix::complex(1, &[x.as_matrix()?.det()])?)));
        let psi = vec![det.clone(); 3];
        let r = check_cone(&s, &psi, 10, &mut rng).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_residual < 1e-12);

        let alg = SystemDescriptor::gl_algebra_block(Field::Real, vec![1, 2, 3]).unwrap();
        let tr: ConeMap =
            Arc::new(|x: &Element| Ok(Element::Matrix(Matrix::complex(1, &[x.as_matrix()?.trace()])?)));
        assert!(
            check_cone(&alg, &vec![tr.clone(); 3], 10, &mut rng)
                .unwrap()
                .passed
        );

        let sq = SystemDescriptor::cx_squaring(3).unwrap();
        let proj: ConeMap = Arc::new(|x: &Element| Ok(x.clone()));
        let bad = check_cone(&sq, &vec![proj; 3], 10, &mut rng).unwrap();
        assert!(!bad.passed);
        assert!(bad.max_residual > 1e-3);

        assert!(matches!(
            check_cone(&s, &psi[..2], 1, &mut rng),
            Err(Error::Argument(_))
        ));

        let m = mediating_map(&s, &psi).unwrap();
        let a = m.apply(&LimitPoint::new(2, diag(&[3.0, 1.0]))).unwrap();
        let b = m.apply(&LimitPoint::new(1, diag(&[3.0]))).unwrap();
        assert!(a.dist(&Element::Matrix(cx(c(3.0)))) < 1e-14);
        assert!(a.dist(&b) < 1e-9);
        let mt = mediating_map(&alg, &vec![tr; 3]).unwrap();
        let e12 = Matrix::unit(Field::Real, 3, 0, 1);
        assert!(
            mt.apply(&LimitPoint::new(3, e12))
                .unwrap()
                .dist(&Element::Matrix(cx(c(0.0))))
                == 0.0
        );
    }

    #[test]
    fn mediating_map_rejects_non_cone() {
        let sq = SystemDescriptor::cx_squaring(3).unwrap();
        let proj: ConeMap = Arc::new(|x: &Element| Ok(x.clone()));
        assert!(matches!(
            mediating_map(&sq, &vec![proj; 3]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn builtin_systems_validate() {
        let mut rng = substream(2, "validate");
        for s in [
            SystemDescriptor::gl_block(Field::Real, vec![1, 2, 4]).unwrap(),
            SystemDescriptor::gl_block(Field::Complex, vec![1, 2]).unwrap(),
            SystemDescriptor::cx_squaring(4).unwrap(),
            SystemDescriptor::r_times_so2(3).unwrap(),
        ] {
            let r = s.validate(3, &mut rng).unwrap();
            assert!(r.passed, "{s:?}: {r:?}");
        }
    }

    #[test]
    fn corrupted_bonding_fails_validation() {
        let mut rng = substream(3, "corrupt");
        let bad = NamedHom::new(
            |a: &Matrix| a.add(&Matrix::unit(a.field(), a.n(), 0, 0).scale(1e-3)),
            |x: &Matrix| Ok(x.clone()),
        );
        let s = SystemDescriptor::new(
            ObjectKind::MatrixGroup,
            Field::Real,
            vec![2, 2],
            vec![Bonding::Named {
                name: "bad".into(),
                hom: bad,
            }],
        )
        .unwrap();
        let r = s.validate(3, &mut rng).unwrap();
        assert!(!r.passed);
        assert!(r.homomorphism_residual > 1e-10);
    }

    #[test]
    fn vector_systems() {
        let s = SystemDescriptor::vector_block(Field::Real, vec![1, 2, 3]).unwrap();
        let p = LimitPoint::new(1, LevelledVector::real(&[4.0]));
        let l = lift(&s, &p, 3).unwrap();
        assert_eq!(l.rep, Element::Vector(LevelledVector::real(&[4.0, 0.0, 0.0])));
        let lin = CMat::from_row_slice(2, 1, &[c(1.0), c(1.0)]);
        let s2 = SystemDescriptor::new(
            ObjectKind::VectorSpace,
            Field::Real,
            vec![1, 2],
            vec![Bonding::Linear(lin)],
        )
        .unwrap();
        let l2 = lift(&s2, &p, 2).unwrap();
        assert_eq!(l2.rep, Element::Vector(LevelledVector::real(&[4.0, 4.0])));
    }

    #[test]
    fn squaring_quotient() {
        let s = SystemDescriptor::cx_squaring(5).unwrap();
        let k = KernelLedger::cx_squaring(5);
        let (q, rep) = injective_quotient(&s, &k, 5, Field::Real).unwrap();
        assert_eq!(rep.levels[0].algebra_dim, 2);
        assert_eq!(rep.levels[0].quotient_dim, 1);
        assert_eq!(q.dims(), &[1, 1, 1, 1, 1]);
        assert!(rep.stabilized);
        let (_, crep) = injective_quotient(&s, &k, 5, Field::Complex).unwrap();
        assert!(crep.levels.iter().all(|l| l.quotient_dim == 0));
    }

    #[test]
    fn injective_system_quotient_is_identity() {
        let s = SystemDescriptor::gl_block(Field::Real, vec![1, 2, 3]).unwrap();
        let (q, rep) = injective_quotient(&s, &KernelLedger::default(), 3, Field::Real).unwrap();
        assert_eq!(q.dims(), &[1, 4, 9]);
        assert!(rep.levels.iter().all(|l| l.kernel_dim == 0));
    }

    #[test]
    fn r_times_so2_quotient() {
        let s = SystemDescriptor::r_times_so2(4).unwrap();
        let k = KernelLedger::r_times_so2(4);
        let (_, rep) = injective_quotient(&s, &k, 4, Field::Real).unwrap();
        for l in &rep.levels {
            assert_eq!(l.algebra_dim, 2);
            assert_eq!(l.quotient_dim, 1);
            // the kernel direction is the rotation generator
            let j = rotation_generator_3();
            let on = Frame::new(Ambient::real(3), l.kernel_basis.clone()).unwrap();
            assert!(on.coords(&j).unwrap().1 < 1e-12);
        }
    }

    #[test]
    fn ledger_verification_catches_bad_generators() {
        let s = SystemDescriptor::cx_squaring(3).unwrap();
        let ledger = KernelLedger {
            families: vec![KernelFamily {
                level: 1,
                generators: vec![KernelGenerator {
                    element: cx(Complex64::i()),
                    witness: 2,
                }],
                closure: Closure::Finite,
            }],
        };
        assert!(matches!(ledger.verify(&s), Err(Error::Contract(_))));
    }

    #[test]
    fn algebra_kernels_are_detected() {
        // diag(a, b) -> diag(a, 1) kills the second factor
        let proj = NamedHom::new(
            |a: &Matrix| {
                let mut m = a.clone().into_data();
                m[(1, 1)] = c(1.0);
                Ok(Matrix::from_parts(a.field(), m))
            },
            |x: &Matrix| {
                let mut m = x.clone().into_data();
                m[(1, 1)] = c(0.0);
                Ok(Matrix::from_parts(x.field(), m))
            },
        );
        let s = SystemDescriptor::new(
            ObjectKind::MatrixGroup,
            Field::Real,
            vec![2, 2],
            vec![Bonding::Named {
                name: "proj".into(),
                hom: proj,
            }],
        )
        .unwrap()
        .with_algebra(vec![
            vec![
                Matrix::unit(Field::Real, 2, 0, 0),
                Matrix::unit(Field::Real, 2, 1, 1)
            ];
            2
        ])
        .unwrap();
        let (q, rep) = injective_quotient(&s, &KernelLedger::default(), 2, Field::Real).unwrap();
        assert_eq!(rep.levels[0].kernel_dim, 1);
        assert_eq!(rep.levels[1].kernel_dim, 0);
        assert_eq!(q.dims(), &[1, 2]);
        assert_eq!(rep.levels[0].kernel_dims_by_depth, vec![0, 1]);
    }

    #[test]
    fn system_json() {
        let v = serde_json::json!({
            "kind": "matrix-group",
            "field": "C",
            "dims": [1, 1, 1],
            "algebra_scalars": "R",
            "bonding": [{"type": "named", "name": "square"}, {"type": "named", "name": "square"}],
            "kernels": [{
                "level": 1,
                "closure": "dense-in-circle",
                "direction": {"n": 1, "field": "C", "rows": [[[0.0, 1.0]]]},
                "generators": [{"value": {"n": 1, "field": "C", "rows": [[[-1.0, 0.0]]]}, "witness": 2}]
            }]
        });
        let (s, k) = SystemDescriptor::from_json(&v, &Registry::builtin()).unwrap();
        assert_eq!(s.levels(), 3);
        assert_eq!(k.families.len(), 1);
        k.verify(&s).unwrap();
        let bad = serde_json::json!({"kind": "matrix-group", "dims": [1, 2], "bonding": [{"type": "named", "name": "nope"}]});
        assert!(SystemDescriptor::from_json(&bad, &Registry::builtin()).is_err());
    }
}
