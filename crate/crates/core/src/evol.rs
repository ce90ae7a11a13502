//! Right product integrals of curves in matrix Lie algebras.
//!
//! A path `η` with `η(a) = I` and `η′(t) η(t)⁻¹ = γ(t)` is computed with
//! fixed-step classical RK4. Curves on longer intervals are solved per unit
//! interval and stitched; [`partition_for_chart`] and the Grönwall budget
//! tools work in the logarithm chart around the identity.

use std::f64::consts::TAU;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::matrix::{c, sup_norm, CMat};
use crate::mlie::{bracket_data, logm_near_identity};
use crate::rng::substream;
use crate::{Error, Field, Matrix, Result};

/// Default integration step.
pub const DEFAULT_STEP: f64 = 1e-3;
/// Default chart radius for [`partition_for_chart`].
pub const DEFAULT_CHART_RADIUS: f64 = 0.5;
/// Slack added to the Grönwall bound for solver error.
pub const SOLVER_SLACK: f64 = 1e-7;
/// Maximum number of chart segments.
pub const MAX_SEGMENTS: usize = 10_000;

pub type CurveFn = Arc<dyn Fn(f64) -> Matrix + Send + Sync>;

#[derive(Clone)]
enum Form {
    Sampled {
        ts: Vec<f64>,
        values: Vec<CMat>,
        slopes: Vec<CMat>,
    },
    Closed {
        name: String,
        eval: CurveFn,
    },
}

/// A `C¹` curve `[a, b] → gl_n(𝕂)` at a fixed level `n`.
#[derive(Clone)]
pub struct CurveDescriptor {
    level: usize,
    field: Field,
    domain: (f64, f64),
    form: Form,
}

impl std::fmt::Debug for CurveDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let form = match &self.form {
            Form::Sampled { ts, .. } => format!("sampled({} points)", ts.len()),
            Form::Closed { name, .. } => format!("closed({name})"),
        };
        write!(
            f,
            "Curve(level {}, {}, [{}, {}], {form})",
            self.level, self.field, self.domain.0, self.domain.1
        )
    }
}

fn check_domain(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a <= b) {
        return Err(Error::Argument(format!("invalid domain [{a}, {b}]")));
    }
    Ok(())
}

impl CurveDescriptor {
    /// Monotone piecewise-cubic (PCHIP) interpolation, entrywise.
    pub fn sampled(ts: Vec<f64>, values: Vec<Matrix>) -> Result<Self> {
        if ts.len() < 2 || ts.len() != values.len() {
            return Err(Error::Argument(
                "a sampled curve needs at least two (t, value) pairs".into(),
            ));
        }
        if ts.windows(2).any(|w| !(w[1] > w[0])) || ts.iter().any(|t| !t.is_finite()) {
            return Err(Error::Argument("sample times must be strictly increasing".into()));
        }
        let field = values[0].field();
        let level = values[0].n();
        for v in &values {
            field.ensure_same(v.field())?;
            if v.n() != level {
                return Err(Error::Dimension("sampled values differ in size".into()));
            }
            if !v.is_finite() {
                return Err(Error::Numeric("non-finite curve sample".into()));
            }
        }
        let data: Vec<CMat> = values.into_iter().map(Matrix::into_data).collect();
        let mut slopes = vec![CMat::zeros(level, level); ts.len()];
        for i in 0..level {
            for j in 0..level {
                let re: Vec<f64> = data.iter().map(|m| m[(i, j)].re).collect();
                let im: Vec<f64> = data.iter().map(|m| m[(i, j)].im).collect();
                let (dre, dim) = (pchip_slopes(&ts, &re), pchip_slopes(&ts, &im));
                for k in 0..ts.len() {
                    slopes[k][(i, j)] = Complex64::new(dre[k], dim[k]);
                }
            }
        }
        Ok(Self {
            level,
            field,
            domain: (ts[0], ts[ts.len() - 1]),
            form: Form::Sampled {
                ts,
                values: data,
                slopes,
            },
        })
    }

    /// A registered closed-form evaluator.
    pub fn closed<F>(name: &str, level: usize, field: Field, domain: (f64, f64), eval: F) -> Result<Self>
    where
        F: Fn(f64) -> Matrix + Send + Sync + 'static,
    {
        check_domain(domain.0, domain.1)?;
        Ok(Self {
            level,
            field,
            domain,
            form: Form::Closed {
                name: name.to_string(),
                eval: Arc::new(eval),
            },
        })
    }

    pub fn constant(x: Matrix, domain: (f64, f64)) -> Result<Self> {
        let (n, field) = (x.n(), x.field());
        Self::closed("constant", n, field, domain, move |_| x.clone())
    }

    /// `γ(t) = Σ_k C_k t^k`.
    pub fn polynomial(coefficients: Vec<Matrix>, domain: (f64, f64)) -> Result<Self> {
        let first = coefficients
            .first()
            .ok_or_else(|| Error::Argument("polynomial needs a coefficient".into()))?;
        let (n, field) = (first.n(), first.field());
        for cm in &coefficients {
            field.ensure_same(cm.field())?;
            if cm.n() != n {
                return Err(Error::Dimension("polynomial coefficients differ in size".into()));
            }
        }
        let data: Vec<CMat> = coefficients.into_iter().map(Matrix::into_data).collect();
        Self::closed("polynomial", n, field, domain, move |t| {
            let mut acc = CMat::zeros(n, n);
            for cm in data.iter().rev() {
                acc = acc * c(t) + cm;
            }
            Matrix::from_parts(field, acc)
        })
    }

    /// `θ′(t) J` with `θ(t) = amplitude · sin(ω t)` and `J` the generator of
    /// `SO(2)`; its evolution is the rotation by `θ(t)`.
    pub fn rotation(amplitude: f64, omega: f64, domain: (f64, f64)) -> Result<Self> {
        Self::closed("rotation", 2, Field::Real, domain, move |t| {
            let d = amplitude * omega * (omega * t).cos();
            Matrix::real(2, &[0.0, -d, d, 0.0]).expect("2x2")
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Sample times of a sampled curve.
    pub fn knots(&self) -> Option<&[f64]> {
        match &self.form {
            Form::Sampled { ts, .. } => Some(ts),
            Form::Closed { .. } => None,
        }
    }

    pub(crate) fn eval_data(&self, t: f64) -> CMat {
        match &self.form {
            Form::Closed { eval, .. } => eval(t).into_data(),
            Form::Sampled { ts, values, slopes } => {
                let t = t.clamp(ts[0], ts[ts.len() - 1]);
                let k = ts.partition_point(|&s| s <= t).clamp(1, ts.len() - 1) - 1;
                let h = ts[k + 1] - ts[k];
                let u = (t - ts[k]) / h;
                let (u2, u3) = (u * u, u * u * u);
                let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
                let h10 = u3 - 2.0 * u2 + u;
                let h01 = -2.0 * u3 + 3.0 * u2;
                let h11 = u3 - u2;
                &values[k] * c(h00)
                    + &slopes[k] * c(h10 * h)
                    + &values[k + 1] * c(h01)
                    + &slopes[k + 1] * c(h11 * h)
            }
        }
    }

    pub fn eval(&self, t: f64) -> Result<Matrix> {
        let slack = 1e-12 * (1.0 + self.domain.0.abs().max(self.domain.1.abs()));
        if t < self.domain.0 - slack || t > self.domain.1 + slack {
            return Err(Error::Argument(format!(
                "t = {t} outside [{}, {}]",
                self.domain.0, self.domain.1
            )));
        }
        let m = self.eval_data(t);
        if m.shape() != (self.level, self.level) {
            return Err(Error::Dimension(format!(
                "curve evaluator returned {}x{} at level {}",
                m.nrows(),
                m.ncols(),
                self.level
            )));
        }
        if !m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::Numeric(format!("non-finite curve value at t = {t}")));
        }
        Ok(Matrix::from_parts(self.field, m))
    }

    /// `t ↦ diag(γ(t), 0)` at level `m`.
    pub fn embed(&self, m: usize) -> Result<Self> {
        if m < self.level {
            return Err(Error::LevelUnderflow {
                requested: m,
                canonical: self.level,
            });
        }
        let inner = self.clone();
        Self::closed("embedded", m, self.field, self.domain, move |t| {
            Matrix::from_parts(inner.field, inner.eval_data(t))
                .embed_algebra(m)
                .expect("m >= level")
        })
    }

    /// Restriction to `[a, b]` inside the domain.
    pub fn restrict(&self, a: f64, b: f64) -> Result<Self> {
        check_domain(a, b)?;
        if a < self.domain.0 || b > self.domain.1 {
            return Err(Error::Argument(format!(
                "[{a}, {b}] not inside [{}, {}]",
                self.domain.0, self.domain.1
            )));
        }
        let mut out = self.clone();
        out.domain = (a, b);
        Ok(out)
    }

    /// `t ↦ (b − a) γ(a + t (b − a))` on `[0, 1]`.
    pub fn rescaled(&self, a: f64, b: f64) -> Result<Self> {
        self.restrict(a, b)?;
        let inner = self.clone();
        Self::closed("segment", self.level, self.field, (0.0, 1.0), move |t| {
            Matrix::from_parts(inner.field, inner.eval_data(a + t * (b - a)) * c(b - a))
        })
    }

    /// `γ + δ` for a curve `δ` on the same domain.
    pub fn perturbed(&self, delta: &CurveDescriptor) -> Result<Self> {
        self.field.ensure_same(delta.field)?;
        if delta.level != self.level || delta.domain != self.domain {
            return Err(Error::Dimension(
                "perturbation must share level and domain".into(),
            ));
        }
        let (a, b) = (self.clone(), delta.clone());
        Self::closed("perturbed", self.level, self.field, self.domain, move |t| {
            Matrix::from_parts(a.field, a.eval_data(t) + b.eval_data(t))
        })
    }

    /// Sup distance on a uniform grid of `points` nodes plus all knots.
    pub fn sup_distance(&self, other: &CurveDescriptor, points: usize) -> Result<f64> {
        if other.level != self.level || other.domain != self.domain {
            return Err(Error::Dimension("curves must share level and domain".into()));
        }
        let (a, b) = self.domain;
        let mut ts: Vec<f64> = (0..points.max(2))
            .map(|k| a + (b - a) * k as f64 / (points.max(2) - 1) as f64)
            .collect();
        ts.extend(self.knots().unwrap_or(&[]));
        ts.extend(other.knots().unwrap_or(&[]));
        Ok(ts
            .iter()
            .map(|&t| sup_norm(&(self.eval_data(t) - other.eval_data(t))))
            .fold(0.0, f64::max))
    }

    /// Parses the curve JSON formats.
    pub fn from_json(v: &Value) -> Result<Self> {
        let domain = match v.get("domain") {
            Some(d) => {
                let d: Vec<f64> = serde_json::from_value(d.clone())?;
                if d.len() != 2 {
                    return Err(Error::Argument("domain must be [a, b]".into()));
                }
                (d[0], d[1])
            }
            None => (0.0, 1.0),
        };
        let field: Field = match v.get("field") {
            Some(f) => serde_json::from_value(f.clone())?,
            None => Field::Real,
        };
        let matrix = |m: &Value| -> Result<Matrix> {
            if m.is_array() {
                Matrix::from_json(&serde_json::json!({ "field": field, "rows": m }))
            } else {
                Matrix::from_json(m)
            }
        };
        let declared = v.get("level").and_then(Value::as_u64).map(|l| l as usize);
        let curve = if let Some(samples) = v.get("samples").and_then(Value::as_array) {
            let mut ts = Vec::with_capacity(samples.len());
            let mut values = Vec::with_capacity(samples.len());
            for s in samples {
                ts.push(
                    s.get("t")
                        .and_then(Value::as_f64)
                        .ok_or_else(|| Error::Argument("sample needs numeric \"t\"".into()))?,
                );
                values.push(matrix(
                    s.get("value")
                        .ok_or_else(|| Error::Argument("sample needs \"value\"".into()))?,
                )?);
            }
            let curve = Self::sampled(ts, values)?;
            if v.get("domain").is_some() && curve.domain != domain {
                return Err(Error::Argument("domain does not match the sample grid".into()));
            }
            curve
        } else if let Some(name) = v.get("builtin").and_then(Value::as_str) {
            let params = v.get("params").cloned().unwrap_or(Value::Null);
            match name {
                "constant" => Self::constant(
                    matrix(
                        params
                            .get("value")
                            .ok_or_else(|| Error::Argument("constant curve needs params.value".into()))?,
                    )?,
                    domain,
                )?,
                "polynomial" => Self::polynomial(
                    params
                        .get("coefficients")
                        .and_then(Value::as_array)
                        .ok_or_else(|| Error::Argument("polynomial curve needs params.coefficients".into()))?
                        .iter()
                        .map(&matrix)
                        .collect::<Result<_>>()?,
                    domain,
                )?,
                "rotation" => Self::rotation(
                    params.get("amplitude").and_then(Value::as_f64).unwrap_or(1.0),
                    params.get("omega").and_then(Value::as_f64).unwrap_or(1.0),
                    domain,
                )?,
                other => return Err(Error::Argument(format!("unknown builtin curve {other:?}"))),
            }
        } else {
            return Err(Error::Argument(
                "curve JSON needs \"samples\" or \"builtin\"".into(),
            ));
        };
        if let Some(l) = declared {
            if l != curve.level {
                return Err(Error::Dimension(format!(
                    "declared level {l} but values are {0}x{0}",
                    curve.level
                )));
            }
        }
        Ok(curve)
    }
}

/// Fritsch–Carlson slopes for monotone cubic interpolation.
fn pchip_slopes(ts: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = ts.len();
    let h: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

/// Dense output of a solved path: nodes, values and derivatives, evaluated
/// by cubic Hermite interpolation between nodes.
#[derive(Debug, Clone)]
pub struct PathDescriptor {
    level: usize,
    field: Field,
    ts: Vec<f64>,
    values: Vec<CMat>,
    derivatives: Vec<CMat>,
}

impl PathDescriptor {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.ts[0], self.ts[self.ts.len() - 1])
    }

    pub fn times(&self) -> &[f64] {
        &self.ts
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn node(&self, k: usize) -> Matrix {
        Matrix::from_parts(self.field, self.values[k].clone())
    }

    pub fn start(&self) -> Matrix {
        self.node(0)
    }

    pub fn endpoint(&self) -> Matrix {
        self.node(self.ts.len() - 1)
    }

    pub fn eval(&self, t: f64) -> Result<Matrix> {
        let (a, b) = self.domain();
        if t < a - 1e-12 || t > b + 1e-12 {
            return Err(Error::Argument(format!("t = {t} outside [{a}, {b}]")));
        }
        if self.ts.len() == 1 {
            return Ok(self.node(0));
        }
        let t = t.clamp(a, b);
        let k = self.ts.partition_point(|&s| s <= t).clamp(1, self.ts.len() - 1) - 1;
        let h = self.ts[k + 1] - self.ts[k];
        let u = (t - self.ts[k]) / h;
        let (u2, u3) = (u * u, u * u * u);
        let m = &self.values[k] * c(2.0 * u3 - 3.0 * u2 + 1.0)
            + &self.derivatives[k] * c((u3 - 2.0 * u2 + u) * h)
            + &self.values[k + 1] * c(-2.0 * u3 + 3.0 * u2)
            + &self.derivatives[k + 1] * c((u3 - u2) * h);
        Ok(Matrix::from_parts(self.field, m))
    }

    /// Right multiplication of every value by a constant matrix.
    fn times_right(mut self, g: &CMat) -> Self {
        for v in self.values.iter_mut().chain(self.derivatives.iter_mut()) {
            *v = &*v * g;
        }
        self
    }

    /// Dense output as CSV: `t` then the row-major entries (`re`, `im`
    /// pairs for complex paths).
    pub fn to_csv(&self) -> String {
        let n = self.level;
        let mut header = vec!["t".to_string()];
        for i in 1..=n {
            for j in 1..=n {
                match self.field {
                    Field::Real => header.push(format!("e{i}{j}")),
                    Field::Complex => {
                        header.push(format!("re{i}{j}"));
                        header.push(format!("im{i}{j}"));
                    }
                }
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for (k, t) in self.ts.iter().enumerate() {
            let row: Vec<String> = std::iter::once(format!("{t}"))
                .chain(self.node(k).flatten().iter().map(|x| format!("{x}")))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Argument(format!("step must be positive, got {step}")));
    }
    Ok(())
}

fn finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Solves `η′ = γ η`, `η(a) = I` with classical RK4. The step is shrunk to
/// `(b − a) / ⌈(b − a) / step⌉` so that the grid ends at `b`.
pub fn evolve(curve: &CurveDescriptor, step: f64) -> Result<PathDescriptor> {
    check_step(step)?;
    let (a, b) = curve.domain;
    let n = curve.level;
    let steps = if b > a {
        (((b - a) / step) - 1e-9).ceil().max(1.0) as usize
    } else {
        0
    };
    let h = if steps > 0 { (b - a) / steps as f64 } else { 0.0 };
    let g = |t: f64| -> Result<CMat> { Ok(curve.eval(t)?.into_data()) };
    let mut ts = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut derivatives = Vec::with_capacity(steps + 1);
    let mut eta = CMat::identity(n, n);
    let mut g0 = g(a)?;
    ts.push(a);
    derivatives.push(&g0 * &eta);
    values.push(eta.clone());
    for k in 0..steps {
        let t = a + k as f64 * h;
        let t1 = if k + 1 == steps { b } else { a + (k + 1) as f64 * h };
        let gm = g(t + 0.5 * h)?;
        let g1 = g(t1)?;
        let k1 = &g0 * &eta;
        let k2 = &gm * (&eta + &k1 * c(0.5 * h));
        let k3 = &gm * (&eta + &k2 * c(0.5 * h));
        let k4 = &g1 * (&eta + &k3 * c(h));
        eta += (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(h / 6.0);
        if !finite(&eta) {
            return Err(Error::Numeric(format!("solution blew up near t = {t1}")));
        }
        ts.push(t1);
        derivatives.push(&g1 * &eta);
        values.push(eta.clone());
        g0 = g1;
    }
    Ok(PathDescriptor {
        level: n,
        field: curve.field,
        ts,
        values,
        derivatives,
    })
}

/// Endpoint of [`evolve`] on `[0, 1]` at the default step.
pub fn evol_point(curve: &CurveDescriptor) -> Result<Matrix> {
    if curve.domain != (0.0, 1.0) {
        return Err(Error::Argument(format!(
            "evol_point needs the domain [0, 1], got [{}, {}]",
            curve.domain.0, curve.domain.1
        )));
    }
    Ok(evolve(curve, DEFAULT_STEP)?.endpoint())
}

/// Central-difference right logarithmic derivative `η′ η⁻¹` on the interior
/// nodes, as a sampled curve.
pub fn logderiv(path: &PathDescriptor) -> Result<CurveDescriptor> {
    if path.len() < 4 {
        return Err(Error::Argument("logderiv needs at least four path nodes".into()));
    }
    let mut ts = Vec::with_capacity(path.len() - 2);
    let mut values = Vec::with_capacity(path.len() - 2);
    for k in 1..path.len() - 1 {
        let inv = path.values[k]
            .clone()
            .try_inverse()
            .filter(|_| path.values[k].determinant().norm() > 1e-12)
            .ok_or_else(|| Error::Numeric(format!("path is singular at t = {}", path.ts[k])))?;
        let d = (&path.values[k + 1] - &path.values[k - 1]) * c(1.0 / (path.ts[k + 1] - path.ts[k - 1]));
        ts.push(path.ts[k]);
        values.push(Matrix::from_parts(path.field, d * inv));
    }
    CurveDescriptor::sampled(ts, values)
}

/// `sup_k ‖logderiv(evolve(γ))(t_k) − γ(t_k)‖_∞` over interior nodes.
pub fn roundtrip_error(curve: &CurveDescriptor, step: f64) -> Result<f64> {
    let path = evolve(curve, step)?;
    let back = logderiv(&path)?;
    let knots = back.knots().unwrap_or(&[]).to_vec();
    let mut worst = 0.0f64;
    for t in knots {
        worst = worst.max(back.eval(t)?.dist(&curve.eval(t)?));
    }
    Ok(worst)
}

/// Evolution over an integer-aligned interval `[k_min, k_max] ∋ 0`: each unit
/// interval is solved from the identity, then composed forwards
/// (`η(t) = η_k(t) η_{k−1}(k) ⋯ η_0(1)`) and backwards
/// (`η(t) = η_k(t) η_k(k+1)⁻¹ ⋯`).
pub fn stitch(curve: &CurveDescriptor, step: f64) -> Result<PathDescriptor> {
    check_step(step)?;
    let (a, b) = curve.domain;
    if a.fract() != 0.0 || b.fract() != 0.0 {
        return Err(Error::Argument(format!(
            "domain [{a}, {b}] is not integer-aligned"
        )));
    }
    if a > 0.0 || b < 0.0 {
        return Err(Error::Argument(format!("domain [{a}, {b}] does not contain 0")));
    }
    let (kmin, kmax) = (a as i64, b as i64);
    if kmin == kmax {
        return evolve(curve, step);
    }
    let pieces: Vec<(i64, PathDescriptor)> = (kmin..kmax)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|k| Ok((k, evolve(&curve.restrict(k as f64, (k + 1) as f64)?, step)?)))
        .collect::<Result<_>>()?;
    let n = curve.level;
    let mut placed: Vec<Option<PathDescriptor>> = vec![None; pieces.len()];
    let index = |k: i64| (k - kmin) as usize;
    let mut carry = CMat::identity(n, n);
    for (k, piece) in pieces.iter().filter(|(k, _)| *k >= 0) {
        let end = piece.values[piece.len() - 1].clone();
        placed[index(*k)] = Some(piece.clone().times_right(&carry));
        carry = end * carry;
    }
    let mut carry = CMat::identity(n, n);
    for (k, piece) in pieces.iter().rev().filter(|(k, _)| *k < 0) {
        let inv = piece.values[piece.len() - 1]
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numeric(format!("unit solution on [{k}, {}] is singular", k + 1)))?;
        carry = inv * carry;
        placed[index(*k)] = Some(piece.clone().times_right(&carry));
    }
    let mut out: Option<PathDescriptor> = None;
    for piece in placed.into_iter().flatten() {
        out = Some(match out {
            None => piece,
            Some(mut acc) => {
                // the later piece owns the junction value
                acc.ts.pop();
                acc.values.pop();
                acc.derivatives.pop();
                acc.ts.extend_from_slice(&piece.ts);
                acc.values.extend_from_slice(&piece.values);
                acc.derivatives.extend_from_slice(&piece.derivatives);
                acc
            }
        });
    }
    out.ok_or_else(|| Error::Argument("empty domain".into()))
}

/// Largest mismatch between a stitched path and the left limits of its unit
/// pieces at the integer junctions.
pub fn junction_mismatch(path: &PathDescriptor) -> f64 {
    let mut worst = 0.0f64;
    for k in 1..path.len() {
        if path.ts[k - 1] == path.ts[k] {
            worst = worst.max(sup_norm(&(&path.values[k] - &path.values[k - 1])));
        }
    }
    worst
}

/// Breakpoints and rescaled segment curves of a chart partition.
#[derive(Debug, Clone)]
pub struct Partition {
    pub breakpoints: Vec<f64>,
    pub segments: Vec<CurveDescriptor>,
    /// `max_j sup_t ‖logm(η̄_j(t))‖_∞`.
    pub max_log_norm: f64,
}

/// Greedy partition keeping each renormalised segment
/// `η̄_j(t) = η(t_j + t(t_{j+1} − t_j)) η(t_j)⁻¹` inside `‖logm‖_∞ < ρ`.
pub fn partition_for_chart(curve: &CurveDescriptor, radius: f64, step: f64) -> Result<Partition> {
    if !(radius > 0.0) {
        return Err(Error::Argument(format!("radius must be positive, got {radius}")));
    }
    let path = evolve(curve, step)?;
    let log_norm = |k: usize, base_inv: &CMat| -> Option<f64> {
        let seg = Matrix::from_parts(path.field, &path.values[k] * base_inv);
        logm_near_identity(&seg).ok().map(|l| l.sup_norm())
    };
    let mut breakpoints = vec![path.ts[0]];
    let mut start = 0usize;
    let mut max_log = 0.0f64;
    while start + 1 < path.len() {
        let base_inv = path.values[start]
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numeric("singular path value".into()))?;
        let mut end = start;
        while end + 1 < path.len() {
            match log_norm(end + 1, &base_inv) {
                Some(r) if r < radius => {
                    max_log = max_log.max(r);
                    end += 1;
                }
                _ => break,
            }
        }
        if end == start {
            return Err(Error::Budget(format!(
                "radius {radius} is below one step of the path at t = {}",
                path.ts[start]
            )));
        }
        breakpoints.push(path.ts[end]);
        if breakpoints.len() - 1 > MAX_SEGMENTS {
            return Err(Error::Budget(format!(
                "radius {radius} needs more than {MAX_SEGMENTS} segments"
            )));
        }
        start = end;
    }
    if breakpoints.len() == 1 {
        breakpoints.push(path.ts[0]);
    }
    let segments = breakpoints
        .windows(2)
        .map(|w| curve.rescaled(w[0], w[1]))
        .collect::<Result<_>>()?;
    Ok(Partition {
        breakpoints,
        segments,
        max_log_norm: max_log,
    })
}

impl Partition {
    /// `|E_m ⋯ E_1 − evol(γ)|` with `E_j` the evolution of segment `j`.
    pub fn composition_residual(&self, curve: &CurveDescriptor, step: f64) -> Result<f64> {
        let whole = evolve(curve, step)?.endpoint();
        let mut acc = Matrix::identity(curve.field, curve.level);
        for (seg, w) in self.segments.iter().zip(self.breakpoints.windows(2)) {
            // rescaled segments live on [0, 1]; keep the original resolution
            let local = (step / (w[1] - w[0])).min(1.0);
            acc = evolve(seg, local)?.endpoint().mul(&acc)?;
        }
        Ok(acc.dist(&whole))
    }
}

/// The constants of one stage of the Grönwall argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallBudget {
    pub stage: u32,
    pub k: f64,
    pub epsilon: f64,
    pub alpha: f64,
    /// `min(α/k, 1)`: admissible sup distance of perturbed curves.
    pub s: f64,
}

impl GronwallBudget {
    /// `2^{−n−1} ε`.
    pub fn target(&self) -> f64 {
        (-(self.stage as f64) - 1.0).exp2() * self.epsilon
    }

    /// `(α/k)(e^k − 1)`.
    pub fn bound(&self) -> f64 {
        if self.alpha == 0.0 {
            return 0.0;
        }
        self.alpha / self.k * self.k.exp_m1()
    }

    pub fn satisfies_budget(&self) -> bool {
        self.bound() <= self.target()
    }
}

/// `α = 2^{−n−1} ε k / (e^k − 1)`, lowered by ulps if rounding makes the
/// re-substituted bound exceed its target.
pub fn gronwall_budget(k: f64, epsilon: f64, stage: u32) -> Result<GronwallBudget> {
    if !(k > 0.0 && k.is_finite() && epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!(
            "budget inputs must be positive, got k = {k}, ε = {epsilon}"
        )));
    }
    let target = (-(stage as f64) - 1.0).exp2() * epsilon;
    let em1 = k.exp_m1();
    let mut alpha = if em1.is_infinite() {
        0.0
    } else {
        target * (k / em1)
    };
    let mut b = GronwallBudget {
        stage,
        k,
        epsilon,
        alpha,
        s: 0.0,
    };
    while alpha > 0.0 && (b.bound() > target) {
        alpha = alpha.next_down();
        b.alpha = alpha;
    }
    b.s = (alpha / k).min(1.0);
    Ok(b)
}

/// Coefficients `b_j` of `z/(e^z − 1) = Σ b_j z^j`, i.e. `B_j / j!`.
fn bernoulli_over_factorial() -> &'static [f64] {
    static COEFFS: OnceLock<Vec<f64>> = OnceLock::new();
    COEFFS.get_or_init(|| {
        const TERMS: usize = 60;
        let mut inv_fact = vec![1.0f64; TERMS + 2];
        for k in 1..TERMS + 2 {
            inv_fact[k] = inv_fact[k - 1] / k as f64;
        }
        let mut b = vec![0.0f64; TERMS];
        b[0] = 1.0;
        for k in 1..TERMS {
            let s: f64 = (0..k).map(|j| b[j] * inv_fact[k - j + 1]).sum();
            // odd coefficients beyond the first vanish
            b[k] = if k > 1 && k % 2 == 1 { 0.0 } else { -s };
        }
        b
    })
}

/// The logarithm-chart vector field
/// `f(y, x) = d/ds|₀ log(exp(s y) exp(x)) = Σ_j (B_j/j!) ad_x^j y`.
///
/// The chart equation of `η′ = γ η` is `ζ′ = f(γ, ζ)` for `ζ = log η`.
pub fn chart_vector_field(y: &Matrix, x: &Matrix) -> Result<Matrix> {
    y.field().ensure_same(x.field())?;
    if 2.0 * x.spectral_norm() >= 0.9 * TAU {
        return Err(Error::Domain("chart vector field needs ‖ad_x‖ < 2π".into()));
    }
    Ok(Matrix::from_parts(
        x.field(),
        chart_field_data(y.data(), x.data()),
    ))
}

fn chart_field_data(y: &CMat, x: &CMat) -> CMat {
    let coeffs = bernoulli_over_factorial();
    let mut term = y.clone();
    let mut acc = y.clone();
    // |b_j| ≤ 2 (2π)^{-j} for j ≥ 2
    let mut envelope = 2.0;
    for &b in &coeffs[1..] {
        term = bracket_data(x, &term);
        envelope /= TAU;
        acc += &term * c(b);
        if sup_norm(&term) * envelope <= 1e-18 * sup_norm(&acc) {
            break;
        }
    }
    acc
}

/// Sampled estimate of the Lipschitz data of the chart flow: the maximum of
/// the `∞`-operator norms of `y ↦ f(y, x)` and of `d_x f(γ(t), x)` over the
/// chart path of `γ` and random points within `radius` of it.
///
/// This is an estimate, not a certified bound.
pub fn estimate_k(curve: &CurveDescriptor, radius: f64, samples: usize, seed: u64) -> Result<f64> {
    let path = evolve(curve, DEFAULT_STEP)?;
    let (a, b) = curve.domain;
    let n = curve.level;
    let field = curve.field;
    let mut rng = substream(seed, "evol/estimate-k");
    let units: Vec<CMat> = unit_directions(n, field);
    let op_norm = |cols: &[CMat]| -> f64 {
        // ∞-norm: max over output coordinates of summed absolute column entries
        let mut rows = vec![0.0f64; n * n * if field == Field::Complex { 2 } else { 1 }];
        for col in cols {
            for (r, z) in col.iter().enumerate() {
                rows[r] += z.re.abs();
                if field == Field::Complex {
                    rows[n * n + r] += z.im.abs();
                }
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    };
    let mut k = 0.0f64;
    let count = samples.max(2);
    for s in 0..count {
        let t = a + (b - a) * s as f64 / (count - 1) as f64;
        let zeta = logm_near_identity(&path.eval(t)?)?.into_data();
        let gamma = curve.eval(t)?.into_data();
        for trial in 0..4 {
            let x = if trial == 0 {
                zeta.clone()
            } else {
                let noise = CMat::from_fn(n, n, |_, _| match field {
                    Field::Real => c(rng.random_range(-radius..=radius)),
                    Field::Complex => {
                        Complex64::new(
                            rng.random_range(-radius..=radius),
                            rng.random_range(-radius..=radius),
                        ) * std::f64::consts::FRAC_1_SQRT_2
                    }
                });
                &zeta + noise
            };
            let lin: Vec<CMat> = units.iter().map(|u| chart_field_data(u, &x)).collect();
            const H: f64 = 1e-6;
            let jac: Vec<CMat> = units
                .iter()
                .map(|u| {
                    (chart_field_data(&gamma, &(&x + u * c(H))) - chart_field_data(&gamma, &(&x - u * c(H))))
                        * c(0.5 / H)
                })
                .collect();
            k = k.max(op_norm(&lin)).max(op_norm(&jac));
        }
    }
    Ok(k)
}

fn unit_directions(n: usize, field: Field) -> Vec<CMat> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let mut m = CMat::zeros(n, n);
            m[(i, j)] = c(1.0);
            out.push(m.clone());
            if field == Field::Complex {
                m[(i, j)] = Complex64::i();
                out.push(m);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    /// Sup distance of the curves.
    pub input_distance: f64,
    /// Sup distance of the chart images `log η̄` and `log η`.
    pub chart_distance: f64,
    /// `(α/k)(e^k − 1)`.
    pub bound: f64,
    pub passed: bool,
}

/// Compares the chart images of the evolutions of `γ` and `γ̄`. Rejects
/// inputs farther apart than `s`.
pub fn verify_perturbation(
    curve: &CurveDescriptor,
    perturbed: &CurveDescriptor,
    budget: &GronwallBudget,
    step: f64,
) -> Result<PerturbationReport> {
    let input_distance = curve.sup_distance(perturbed, 1001)?;
    if input_distance > budget.s {
        return Err(Error::Rejected(format!(
            "perturbation {input_distance:.3e} exceeds the input radius {:.3e}",
            budget.s
        )));
    }
    let p = evolve(curve, step)?;
    let q = evolve(perturbed, step)?;
    let mut chart_distance = 0.0f64;
    let chart = |m: &Matrix, t: f64| {
        logm_near_identity(m).map_err(|_| {
            Error::Budget(format!(
                "the evolution leaves the logarithm chart at t = {t}; partition the curve first"
            ))
        })
    };
    for k in 0..p.len() {
        let lp = chart(&p.node(k), p.ts[k])?;
        let lq = chart(&q.node(k), q.ts[k])?;
        chart_distance = chart_distance.max(lp.dist(&lq));
    }
    let bound = budget.bound();
    Ok(PerturbationReport {
        input_distance,
        chart_distance,
        bound,
        passed: chart_distance <= bound + SOLVER_SLACK,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchReport {
    pub runs: usize,
    pub violations: usize,
    pub max_chart_distance: f64,
    pub bound: f64,
    /// Largest `chart_distance / bound`.
    pub max_ratio: f64,
}

/// Perturbation `δ(t) = A + B t` with every entry of `A` and `B` at most
/// `0.4995·s`, so `‖δ‖_∞ < s` on `[0, 1]`.
pub fn random_affine_perturbation<R: Rng + ?Sized>(
    curve: &CurveDescriptor,
    s: f64,
    rng: &mut R,
) -> Result<CurveDescriptor> {
    let n = curve.level;
    let field = curve.field;
    let r = 0.4995 * s;
    let a = crate::rng::uniform_matrix(rng, field, n, r).into_data();
    let b = crate::rng::uniform_matrix(rng, field, n, r).into_data();
    let (t0, t1) = curve.domain;
    let span = (t1 - t0).max(1.0);
    let delta = CurveDescriptor::closed("affine", n, field, curve.domain, move |t| {
        Matrix::from_parts(field, &a + &b * c((t - t0) / span))
    })?;
    curve.perturbed(&delta)
}

/// Runs `count` seeded perturbations of `curve` within the budget's input
/// radius, in parallel, and counts violations of the Grönwall bound.
pub fn perturbation_batch(
    curve: &CurveDescriptor,
    budget: &GronwallBudget,
    count: usize,
    seed: u64,
    step: f64,
) -> Result<BatchReport> {
    let reports = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &format!("evol/perturbation/{i}"));
            let pert = random_affine_perturbation(curve, budget.s, &mut rng)?;
            verify_perturbation(curve, &pert, budget, step)
        })
        .collect::<Result<Vec<_>>>()?;
    let bound = budget.bound();
    let max_chart_distance = reports.iter().map(|r| r.chart_distance).fold(0.0, f64::max);
    Ok(BatchReport {
        runs: reports.len(),
        violations: reports.iter().filter(|r| !r.passed).count(),
        max_chart_distance,
        bound,
        max_ratio: max_chart_distance / bound,
    })
}
