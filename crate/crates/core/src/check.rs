//! Executable property suites, one per module, behind `limlie check`.
//!
//! Every case draws from its own seeded substream, so adding or reordering
//! cases never perturbs another case's samples. Reports carry no timings
//! and are byte-identical across runs with the same configuration.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dirsys::{
    self, injective_quotient, limit_eq, mediating_map, Bonding, ConeMap, Element, KernelLedger, LimitPoint,
    NamedHom, ObjectKind, SystemDescriptor,
};
use crate::dlgroup::{
    self, doubling, exp_limit, group_op, ladder, ode_steps, semidirect_exp, semidirect_exp_ode,
    subgroup_algebra, Formula, Membership, SemidirectElement, PLATEAU,
};
use crate::evol::{
    self, estimate_k, evolve, gronwall_budget, perturbation_batch, roundtrip_error, stitch, CurveDescriptor,
};
use crate::kinf::{min_level_of_set, polydisk_contains, LevelledVector, Polydisk};
use crate::liethird::{build_filtration, integrate_algebra, integrate_hom, Backend, GroupPoint};
use crate::matrix::{c, CMat};
use crate::mlie::{center, derivative_at_identity, expm, generated_subalgebra, SubalgebraBasis};
use crate::rng::{substream, uniform_matrix, SeededRng};
use crate::span::{Ambient, CVec, Frame};
use crate::{Error, Field, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Kinf,
    Dirsys,
    Mlie,
    Dlgroup,
    Evol,
    Liethird,
    All,
}

impl Suite {
    pub const MODULES: [Suite; 6] = [
        Suite::Kinf,
        Suite::Dirsys,
        Suite::Mlie,
        Suite::Dlgroup,
        Suite::Evol,
        Suite::Liethird,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Kinf => "kinf",
            Suite::Dirsys => "dirsys",
            Suite::Mlie => "mlie",
            Suite::Dlgroup => "dlgroup",
            Suite::Evol => "evol",
            Suite::Liethird => "liethird",
            Suite::All => "all",
        }
    }

    fn cases(self) -> Vec<Case> {
        match self {
            Suite::Kinf => vec![
                ("embed_is_associative", kinf_embed),
                ("polydisk_is_monotone_in_radius", kinf_polydisk),
                ("canonical_level_of_sum", kinf_sum_level),
                ("min_level_matches_brute_force", kinf_min_level),
            ],
            Suite::Dirsys => vec![
                ("builtin_systems_are_coherent", dirsys_coherence),
                ("limit_eq_is_an_equivalence", dirsys_limit_eq),
                ("mediating_map_ignores_lift", dirsys_mediating),
                ("injective_system_quotient_is_identity", dirsys_quotient),
            ],
            Suite::Mlie => vec![
                ("expm_inverse", mlie_expm_inverse),
                ("expm_block_compatibility", mlie_block),
                ("generated_subalgebra_is_idempotent", mlie_idempotent),
                ("structure_constants", mlie_structure),
                ("derivative_chain_rule", mlie_chain_rule),
            ],
            Suite::Dlgroup => vec![
                ("group_op_is_associative", dlgroup_assoc),
                ("exp_inverse", dlgroup_exp_inverse),
                ("trotter_ladder", dlgroup_trotter),
                ("subgroup_algebras_are_closed", dlgroup_subgroups),
                ("semidirect_law_and_exp", dlgroup_semidirect),
            ],
            Suite::Evol => vec![
                ("evolve_respects_embedding", evol_embedding),
                ("roundtrip_step_ladder", evol_roundtrip),
                ("stitching_composition", evol_stitch),
                ("budgets_satisfy_equality", evol_budgets),
                ("perturbations_respect_bound", evol_perturbations),
            ],
            Suite::Liethird => vec![
                ("bonding_derivative_is_inclusion", liethird_bonding),
                ("bch_matches_matrix_products", liethird_cross_backend),
                ("hom_integration_composes", liethird_composition),
                ("centres_are_abelian_and_central", liethird_centres),
            ],
            Suite::All => Suite::MODULES.iter().flat_map(|s| s.cases()).collect(),
        }
    }

    fn owner(name: &str) -> &'static str {
        Suite::MODULES
            .iter()
            .find(|s| s.cases().iter().any(|(n, _)| *n == name))
            .map_or("all", |s| s.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::MODULES
            .iter()
            .copied()
            .chain([Suite::All])
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CheckConfig {
    pub seed: u64,
    /// Replaces one bonding map of the dirsys systems by a seeded
    /// non-homomorphic map.
    pub corrupt: bool,
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

type Case = (&'static str, fn(&CheckConfig, &mut SeededRng) -> Result<Outcome>);

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub suite: Suite,
    pub seed: u64,
    pub cases: Vec<CaseResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.cases.iter().filter(|c| !c.passed).count()
    }

    /// One line per case.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for case in &self.cases {
            let tag = if case.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{tag} {}::{} {}", case.suite, case.name, case.detail);
        }
        let _ = writeln!(out, "{} cases, {} failed", self.cases.len(), self.failures());
        out
    }

    pub fn to_junit(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            out,
            "<testsuites name=\"limlie\" tests=\"{}\" failures=\"{}\">",
            self.cases.len(),
            self.failures()
        );
        for suite in Suite::MODULES {
            let cases: Vec<&CaseResult> = self.cases.iter().filter(|c| c.suite == suite.name()).collect();
            if cases.is_empty() {
                continue;
            }
            let failures = cases.iter().filter(|c| !c.passed).count();
            let _ = writeln!(
                out,
                "  <testsuite name=\"{}\" tests=\"{}\" failures=\"{failures}\">",
                suite.name(),
                cases.len()
            );
            let _ = writeln!(
                out,
                "    <properties><property name=\"seed\" value=\"{}\"/></properties>",
                self.seed
            );
            for case in cases {
                let detail = xml_escape(&case.detail);
                if case.passed {
                    let _ = writeln!(
                        out,
                        "    <testcase classname=\"{}\" name=\"{}\"><system-out>{detail}</system-out></testcase>",
                        case.suite, case.name
                    );
                } else {
                    let _ = writeln!(
                        out,
                        "    <testcase classname=\"{}\" name=\"{}\"><failure message=\"{detail}\"/></testcase>",
                        case.suite, case.name
                    );
                }
            }
            out.push_str("  </testsuite>\n");
        }
        out.push_str("</testsuites>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Runs a suite; cases run in parallel, results keep declaration order.
pub fn run(suite: Suite, config: &CheckConfig) -> CheckReport {
    let cases = suite
        .cases()
        .into_par_iter()
        .map(|(name, case)| {
            let owner = Suite::owner(name);
            let mut rng = substream(config.seed, &format!("check/{owner}/{name}"));
            let (passed, detail) = match case(config, &mut rng) {
                Ok(o) => (o.passed, o.detail),
                Err(e) => (false, format!("error: {e}")),
            };
            CaseResult {
                suite: owner,
                name,
                passed,
                detail,
            }
        })
        .collect();
    CheckReport {
        suite,
        seed: config.seed,
        cases,
    }
}

fn random_vector(rng: &mut SeededRng, max_level: usize) -> LevelledVector {
    let level = rng.random_range(0..=max_level);
    let declared = level + rng.random_range(0..=3);
    let mut entries = vec![0.0; declared];
    for (k, e) in entries.iter_mut().enumerate().take(level) {
        // keep some interior zeros; the top entry must be nonzero
        if k + 1 == level || rng.random_bool(0.7) {
            *e = f64::from(rng.random_range(1..=9i32)) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
    }
    LevelledVector::real(&entries)
}

fn kinf_embed(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let mut failures = 0;
    for _ in 0..200 {
        let v = random_vector(rng, 10);
        let d = v.declared_level();
        let (m, n) = (d + rng.random_range(0..5), d + rng.random_range(0..5));
        let top = m.max(n);
        let direct = v.embed(top)?;
        let via_m = v.embed(m)?.embed(top)?;
        let via_n = v.embed(n)?.embed(top)?;
        if direct.entries() != via_m.entries() || direct.entries() != via_n.entries() {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{failures} of 200 samples differ"))
}

fn kinf_polydisk(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let mut failures = 0;
    for _ in 0..200 {
        let v = random_vector(rng, 8);
        let n = v.declared_level();
        let r1 = rng.random_range(0.1..10.0);
        let r2 = r1 + rng.random_range(0.0..5.0);
        if polydisk_contains(&v, &Polydisk::new(r1, n)?)? && !polydisk_contains(&v, &Polydisk::new(r2, n)?)? {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{failures} of 200 samples violate monotonicity"),
    )
}

fn kinf_sum_level(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let mut failures = 0;
    for _ in 0..200 {
        let (v, w) = (random_vector(rng, 10), random_vector(rng, 10));
        if v.add(&w)?.canonical_level() > v.canonical_level().max(w.canonical_level()) {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{failures} of 200 sums exceed the larger level"),
    )
}

fn kinf_min_level(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let set: Vec<LevelledVector> = (0..100).map(|_| random_vector(rng, 12)).collect();
    let brute = set
        .iter()
        .map(|v| {
            v.entries()
                .iter()
                .rposition(|z| *z != Complex64::new(0.0, 0.0))
                .map_or(0, |k| k + 1)
        })
        .max()
        .unwrap_or(0);
    let got = min_level_of_set(&set)?;
    outcome(got == brute, format!("min level {got}, brute force {brute}"))
}

/// `A ↦ diag(A, 1) + δ E_{n,1}`: fixes neither products nor the identity.
fn corrupted_gl(seed: u64) -> Result<SystemDescriptor> {
    let mut rng = substream(seed, "check/dirsys/corruption");
    let delta = rng.random_range(0.1..0.2);
    let broken = rng.random_range(1..=3usize);
    let bonding = (1..=3)
        .map(|k| {
            if k != broken {
                return Bonding::Block;
            }
            let to = k + 1;
            Bonding::Named {
                name: "corrupted".into(),
                hom: NamedHom::new(
                    move |a: &Matrix| {
                        a.embed_group(to)?
                            .add(&Matrix::unit(Field::Real, to, to - 1, 0).scale(delta))
                    },
                    move |x: &Matrix| x.embed_algebra(to),
                ),
            }
        })
        .collect();
    SystemDescriptor::new(ObjectKind::MatrixGroup, Field::Real, vec![1, 2, 3, 4], bonding)
}

fn dirsys_coherence(config: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let mut systems = vec![
        (
            "gl_block",
            SystemDescriptor::gl_block(Field::Real, vec![1, 2, 3, 4])?,
        ),
        (
            "gl_algebra_block",
            SystemDescriptor::gl_algebra_block(Field::Complex, vec![1, 2, 3])?,
        ),
        (
            "vector_block",
            SystemDescriptor::vector_block(Field::Real, vec![1, 2, 4, 7])?,
        ),
        ("cx_squaring", SystemDescriptor::cx_squaring(4)?),
        ("r_times_so2", SystemDescriptor::r_times_so2(4)?),
        ("unitary_chain", SystemDescriptor::unitary_chain(3)?),
    ];
    if config.corrupt {
        systems[0] = ("gl_block(corrupted)", corrupted_gl(config.seed)?);
    }
    let mut passed = true;
    let mut detail = Vec::new();
    for (name, sys) in &systems {
        let report = sys.validate(4, rng)?;
        let mut lift_residual = 0.0f64;
        let top = sys.levels();
        for _ in 0..4 {
            let k = rng.random_range(1..=top);
            let j = rng.random_range(k..=top);
            let p = LimitPoint::new(k, sys.sample_element(k, rng)?);
            let via = dirsys::lift(sys, &dirsys::lift(sys, &p, j)?, top)?;
            lift_residual = lift_residual.max(via.rep.dist(&dirsys::lift(sys, &p, top)?.rep));
        }
        let ok = report.passed && lift_residual <= 1e-12;
        passed &= ok;
        if !ok || config.corrupt {
            detail.push(format!(
                "{name}: coherence {:.3e}, homomorphism {:.3e}, derivative {:.3e}, lift {:.3e}",
                report.coherence_residual,
                report.homomorphism_residual,
                report.derivative_residual,
                lift_residual
            ));
        }
    }
    if detail.is_empty() {
        detail.push(format!("{} systems coherent", systems.len()));
    }
    outcome(passed, detail.join("; "))
}

fn dirsys_limit_eq(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let sys = SystemDescriptor::gl_block(Field::Real, vec![1, 2, 3, 4])?;
    let mut failures = 0;
    for _ in 0..40 {
        let k = rng.random_range(1..=4);
        let p = LimitPoint::new(k, sys.sample_element(k, rng)?);
        let l = rng.random_range(1..=4);
        let q = LimitPoint::new(l, sys.sample_element(l, rng)?);
        let (j, i) = (rng.random_range(k..=4), 4);
        let (pj, pi) = (dirsys::lift(&sys, &p, j)?, dirsys::lift(&sys, &p, i)?);
        let ok = limit_eq(&sys, &p, &p, 4)?
            && limit_eq(&sys, &p, &q, 4)? == limit_eq(&sys, &q, &p, 4)?
            && limit_eq(&sys, &p, &pj, 4)?
            && limit_eq(&sys, &pj, &pi, 4)?
            && limit_eq(&sys, &p, &pi, 4)?;
        failures += usize::from(!ok);
    }
    outcome(failures == 0, format!("{failures} of 40 samples fail"))
}

fn dirsys_mediating(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let sys = SystemDescriptor::gl_block(Field::Real, vec![1, 2, 3, 4])?;
    let psi: Vec<ConeMap> = (1..=4)
        .map(|_| {
            let f: ConeMap =
                std::sync::Arc::new(|x: &Element| Ok(Element::Matrix(x.as_matrix()?.embed_group(4)?)));
            f
        })
        .collect();
    let f = mediating_map(&sys, &psi)?;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let k = rng.random_range(1..=4);
        let p = LimitPoint::new(k, sys.sample_element(k, rng)?);
        let i = rng.random_range(k..=4);
        worst = worst.max(f.apply(&dirsys::lift(&sys, &p, i)?)?.dist(&f.apply(&p)?));
    }
    outcome(worst <= 1e-9, format!("max residual {worst:.3e}"))
}

fn dirsys_quotient(_: &CheckConfig, _: &mut SeededRng) -> Result<Outcome> {
    let sys = SystemDescriptor::gl_block(Field::Real, vec![1, 2, 3])?;
    let (q, report) = injective_quotient(&sys, &KernelLedger::default(), 3, Field::Real)?;
    let dims: Vec<usize> = report.levels.iter().map(|l| l.quotient_dim).collect();
    let identity = report
        .levels
        .iter()
        .all(|l| l.kernel_dim == 0 && l.quotient_dim == l.algebra_dim)
        && q.dims() == dims.as_slice();
    outcome(identity, format!("quotient dims {dims:?}"))
}

fn mlie_expm_inverse(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=5);
        let field = if rng.random_bool(0.5) {
            Field::Real
        } else {
            Field::Complex
        };
        let a = uniform_matrix(rng, field, n, 1.0);
        let norm = a.spectral_norm();
        let a = if norm > 0.0 {
            a.scale(rng.random_range(0.0..5.0) / norm)
        } else {
            a
        };
        let r = expm(&a)?.mul(&expm(&a.neg())?)?.dist(&Matrix::identity(field, n));
        worst = worst.max(r);
    }
    outcome(worst <= 1e-11, format!("max residual {worst:.3e}"))
}

fn mlie_block(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(n..=6);
        let a = uniform_matrix(rng, Field::Real, n, 1.0);
        let lhs = expm(&a.embed_algebra(m)?)?;
        worst = worst.max(lhs.dist(&expm(&a)?.embed_group(m)?));
    }
    outcome(worst <= 1e-12, format!("max residual {worst:.3e}"))
}

fn mlie_idempotent(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let mut passed = true;
    let mut dims = Vec::new();
    for _ in 0..5 {
        let n = rng.random_range(2..=3);
        let mut gens: Vec<Matrix> = (0..2).map(|_| uniform_matrix(rng, Field::Real, n, 1.0)).collect();
        if rng.random_bool(0.5) {
            // strictly upper triangular generators give proper subalgebras
            for g in &mut gens {
                let mut d = g.data().clone();
                for i in 0..n {
                    for j in 0..=i {
                        d[(i, j)] = c(0.0);
                    }
                }
                *g = Matrix::new(Field::Real, d)?;
            }
        }
        let amb = Ambient::real(n);
        let first = generated_subalgebra(&gens, amb, n * n)?;
        let again = generated_subalgebra(first.basis(), amb, n * n)?;
        passed &= first.dim() == again.dim()
            && first.inclusion_residual(&again)? <= 1e-9
            && again.inclusion_residual(&first)? <= 1e-9;
        dims.push(first.dim());
    }
    outcome(passed, format!("dims {dims:?}"))
}

fn mlie_structure(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let mut jacobi = 0.0f64;
    let mut antisymmetric = true;
    for _ in 0..5 {
        let gens: Vec<Matrix> = (0..2).map(|_| uniform_matrix(rng, Field::Real, 3, 1.0)).collect();
        let b = generated_subalgebra(&gens, Ambient::real(3), 9)?;
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                for k in 0..b.dim() {
                    antisymmetric &= b.structure_constant(i, j, k) == -b.structure_constant(j, i, k);
                }
            }
        }
        jacobi = jacobi.max(b.jacobi_residual());
    }
    outcome(
        antisymmetric && jacobi <= 1e-8,
        format!("antisymmetry exact: {antisymmetric}, Jacobi residual {jacobi:.3e}"),
    )
}

fn mlie_chain_rule(_: &CheckConfig, _: &mut SeededRng) -> Result<Outcome> {
    let gl2 = Frame::gl(Ambient::real(2));
    let gl3 = Frame::gl(Ambient::real(3));
    let square = |a: &Matrix| a.mul(a);
    let embed = |a: &Matrix| a.embed_group(3);
    let mut worst = 0.0f64;
    // square ∘ square on GL_2
    let composed = derivative_at_identity(|a| square(&square(a)?), &gl2, &gl2)?;
    let d = derivative_at_identity(square, &gl2, &gl2)?;
    worst = worst.max(max_abs(&(composed - &d * &d)));
    // square ∘ embed from GL_2 to GL_3
    let composed = derivative_at_identity(|a| square(&embed(a)?), &gl2, &gl3)?;
    let chained = derivative_at_identity(square, &gl3, &gl3)? * derivative_at_identity(embed, &gl2, &gl3)?;
    worst = worst.max(max_abs(&(composed - chained)));
    outcome(worst <= 1e-5, format!("max residual {worst:.3e}"))
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

/// Random algebra element at `level` of a system whose level `k` is `k × k`
/// unless `n` says otherwise.
fn algebra_point(rng: &mut SeededRng, field: Field, level: usize, n: usize, r: f64) -> LimitPoint {
    LimitPoint::new(level, uniform_matrix(rng, field, n, r))
}

fn dlgroup_assoc(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let sys = SystemDescriptor::gl_block(Field::Real, vec![1, 2, 3, 4])?;
    let mut worst = 0.0f64;
    let mut identified = true;
    for _ in 0..30 {
        let [a, b, cc] = [0, 1, 2].map(|_| {
            let k = rng.random_range(1..=4);
            sys.sample_element(k, rng).map(|x| LimitPoint::new(k, x))
        });
        let (a, b, cc) = (a?, b?, cc?);
        let l = group_op(&sys, &group_op(&sys, &a, &b)?, &cc)?;
        let r = group_op(&sys, &a, &group_op(&sys, &b, &cc)?)?;
        identified &= limit_eq(&sys, &l, &r, 4)?;
        worst = worst.max(
            dirsys::lift(&sys, &l, 4)?
                .rep
                .dist(&dirsys::lift(&sys, &r, 4)?.rep),
        );
    }
    outcome(identified && worst <= 1e-10, format!("max residual {worst:.3e}"))
}

fn dlgroup_exp_inverse(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let sys = SystemDescriptor::gl_block(Field::Complex, vec![1, 2, 3, 4])?;
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let k = rng.random_range(1..=4);
        let x = algebra_point(rng, Field::Complex, k, k, 1.0);
        let minus = LimitPoint::new(k, x.rep.as_matrix()?.neg());
        let p = group_op(&sys, &exp_limit(&sys, &x)?, &exp_limit(&sys, &minus)?)?;
        worst = worst.max(
            p.rep
                .dist(&Element::Matrix(Matrix::identity(Field::Complex, p.level))),
        );
    }
    outcome(worst <= 1e-11, format!("max residual {worst:.3e}"))
}

fn dlgroup_trotter(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let sys = SystemDescriptor::gl_block(Field::Real, vec![3])?;
    let ns = doubling(16, 4096);
    let mut passed = true;
    let mut slopes = Vec::new();
    for _ in 0..5 {
        let x = algebra_point(rng, Field::Real, 1, 3, 1.0);
        let y = algebra_point(rng, Field::Real, 1, 3, 1.0);
        let l = ladder(&sys, &x, &y, &ns, Formula::Trotter)?;
        let slope = l.loglog_slope(PLATEAU);
        passed &= l.is_monotone(PLATEAU) && slope.is_some_and(|s| (s + 1.0).abs() <= 0.15);
        slopes.push(slope.map_or("none".to_string(), |s| format!("{s:.4}")));
    }
    outcome(passed, format!("slopes [{}]", slopes.join(", ")))
}

fn dlgroup_subgroups(_: &CheckConfig, _: &mut SeededRng) -> Result<Outcome> {
    let grid = dlgroup::default_grid();
    let cases = [
        ("O(3)", Membership::orthogonal(), Field::Real, 3, 3),
        ("SL(2)", Membership::special_linear(), Field::Real, 2, 3),
        // U(2) contains no complex one-parameter subgroups
        ("U(2) over C", Membership::unitary(), Field::Complex, 2, 0),
    ];
    let mut passed = true;
    let mut detail = Vec::new();
    for (name, member, field, n, want) in cases {
        let basis = subgroup_algebra(&member, field, n, &grid)?;
        let dim = basis.len();
        let amb = Ambient::new(n, field, Field::Real)?;
        let closure = SubalgebraBasis::from_basis_with_tol(amb, basis, 1e-8)?.closure_residual();
        passed &= dim == want && closure <= 1e-8;
        detail.push(format!("{name}: dim {dim}, closure {closure:.3e}"));
    }
    outcome(passed, detail.join("; "))
}

fn dlgroup_semidirect(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let random_z = |rng: &mut SeededRng| {
        let n = rng.random_range(1..=6);
        let entries: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        LevelledVector::complex(&entries)
    };
    let mut assoc = 0.0f64;
    for _ in 0..30 {
        let [a, b, cc] =
            [0, 1, 2].map(|_| SemidirectElement::new(random_z(rng), rng.random_range(-TAU..TAU)));
        assoc = assoc.max(a.mul(&b).mul(&cc).dist(&a.mul(&b.mul(&cc))));
    }
    let mut ode = 0.0f64;
    for _ in 0..10 {
        let v = random_z(rng);
        let s = rng.random_range(-TAU..TAU);
        ode = ode.max(semidirect_exp(&v, s).dist(&semidirect_exp_ode(&v, s, ode_steps(&v, s))));
    }
    outcome(
        assoc <= 1e-12 && ode <= 1e-8,
        format!("associativity {assoc:.3e}, exp against ODE {ode:.3e}"),
    )
}

fn smooth_curve(rng: &mut SeededRng, n: usize, domain: (f64, f64)) -> Result<CurveDescriptor> {
    let coeffs = (0..3).map(|_| uniform_matrix(rng, Field::Real, n, 0.5)).collect();
    CurveDescriptor::polynomial(coeffs, domain)
}

fn evol_embedding(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let curve = smooth_curve(rng, 2, (0.0, 1.0))?;
        let small = evolve(&curve, 1e-2)?;
        let big = evolve(&curve.embed(4)?, 1e-2)?;
        for k in 0..small.len() {
            worst = worst.max(big.node(k).dist(&small.node(k).embed_group(4)?));
        }
    }
    outcome(worst <= 1e-10, format!("max residual {worst:.3e}"))
}

fn evol_roundtrip(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let curve = smooth_curve(rng, 3, (0.0, 1.0))?;
    let steps = [1e-2, 5e-3, 2.5e-3];
    let pts = steps
        .iter()
        .map(|&h| roundtrip_error(&curve, h).map(|e| (h, e)))
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<(f64, f64)> = pts.iter().map(|(h, e)| (h.ln(), e.ln())).collect();
    let slope = dlgroup::loglog_fit(&logs).unwrap_or(f64::NAN);
    let errs: Vec<String> = pts.iter().map(|(h, e)| format!("{h:.1e}:{e:.3e}")).collect();
    outcome(
        (slope - 2.0).abs() <= 0.3,
        format!("step ladder slope {slope:.4} ({})", errs.join(", ")),
    )
}

fn evol_stitch(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let curve = smooth_curve(rng, 2, (-1.0, 2.0))?;
    let path = stitch(&curve, 1e-3)?;
    let forward = evolve(&curve.restrict(0.0, 2.0)?, 1e-3)?.endpoint();
    let single = path.eval(2.0)?.dist(&forward);
    let pieces = [(0.0, 1.0), (1.0, 2.0)]
        .iter()
        .map(|&(a, b)| evolve(&curve.restrict(a, b)?, 1e-3).map(|p| p.endpoint()))
        .collect::<Result<Vec<_>>>()?;
    let product = pieces[1].mul(&pieces[0])?.dist(&forward);
    let junction = evol::junction_mismatch(&path);
    outcome(
        single <= 1e-8 && product <= 1e-8,
        format!("single shot {single:.3e}, ordered product {product:.3e}, junction {junction:.3e}"),
    )
}

fn evol_budgets(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let mut failures = 0;
    for _ in 0..50 {
        let k = rng.random_range(0.01..20.0);
        let eps = rng.random_range(1e-3..1.0);
        let stage = rng.random_range(1..=8);
        failures += usize::from(!gronwall_budget(k, eps, stage)?.satisfies_budget());
    }
    outcome(
        failures == 0,
        format!("{failures} of 50 budgets violate the inequality"),
    )
}

/// The fixed smooth curve used for perturbation checks.
pub fn reference_curve() -> Result<CurveDescriptor> {
    CurveDescriptor::closed("reference", 2, Field::Real, (0.0, 1.0), |t| {
        Matrix::from_parts(
            Field::Real,
            CMat::from_row_slice(2, 2, &[c(0.1), c(0.2 * t), c(-0.15), c(-0.05 * t.cos())]),
        )
    })
}

fn evol_perturbations(config: &CheckConfig, _: &mut SeededRng) -> Result<Outcome> {
    let curve = reference_curve()?;
    let k = estimate_k(&curve, evol::DEFAULT_CHART_RADIUS, 64, config.seed)?;
    let budget = gronwall_budget(k, 0.5, 1)?;
    let report = perturbation_batch(&curve, &budget, 20, config.seed, evol::DEFAULT_STEP)?;
    outcome(
        report.violations == 0,
        format!(
            "k {k:.4}, s {:.4e}, {} violations in {} runs, max ratio {:.3}",
            budget.s, report.violations, report.runs, report.max_ratio
        ),
    )
}

fn e(n: usize, i: usize, j: usize) -> Matrix {
    Matrix::unit(Field::Real, n, i - 1, j - 1)
}

fn liethird_bonding(_: &CheckConfig, _: &mut SeededRng) -> Result<Outcome> {
    let cases = [
        (
            "heisenberg",
            vec![e(3, 1, 2), e(3, 2, 3)],
            vec![1, 2],
            Backend::NilpotentBch,
        ),
        (
            "upper4",
            vec![e(4, 1, 2), e(4, 2, 3), e(4, 3, 4)],
            vec![1, 2, 3],
            Backend::NilpotentBch,
        ),
        (
            "upper4",
            vec![e(4, 1, 2), e(4, 2, 3), e(4, 3, 4)],
            vec![1, 2, 3],
            Backend::MatrixRepresentation,
        ),
        (
            "sl2",
            vec![e(2, 1, 2), e(2, 2, 1)],
            vec![1, 2],
            Backend::MatrixRepresentation,
        ),
    ];
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (name, gens, depths, backend) in cases {
        let n = gens[0].n();
        let g = integrate_algebra(
            &build_filtration(&gens, &depths, Ambient::real(n), n * n)?,
            backend,
        )?;
        let r = g.bonding_residual()?;
        worst = worst.max(r);
        detail.push(format!("{name}/{backend:?}: {r:.3e}"));
    }
    outcome(worst <= 1e-6, detail.join("; "))
}

fn heisenberg_group(backend: Backend) -> Result<crate::liethird::IntegratedGroup> {
    integrate_algebra(
        &build_filtration(&[e(3, 1, 2), e(3, 2, 3)], &[1, 2], Ambient::real(3), 9)?,
        backend,
    )
}

fn random_word(rng: &mut SeededRng, d: usize, len: usize) -> Vec<CVec> {
    (0..len)
        .map(|_| CVec::from_fn(d, |_, _| c(rng.random_range(-1.0..1.0))))
        .collect()
}

fn liethird_cross_backend(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let rep = integrate_hom(
        &CMat::identity(3, 3),
        &heisenberg_group(Backend::NilpotentBch)?,
        &heisenberg_group(Backend::MatrixRepresentation)?,
    )?;
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let len = rng.random_range(1..=6);
        worst = worst.max(rep.cross_check(&random_word(rng, 3, len))?);
    }
    outcome(worst <= 1e-9, format!("max residual {worst:.3e}"))
}

fn liethird_composition(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let g = heisenberg_group(Backend::NilpotentBch)?;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        // dilations and a shear are automorphisms of the Heisenberg algebra
        let (a, b, s) = (
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-1.0..1.0),
        );
        let dil = CMat::from_diagonal(&CVec::from_vec(vec![c(a), c(b), c(a * b)]));
        let mut shear = CMat::identity(3, 3);
        shear[(1, 0)] = c(s);
        let b1 = integrate_hom(&dil, &g, &g)?;
        let b2 = integrate_hom(&shear, &g, &g)?;
        let b21 = integrate_hom(&(&shear * &dil), &g, &g)?;
        let w = random_word(rng, 3, 4);
        worst = worst.max(b21.apply_word(&w)?.dist(&b2.apply_word(&b1.image_word(&w))?));
    }
    outcome(worst <= 1e-7, format!("max residual {worst:.3e}"))
}

fn liethird_centres(_: &CheckConfig, rng: &mut SeededRng) -> Result<Outcome> {
    let gens = [e(4, 1, 2), e(4, 2, 1), e(4, 2, 3), e(4, 3, 4), e(4, 1, 1)];
    let f = build_filtration(&gens, &[1, 2, 4, 5], Ambient::real(4), 16)?;
    let g = integrate_algebra(&f, Backend::MatrixRepresentation)?;
    let mut abelian = 0.0f64;
    let mut commute = 0.0f64;
    let mut dims = Vec::new();
    for level in 1..=f.depth() {
        let z = center(f.level(level)?)?;
        dims.push(z.dim());
        for a in z.basis() {
            for b in z.basis() {
                abelian = abelian.max(crate::mlie::bracket(a, b)?.sup_norm());
            }
        }
        let d = g.dim(level)?;
        for zb in z.basis() {
            let ez = expm(&zb.scale(rng.random_range(-1.0..1.0)))?;
            for _ in 0..5 {
                let x = CVec::from_fn(d, |_, _| c(rng.random_range(-1.0..1.0)));
                let GroupPoint::Matrix(m) = g.exp(level, &x)? else {
                    return Err(Error::Contract("matrix carrier expected".into()));
                };
                commute = commute.max(ez.mul(&m)?.dist(&m.mul(&ez)?));
            }
        }
    }
    outcome(
        abelian <= 1e-10 && commute <= 1e-10,
        format!("centre dims {dims:?}, bracket {abelian:.3e}, commutation {commute:.3e}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::MODULES.iter().copied().chain([Suite::All]) {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn all_suites_pass() {
        let report = run(
            Suite::All,
            &CheckConfig {
                seed: 7,
                corrupt: false,
            },
        );
        assert!(report.passed(), "{}", report.to_text());
        assert_eq!(report.cases.len(), 27);
    }

    #[test]
    fn corruption_fails_dirsys() {
        let report = run(
            Suite::Dirsys,
            &CheckConfig {
                seed: 7,
                corrupt: true,
            },
        );
        let case = &report.cases[0];
        assert!(!case.passed);
        assert!(case.detail.contains("corrupted") && case.detail.contains("homomorphism"));
        assert!(report.to_junit().contains("<failure"));
    }

    #[test]
    fn reports_are_deterministic() {
        let cfg = CheckConfig {
            seed: 11,
            corrupt: false,
        };
        assert_eq!(
            run(Suite::Liethird, &cfg).to_junit(),
            run(Suite::Liethird, &cfg).to_junit()
        );
    }
}
