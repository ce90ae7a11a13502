//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! with its measurements and wall time; the test fails if any criterion
//! fails.

use std::f64::consts::{E, TAU};
use std::io::Write;
use std::time::{Duration, Instant};

use limlie::check::reference_curve;
use limlie::dirsys::{injective_quotient, KernelLedger, LimitPoint, SystemDescriptor};
use limlie::dlgroup::{
    doubling, ladder, ode_steps, semidirect_exp, semidirect_exp_ode, subgroup_algebra, Formula, Membership,
    PLATEAU,
};
use limlie::evol::{
    estimate_k, evolve, gronwall_budget, perturbation_batch, roundtrip_error, stitch, CurveDescriptor,
    DEFAULT_CHART_RADIUS, DEFAULT_STEP,
};
use limlie::kinf::LevelledVector;
use limlie::liethird::{build_filtration, complexify_system, integrate_algebra, Backend};
use limlie::mlie::{expm, SubalgebraBasis};
use limlie::rng::{substream, uniform_matrix};
use limlie::span::Ambient;
use limlie::{Complex64, Field, Matrix, Result};

const SEED: u64 = 20_240_601;

/// Error of the commutator formula at `n = 256` for the `E_12`, `E_21`
/// pair, frozen from a one-time calibration run (observed 4.5906e-3).
const COMMUTATOR_THRESHOLD: f64 = 4.6e-3;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { passed, detail })
}

/// Least-squares slope of `ln y` against `ln x`.
fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn unit(n: usize, i: usize, j: usize) -> Matrix {
    Matrix::unit(Field::Real, n, i - 1, j - 1)
}

fn trotter() -> Result<Verdict> {
    let sys = SystemDescriptor::gl_block(Field::Real, vec![3])?;
    let ns = doubling(16, 4096);
    let mut rng = substream(SEED, "acceptance/trotter");
    let mut failures = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..50 {
        let x = LimitPoint::new(1, uniform_matrix(&mut rng, Field::Real, 3, 1.0));
        let y = LimitPoint::new(1, uniform_matrix(&mut rng, Field::Real, 3, 1.0));
        let l = ladder(&sys, &x, &y, &ns, Formula::Trotter)?;
        let above: Vec<(f64, f64)> =
            l.ns.iter()
                .zip(&l.errors)
                .filter(|(_, &e)| e > PLATEAU)
                .map(|(&n, &e)| (n as f64, e))
                .collect();
        let monotone = above.windows(2).all(|w| w[1].1 < w[0].1);
        let slope = if above.len() >= 2 {
            loglog_slope(&above)
        } else {
            f64::NAN
        };
        lo = lo.min(slope);
        hi = hi.max(slope);
        failures += usize::from(!(monotone && (slope + 1.0).abs() <= 0.15));
    }
    verdict(
        failures == 0,
        format!("50 pairs, {failures} failing, slopes in [{lo:.4}, {hi:.4}]"),
    )
}

fn commutator() -> Result<Verdict> {
    let sys = SystemDescriptor::gl_block(Field::Real, vec![2])?;
    let x = LimitPoint::new(1, unit(2, 1, 2));
    let y = LimitPoint::new(1, unit(2, 2, 1));
    let l = ladder(&sys, &x, &y, &doubling(8, 256), Formula::Commutator)?;
    // the ladder measures against exp([x, y]); confirm that target independently
    let target = Matrix::real(2, &[E, 0.0, 0.0, 1.0 / E])?;
    let bracket = unit(2, 1, 1).sub(&unit(2, 2, 2))?;
    let target_err = expm(&bracket)?.dist(&target);
    let decreasing = l.errors.windows(2).all(|w| w[1] < w[0]);
    let last = *l.errors.last().expect("non-empty ladder");
    verdict(
        decreasing && last <= COMMUTATOR_THRESHOLD && target_err <= 1e-14,
        format!(
            "err(8) {:.4e}, err(256) {last:.4e} (threshold {COMMUTATOR_THRESHOLD:.1e}), strictly decreasing {decreasing}",
            l.errors[0]
        ),
    )
}

fn product_integral() -> Result<Verdict> {
    let x = Matrix::real(3, &[0.2, -0.5, 0.1, 0.3, 0.0, -0.4, -0.2, 0.6, 0.1])?;
    let constant = CurveDescriptor::constant(x.clone(), (0.0, 1.0))?;
    let endpoint = evolve(&constant, 1e-3)?.endpoint().dist(&expm(&x)?);

    let mut rng = substream(SEED, "acceptance/product-integral");
    let coeffs: Vec<Matrix> = (0..3)
        .map(|_| uniform_matrix(&mut rng, Field::Real, 3, 0.5))
        .collect();
    let curve = CurveDescriptor::polynomial(coeffs, (0.0, 1.0))?;
    let pts = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&h| roundtrip_error(&curve, h).map(|e| (h, e)))
        .collect::<Result<Vec<_>>>()?;
    let slope = loglog_slope(&pts);

    let coeffs: Vec<Matrix> = (0..3)
        .map(|_| uniform_matrix(&mut rng, Field::Real, 2, 0.5))
        .collect();
    let line = CurveDescriptor::polynomial(coeffs, (-1.0, 2.0))?;
    let path = stitch(&line, 1e-3)?;
    let forward = evolve(&line.restrict(0.0, 2.0)?, 1e-3)?.endpoint();
    let backward = evolve(&line.restrict(-1.0, 0.0)?, 1e-3)?.endpoint().inverse()?;
    let stitched = path
        .eval(2.0)?
        .dist(&forward)
        .max(path.eval(-1.0)?.dist(&backward));
    verdict(
        endpoint <= 1e-8 && (slope - 2.0).abs() <= 0.3 && stitched <= 1e-8,
        format!("constant endpoint {endpoint:.3e}, round-trip slope {slope:.4}, stitched {stitched:.3e}"),
    )
}

fn gronwall() -> Result<Verdict> {
    let budget = gronwall_budget(1.0, 0.5, 1)?;
    let expected = 0.125 / (E - 1.0);
    let alpha_err = (budget.alpha - expected).abs();
    let resub = (budget.bound() - budget.target()).abs();
    let curve = reference_curve()?;
    let k = estimate_k(&curve, DEFAULT_CHART_RADIUS, 64, SEED)?;
    let batch_budget = gronwall_budget(k, 0.5, 1)?;
    let report = perturbation_batch(&curve, &batch_budget, 200, SEED, DEFAULT_STEP)?;
    verdict(
        alpha_err <= 1e-15 && resub <= 1e-15 && report.violations == 0 && report.runs == 200,
        format!(
            "alpha {:.17} (off by {alpha_err:.1e}), re-substitution gap {resub:.1e}, {} violations in {} runs, max ratio {:.3}",
            budget.alpha, report.violations, report.runs, report.max_ratio
        ),
    )
}

fn level_compatibility() -> Result<Verdict> {
    let mut rng = substream(SEED, "acceptance/levels");
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = 2 + i % 5;
        let m = n + (i / 5) % (7 - n);
        let a = uniform_matrix(&mut rng, Field::Real, n, 1.0);
        let lhs = expm(&a.embed_algebra(m)?)?;
        worst = worst.max(lhs.dist(&expm(&a)?.embed_group(m)?));
    }
    verdict(worst <= 1e-12, format!("100 samples, max residual {worst:.3e}"))
}

fn witness() -> Result<Verdict> {
    let coeffs = [
        Complex64::new(1.0, 0.0),
        Complex64::new(2.0, 0.0),
        Complex64::new(0.0, 1.0),
    ];
    let mut z_max = 0.0f64;
    let mut t_err = 0.0f64;
    let mut ode = 0.0f64;
    for k in 1..=8 {
        for &coeff in &coeffs {
            let mut entries = vec![Complex64::new(0.0, 0.0); k];
            entries[k - 1] = coeff;
            let v = LevelledVector::complex(&entries);
            let g = semidirect_exp(&v, TAU);
            z_max = g.z.entries().iter().fold(z_max, |a, z| a.max(z.norm()));
            t_err = t_err.max((g.t - TAU).abs());
            let s = 0.7 * TAU;
            ode = ode.max(semidirect_exp(&v, s).dist(&semidirect_exp_ode(&v, s, ode_steps(&v, s))));
        }
    }
    verdict(
        z_max <= 1e-14 && t_err == 0.0 && ode <= 1e-8,
        format!("max |z| {z_max:.3e}, t offset {t_err:.1e}, closed form against ODE {ode:.3e}"),
    )
}

fn quotient() -> Result<Verdict> {
    let mut dims = Vec::new();
    for depth in 3..=8 {
        let sys = SystemDescriptor::cx_squaring(8)?;
        let ledger = KernelLedger::cx_squaring(8);
        let real = injective_quotient(&sys, &ledger, depth, Field::Real)?.1.levels[0].quotient_dim;
        let complex = injective_quotient(&sys, &ledger, depth, Field::Complex)?.1.levels[0].quotient_dim;
        dims.push((real, complex));
    }
    verdict(
        dims.iter().all(|&d| d == (1, 0)),
        format!("(real, complex) dims for depths 3..=8: {dims:?}"),
    )
}

/// Real dimension of the Lie algebra generated by `gens`, by repeated
/// bracketing and Gram-Schmidt on flattened matrices.
fn closure_dim(gens: &[Vec<f64>], n: usize) -> usize {
    let bracket = |a: &[f64], b: &[f64]| {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out[i * n + j] += a[i * n + k] * b[k * n + j] - b[i * n + k] * a[k * n + j];
                }
            }
        }
        out
    };
    let push = |basis: &mut Vec<Vec<f64>>, mut v: Vec<f64>| {
        for q in basis.iter() {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-9 {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    };
    let mut basis = Vec::new();
    for g in gens {
        push(&mut basis, g.clone());
    }
    loop {
        let before = basis.len();
        let snapshot = basis.clone();
        for a in &snapshot {
            for b in &snapshot {
                push(&mut basis, bracket(a, b));
            }
        }
        if basis.len() == before {
            return before;
        }
    }
}

fn lie_third() -> Result<Verdict> {
    let gens = [unit(4, 1, 2), unit(4, 2, 3), unit(4, 3, 4)];
    let filtration = build_filtration(&gens, &[1, 2, 3], Ambient::real(4), 16)?;
    let dims = filtration.dims();
    let flat: Vec<Vec<f64>> = gens.iter().map(Matrix::flatten).collect();
    let oracle: Vec<usize> = (1..=3).map(|k| closure_dim(&flat[..k], 4)).collect();

    let heis = build_filtration(&[unit(3, 1, 2), unit(3, 2, 3)], &[1, 2], Ambient::real(3), 9)?;
    let group = integrate_algebra(&heis, Backend::NilpotentBch)?;
    let assoc = group.associativity_residual(200, SEED)?;
    let bonding = group.bonding_residual()?;
    verdict(
        dims == [1, 3, 6] && dims == oracle && assoc <= 1e-12 && bonding <= 1e-6,
        format!("dims {dims:?}, oracle {oracle:?}, associativity {assoc:.3e}, bonding {bonding:.3e}"),
    )
}

fn subgroups() -> Result<Verdict> {
    let grid = limlie::dlgroup::default_grid();
    let mut passed = true;
    let mut detail = Vec::new();
    let cases = [
        ("orthogonal in GL(3)", Membership::orthogonal(), 3usize),
        ("det 1 in GL(2)", Membership::special_linear(), 2usize),
    ];
    for (name, member, n) in cases {
        let basis = subgroup_algebra(&member, Field::Real, n, &grid)?;
        let shape = basis
            .iter()
            .map(|x| {
                if n == 3 {
                    x.add(&x.transpose()).map(|s| s.sup_norm())
                } else {
                    Ok(x.trace().norm())
                }
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let dim = basis.len();
        let closure = SubalgebraBasis::from_basis_with_tol(Ambient::real(n), basis, 1e-8)?.closure_residual();
        passed &= dim == 3 && shape <= 1e-8 && closure <= 1e-8;
        detail.push(format!(
            "{name}: dim {dim}, shape {shape:.1e}, closure {closure:.1e}"
        ));
    }
    verdict(passed, detail.join("; "))
}

fn complexification() -> Result<Verdict> {
    let mut passed = true;
    let mut worst = 0.0f64;
    for n in 1..=4 {
        let (_, report) = complexify_system(&SystemDescriptor::unitary_chain(n)?)?;
        passed &= report.passed
            && report
                .levels
                .iter()
                .all(|l| l.complex_dim == l.level * l.level && l.real_dim == l.complex_dim);
        worst = worst.max(report.bonding_residual);
    }
    verdict(
        passed && worst <= 1e-10,
        format!("chains up to n = 4, dimension identity {passed}, bonding residual {worst:.3e}"),
    )
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Result<Verdict>, Duration);
    let criteria: [Criterion; 10] = [
        ("trotter formula", trotter, Duration::from_secs(10)),
        ("commutator formula", commutator, Duration::from_secs(30)),
        ("product integral", product_integral, Duration::from_secs(5)),
        ("gronwall budget", gronwall, Duration::from_secs(20)),
        (
            "level compatibility of exp",
            level_compatibility,
            Duration::from_secs(1),
        ),
        ("non-injectivity witness", witness, Duration::from_secs(1)),
        ("quotient system", quotient, Duration::from_secs(1)),
        (
            "local finiteness and integration",
            lie_third,
            Duration::from_secs(2),
        ),
        ("subgroup lie algebras", subgroups, Duration::from_secs(2)),
        ("complexification", complexification, Duration::from_secs(1)),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stderr().lock();
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok(v) => (v.passed && elapsed <= *budget, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let status = if passed { "PASS" } else { "FAIL" };
        writeln!(
            out,
            "criterion {:>2} {status} {name}: {detail} [{:.3} s of {} s]",
            i + 1,
            elapsed.as_secs_f64(),
            budget.as_secs()
        )
        .expect("stderr");
        if !passed {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
