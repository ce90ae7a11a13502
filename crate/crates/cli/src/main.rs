use std::f64::consts::TAU;
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use limlie::check::{self, CheckConfig, Suite};
use limlie::dirsys::{
    injective_quotient, KernelLedger, LimitPoint, QuotientReport, Registry, SystemDescriptor,
};
use limlie::dlgroup::{doubling, ladder, semidirect_exp, Formula, PLATEAU};
use limlie::evol::{
    estimate_k, evolve, gronwall_budget, junction_mismatch, partition_for_chart, perturbation_batch, stitch,
    BatchReport, CurveDescriptor, GronwallBudget, DEFAULT_CHART_RADIUS, DEFAULT_STEP,
};
use limlie::kinf::LevelledVector;
use limlie::liethird::{integrate_algebra, Backend, Filtration, IntegrationSummary, BONDING_TOL};
use limlie::{Complex64, Error, Field, Matrix};

#[derive(Parser)]
#[command(
    name = "limlie",
    version,
    about = "Computation in direct limits of matrix Lie groups"
)]
struct Cli {
    /// Seed for every random sample.
    #[arg(long, env = "LIMLIE_SEED", default_value_t = 0, global = true)]
    seed: u64,
    /// Overrides the command's main threshold (trotter: roundoff plateau;
    /// lie3: bonding-derivative residual).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Directory receiving output files instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Trotter and commutator error ladders for two algebra elements.
    Trotter {
        /// System JSON.
        #[arg(long)]
        system: PathBuf,
        /// Levelled algebra element `{"level": k, "matrix": …}`.
        #[arg(long)]
        x: PathBuf,
        /// Second algebra element, same format as `--x`.
        #[arg(long)]
        y: PathBuf,
        /// Doubling range `a..b` or a comma-separated list.
        #[arg(long, default_value = "16..4096")]
        ladder: String,
    },
    /// Right product integral of a curve.
    Evolve {
        /// Curve JSON.
        curve: PathBuf,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        /// Solve per unit interval and stitch.
        #[arg(long)]
        stitch: bool,
        /// Partition the path into chart segments of this log radius.
        #[arg(long, value_name = "RHO")]
        partition: Option<f64>,
        /// Grönwall budget `k ε n`; `k` may be `auto`.
        #[arg(long, num_args = 3, value_names = ["K", "EPS", "N"])]
        budget: Option<Vec<String>>,
        /// Perturbations sampled under `--budget`.
        #[arg(long, default_value_t = 20)]
        perturbations: usize,
    },
    /// Integrates a filtration of a locally finite Lie algebra.
    Lie3 {
        /// Filtration JSON.
        filtration: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendArg::Bch)]
        backend: BackendArg,
        /// Random samples for the associativity check.
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Injective quotients of the squaring system on ℂ^× and the
    /// non-injectivity witnesses of the semidirect exponential.
    QuotientDemo {
        #[arg(long, default_value_t = 5)]
        levels: usize,
    },
    /// Runs a property suite.
    Check {
        #[arg(value_parser = parse_suite)]
        suite: Suite,
        /// Injects a seeded fault into a bonding map.
        #[arg(long)]
        corrupt: bool,
        /// Writes a JUnit XML report here.
        #[arg(long)]
        junit: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Bch,
    Matrix,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit status classes.
enum Failure {
    Invariant(String),
    Parse(String),
    Precondition(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invariant(_) => 1,
            Failure::Parse(_) => 2,
            Failure::Precondition(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invariant(m) | Failure::Parse(m) | Failure::Precondition(m) => m,
        }
    }
}

fn invariant(e: Error) -> Failure {
    Failure::Invariant(e.to_string())
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Trotter { system, x, y, ladder } => cmd_trotter(&cli, system, x, y, ladder),
        Command::Evolve {
            curve,
            step,
            stitch,
            partition,
            budget,
            perturbations,
        } => cmd_evolve(
            &cli,
            curve,
            *step,
            *stitch,
            *partition,
            budget.as_deref(),
            *perturbations,
        ),
        Command::Lie3 {
            filtration,
            backend,
            samples,
        } => cmd_lie3(&cli, filtration, *backend, *samples),
        Command::QuotientDemo { levels } => cmd_quotient_demo(&cli, *levels),
        Command::Check {
            suite,
            corrupt,
            junit,
        } => cmd_check(&cli, *suite, *corrupt, junit.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("limlie: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))
}

fn parsed<T>(path: &Path, r: limlie::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))
}

/// Writes `body` to `--out/name`, or to stdout when no directory is set.
fn emit(cli: &Cli, name: &str, body: &str) -> Outcome {
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::Invariant(format!("{}: {e}", dir.display())))?;
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Failure::Invariant(format!("{}: {e}", path.display())))
        }
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(body.as_bytes()).and_then(|()| out.flush()) {
                Err(e) if e.kind() != ErrorKind::BrokenPipe => {
                    Err(Failure::Invariant(format!("stdout: {e}")))
                }
                _ => Ok(()),
            }
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serialises");
    s.push('\n');
    s
}

fn parse_point(path: &Path, field: Field) -> Result<LimitPoint, Failure> {
    let v = read_json(path)?;
    let level = v
        .get("level")
        .and_then(Value::as_u64)
        .ok_or_else(|| Failure::Parse(format!("{}: needs an integer \"level\"", path.display())))?;
    let m = v
        .get("matrix")
        .ok_or_else(|| Failure::Parse(format!("{}: needs \"matrix\"", path.display())))?;
    let m = if m.is_array() {
        Matrix::from_json(&serde_json::json!({ "field": field, "rows": m }))
    } else {
        Matrix::from_json(m)
    };
    Ok(LimitPoint::new(level as usize, parsed(path, m)?))
}

fn parse_ladder(range: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Parse(format!("ladder {range:?}: expected a..b or n1,n2,…"));
    let ns = if let Some((a, b)) = range.split_once("..") {
        doubling(
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        )
    } else {
        range
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<u64>, _>>()?
    };
    if ns.is_empty() || ns.contains(&0) {
        return Err(bad());
    }
    Ok(ns)
}

#[derive(Serialize)]
struct LadderRow {
    n: u64,
    trotter_err: f64,
    commutator_err: f64,
}

#[derive(Serialize)]
struct TrotterReport {
    plateau: f64,
    trotter_monotone: bool,
    trotter_slope: Option<f64>,
    commutator_monotone: bool,
    commutator_slope: Option<f64>,
    rows: Vec<LadderRow>,
}

fn cmd_trotter(cli: &Cli, system: &Path, x: &Path, y: &Path, range: &str) -> Outcome {
    let (sys, _) = parsed(
        system,
        SystemDescriptor::from_json(&read_json(system)?, &Registry::builtin()),
    )?;
    let (x, y) = (parse_point(x, sys.field())?, parse_point(y, sys.field())?);
    if x.level != y.level {
        return Err(Failure::Parse(format!(
            "x is at level {} and y at level {}",
            x.level, y.level
        )));
    }
    let ns = parse_ladder(range)?;
    let plateau = cli.tol.unwrap_or(PLATEAU);
    let tr = ladder(&sys, &x, &y, &ns, Formula::Trotter).map_err(invariant)?;
    let cm = ladder(&sys, &x, &y, &ns, Formula::Commutator).map_err(invariant)?;
    let report = TrotterReport {
        plateau,
        trotter_monotone: tr.is_monotone(plateau),
        trotter_slope: tr.loglog_slope(plateau),
        commutator_monotone: cm.is_monotone(plateau),
        commutator_slope: cm.loglog_slope(plateau),
        rows: ns
            .iter()
            .zip(tr.errors.iter().zip(&cm.errors))
            .map(|(&n, (&t, &c))| LadderRow {
                n,
                trotter_err: t,
                commutator_err: c,
            })
            .collect(),
    };
    let mut csv = String::from("n,trotter_err,commutator_err\n");
    for r in &report.rows {
        csv.push_str(&format!("{},{:e},{:e}\n", r.n, r.trotter_err, r.commutator_err));
    }
    let slope = |s: Option<f64>| s.map_or("n/a".to_string(), |s| format!("{s:.4}"));
    eprintln!(
        "trotter slope {}, commutator slope {}",
        slope(report.trotter_slope),
        slope(report.commutator_slope)
    );
    match (&cli.out, cli.format) {
        (Some(_), _) => {
            emit(cli, "trotter.csv", &csv)?;
            emit(cli, "trotter.json", &to_json(&report))?;
        }
        (None, Format::Csv) => emit(cli, "", &csv)?,
        (None, Format::Json) => emit(cli, "", &to_json(&report))?,
    }
    if report.trotter_monotone {
        Ok(())
    } else {
        Err(Failure::Invariant(format!(
            "trotter error is not monotone above the {plateau:e} plateau"
        )))
    }
}

#[derive(Serialize)]
struct PartitionSummary {
    radius: f64,
    segments: usize,
    breakpoints: Vec<f64>,
    max_log_norm: f64,
    composition_residual: f64,
}

#[derive(Serialize)]
struct BudgetSummary {
    #[serde(flatten)]
    budget: GronwallBudget,
    k_estimated: bool,
    target: f64,
    bound: f64,
    satisfied: bool,
}

#[derive(Serialize)]
struct EvolveReport {
    mode: &'static str,
    level: usize,
    field: Field,
    domain: (f64, f64),
    step: f64,
    nodes: usize,
    endpoint: Matrix,
    junction_mismatch: Option<f64>,
    partition: Option<PartitionSummary>,
    budget: Option<BudgetSummary>,
    perturbation: Option<BatchReport>,
}

fn parse_number<T: std::str::FromStr>(name: &str, s: &str) -> Result<T, Failure> {
    s.parse()
        .map_err(|_| Failure::Parse(format!("{name}: cannot parse {s:?}")))
}

fn cmd_evolve(
    cli: &Cli,
    curve_path: &Path,
    step: f64,
    stitched: bool,
    partition: Option<f64>,
    budget: Option<&[String]>,
    perturbations: usize,
) -> Outcome {
    let curve = parsed(curve_path, CurveDescriptor::from_json(&read_json(curve_path)?))?;
    if !(step > 0.0) {
        return Err(Failure::Parse(format!("step must be positive, got {step}")));
    }
    let path = if stitched {
        stitch(&curve, step)
    } else {
        evolve(&curve, step)
    }
    .map_err(invariant)?;
    let mut report = EvolveReport {
        mode: if stitched { "stitch" } else { "single" },
        level: path.level(),
        field: path.field(),
        domain: path.domain(),
        step,
        nodes: path.len(),
        endpoint: path.endpoint(),
        junction_mismatch: stitched.then(|| junction_mismatch(&path)),
        partition: None,
        budget: None,
        perturbation: None,
    };
    if let Some(radius) = partition {
        let p = partition_for_chart(&curve, radius, step).map_err(invariant)?;
        report.partition = Some(PartitionSummary {
            radius,
            segments: p.segments.len(),
            composition_residual: p.composition_residual(&curve, step).map_err(invariant)?,
            breakpoints: p.breakpoints,
            max_log_norm: p.max_log_norm,
        });
    }
    if let Some(args) = budget {
        let k_estimated = args[0] == "auto";
        let k = if k_estimated {
            estimate_k(&curve, DEFAULT_CHART_RADIUS, 64, cli.seed).map_err(invariant)?
        } else {
            parse_number("k", &args[0])?
        };
        let eps: f64 = parse_number("ε", &args[1])?;
        let stage: u32 = parse_number("n", &args[2])?;
        let b = gronwall_budget(k, eps, stage).map_err(|e| Failure::Parse(e.to_string()))?;
        report.perturbation =
            Some(perturbation_batch(&curve, &b, perturbations, cli.seed, step).map_err(invariant)?);
        report.budget = Some(BudgetSummary {
            target: b.target(),
            bound: b.bound(),
            satisfied: b.satisfies_budget(),
            budget: b,
            k_estimated,
        });
    }
    let json = to_json(&report);
    match (&cli.out, cli.format) {
        (Some(_), _) => {
            emit(cli, "path.csv", &path.to_csv())?;
            emit(cli, "report.json", &json)?;
        }
        (None, Format::Csv) => {
            emit(cli, "", &path.to_csv())?;
            eprint!("{json}");
        }
        (None, Format::Json) => emit(cli, "", &json)?,
    }
    match &report.perturbation {
        Some(p) if p.violations > 0 => Err(Failure::Invariant(format!(
            "{} of {} perturbations violate the Grönwall bound",
            p.violations, p.runs
        ))),
        _ => Ok(()),
    }
}

fn cmd_lie3(cli: &Cli, path: &Path, backend: BackendArg, samples: usize) -> Outcome {
    let v = read_json(path)?;
    let filtration = match Filtration::from_json(&v) {
        Ok(f) => f,
        Err(e @ (Error::CapExceeded { .. } | Error::Construction(_))) => return Err(invariant(e)),
        Err(e) => return Err(Failure::Parse(format!("{}: {e}", path.display()))),
    };
    let backend = match backend {
        BackendArg::Bch => Backend::NilpotentBch,
        BackendArg::Matrix => Backend::MatrixRepresentation,
    };
    let group = integrate_algebra(&filtration, backend).map_err(|e| match e {
        Error::NotNilpotent { .. } => Failure::Precondition(e.to_string()),
        e => invariant(e),
    })?;
    let mut summary: IntegrationSummary = group.summary(samples, cli.seed).map_err(invariant)?;
    if let Some(tol) = cli.tol {
        summary.passed &= summary.bonding_residual <= tol;
    } else {
        summary.passed &= summary.bonding_residual <= BONDING_TOL;
    }
    emit(cli, "lie3.json", &to_json(&summary))?;
    if summary.passed {
        Ok(())
    } else {
        Err(Failure::Invariant(
            "integration residuals exceed their thresholds".into(),
        ))
    }
}

#[derive(Serialize)]
struct Witness {
    k: usize,
    coefficient: (f64, f64),
    s: f64,
    z_sup_norm: f64,
    t: f64,
}

#[derive(Serialize)]
struct QuotientDemo {
    levels: usize,
    real_quotient_dim: usize,
    complex_quotient_dim: usize,
    /// Level-1 quotient dimensions for accumulation depths `1..=levels`.
    real_dims_by_depth: Vec<usize>,
    complex_dims_by_depth: Vec<usize>,
    stabilized: bool,
    witnesses: Vec<Witness>,
}

fn quotient(levels: usize, bound: usize, category: Field) -> limlie::Result<QuotientReport> {
    let sys = SystemDescriptor::cx_squaring(levels)?;
    injective_quotient(&sys, &KernelLedger::cx_squaring(levels), bound, category).map(|(_, r)| r)
}

fn cmd_quotient_demo(cli: &Cli, levels: usize) -> Outcome {
    if levels < 2 {
        return Err(Failure::Parse(format!(
            "--levels must be at least 2, got {levels}"
        )));
    }
    let mut real = Vec::with_capacity(levels);
    let mut complex = Vec::with_capacity(levels);
    for bound in 1..=levels {
        real.push(quotient(levels, bound, Field::Real).map_err(invariant)?.levels[0].quotient_dim);
        complex.push(quotient(levels, bound, Field::Complex).map_err(invariant)?.levels[0].quotient_dim);
    }
    let mut witnesses = Vec::new();
    for k in 1..=3 {
        for coeff in [
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(0.0, 1.0),
        ] {
            let mut e = vec![Complex64::new(0.0, 0.0); k];
            e[k - 1] = coeff;
            let g = semidirect_exp(&LevelledVector::complex(&e), TAU);
            witnesses.push(Witness {
                k,
                coefficient: (coeff.re, coeff.im),
                s: TAU,
                z_sup_norm: g.z.sup_norm(),
                t: g.t,
            });
        }
    }
    let demo = QuotientDemo {
        levels,
        real_quotient_dim: *real.last().unwrap_or(&0),
        complex_quotient_dim: *complex.last().unwrap_or(&0),
        stabilized: real.windows(2).all(|w| w[0] == w[1]) && complex.windows(2).all(|w| w[0] == w[1]),
        real_dims_by_depth: real,
        complex_dims_by_depth: complex,
        witnesses,
    };
    let body = match cli.format {
        Format::Json => to_json(&demo),
        Format::Csv => {
            let mut s = format!(
                "real quotient algebra dimension: {}\ncomplex quotient algebra dimension: {}\n",
                demo.real_quotient_dim, demo.complex_quotient_dim
            );
            s.push_str(&format!(
                "by accumulation depth: real {:?}, complex {:?}\nwitnesses:\n",
                demo.real_dims_by_depth, demo.complex_dims_by_depth
            ));
            for w in &demo.witnesses {
                let c = match w.coefficient {
                    (re, 0.0) => format!("{re}"),
                    (0.0, im) => format!("{im}i"),
                    (re, im) => format!("{re}+{im}i"),
                };
                s.push_str(&format!(
                    "exp({c}·e_{}, 2π) = (0, 2π): |z| = {:.3e}, t = {}\n",
                    w.k, w.z_sup_norm, w.t
                ));
            }
            s
        }
    };
    emit(cli, "quotient.txt", &body)
}

fn cmd_check(cli: &Cli, suite: Suite, corrupt: bool, junit: Option<&Path>) -> Outcome {
    let report = check::run(
        suite,
        &CheckConfig {
            seed: cli.seed,
            corrupt,
        },
    );
    let body = match cli.format {
        Format::Json => to_json(&report),
        Format::Csv => report.to_text(),
    };
    emit(cli, &format!("check-{}.txt", suite.name()), &body)?;
    if let Some(path) = junit {
        fs::write(path, report.to_junit())
            .map_err(|e| Failure::Invariant(format!("{}: {e}", path.display())))?;
    } else if cli.out.is_some() {
        emit(cli, &format!("check-{}.xml", suite.name()), &report.to_junit())?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Invariant(format!(
            "{} of {} checks failed",
            report.failures(),
            report.cases.len()
        )))
    }
}
