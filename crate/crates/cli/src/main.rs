use std::f64::consts::TAU;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use sectorcount::harness::{
    cons_configuration, max_cons_count, max_mom_count, measure_point, mom_configuration, run_suite,
    sample_query, CurveConfig, ExperimentConfig, HarnessError, Suite,
};
use sectorcount::mc::chunk_rng;
use sectorcount::momentum::{Calibration, CountReport, DEFAULT_MAX_TUPLES};
use sectorcount::parallelogram::{preimage_count, PreimageCount};
use sectorcount::sectorization::{
    anisotropic_sectorization, build_sectorization_with_width, validate_sectorization, Scale,
};
use sectorcount::Curve;

const WORKERS_ENV: &str = "SECTORCOUNT_WORKERS";

#[derive(Parser)]
#[command(
    name = "sectorcount",
    version,
    about = "Sector counting experiments on strictly convex curves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Geometry invariants and the Jacobian identity.
    Geometry(SuiteArgs),
    /// Sectorization invariants.
    Sectorization(SuiteArgs),
    /// Area formula and preimage bound; with --curve, per-point preimage counts as CSV.
    Parallelogram(ParallelogramArgs),
    /// Measure scaling in the window width.
    Measure(SuiteArgs),
    /// Single-scale counting and the feasibility oracle.
    Mom(SuiteArgs),
    /// Two-scale counting.
    Cons(SuiteArgs),
    /// Every check.
    All(SuiteArgs),
    /// Curve tables.
    Curve {
        #[command(subcommand)]
        action: CurveAction,
    },
    /// Sector layout as CSV.
    Sectorize(SectorizeArgs),
    /// Measure ratio against ω₁ as CSV.
    MeasureScan(MeasureArgs),
    /// Single-scale counts over a δ/l sweep as CSV.
    CountMom(CountArgs),
    /// Two-scale counts over a sweep of fine scales as CSV.
    CountCons(CountArgs),
}

#[derive(Args, Default)]
struct SuiteArgs {
    /// TOML experiment configuration; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for a suite, output file for a CSV dump.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParallelogramArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    #[arg(long, value_parser = parse_curve)]
    curve: Option<CurveConfig>,
    #[arg(long, default_value_t = 10_000)]
    q_samples: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Subcommand)]
enum CurveAction {
    /// One row per table grid point: phi, x, y, kappa, psi, arclen, antipodal_phi.
    Dump {
        #[arg(long, value_parser = parse_curve)]
        curve: CurveConfig,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SectorizeArgs {
    #[arg(long, value_parser = parse_curve)]
    curve: CurveConfig,
    #[arg(long = "M", default_value_t = 10.0)]
    base: f64,
    #[arg(long)]
    j: u32,
    /// Sector length; `M^{-j/2}` when absent.
    #[arg(long)]
    length: Option<f64>,
    /// Sector width; `M^{-j}` when absent.
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long, value_parser = parse_curve)]
    curve: CurveConfig,
    #[arg(long, default_value_t = 0.3)]
    p: f64,
    #[arg(long, default_value_t = 0.5)]
    omega2: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05,0.025")]
    omegas: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long, value_parser = parse_curve)]
    curve: CurveConfig,
    #[arg(long = "M", default_value_t = 10.0)]
    base: f64,
    /// Fine scales; `count-mom` uses the first.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    j: Vec<u32>,
    /// Coarse scale for `count-cons`.
    #[arg(long, default_value_t = 2)]
    i: u32,
    #[arg(long)]
    n: Option<usize>,
    /// Interval lengths in units of l, for `count-mom`.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    delta: Vec<f64>,
    /// Smallest admissible separation; queries below it are reported.
    #[arg(long, default_value_t = 0.0)]
    omega: f64,
    /// Conservation tolerance in units of `M^{-j}`, for `count-cons`.
    #[arg(long, default_value_t = 1.0)]
    k_tol: f64,
    /// Target parameter; drawn from the seed when absent.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_TUPLES)]
    max_tuples: f64,
    /// Bound constant; fitted on this run with safety 1.5 when absent.
    #[arg(long)]
    constant: Option<f64>,
    /// Sub-sector offsets per axis for `count-mom`.
    #[arg(long, default_value_t = 8)]
    phases: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_curve(s: &str) -> Result<CurveConfig, String> {
    s.parse()
}

/// Exit status: 0 pass, 1 failure, 2 configuration error.
enum Failure {
    Config(String),
    Run(String),
    /// Downstream reader went away, e.g. `| head`.
    Closed,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Run(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::BrokenPipe {
            return Failure::Closed;
        }
        Failure::Run(e.to_string())
    }
}

fn config_err(e: impl ToString) -> Failure {
    Failure::Config(e.to_string())
}

fn run_err(e: impl ToString) -> Failure {
    Failure::Run(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_workers().and_then(|_| dispatch(cli.command));
    match outcome {
        Ok(true) | Err(Failure::Closed) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn configure_workers() -> Result<(), Failure> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let workers: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        config_err(format!(
            "{WORKERS_ENV} must be a positive integer, got `{value}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(run_err)
}

fn dispatch(command: Command) -> Result<bool, Failure> {
    match command {
        Command::Geometry(a) => suite(Suite::Geometry, a),
        Command::Sectorization(a) => suite(Suite::Sectorization, a),
        Command::Parallelogram(a) => match a.curve {
            Some(curve) => parallelogram_dump(
                &curve,
                a.q_samples,
                a.suite.seed.unwrap_or(0),
                a.tol,
                a.suite.out,
            ),
            None => suite(Suite::Parallelogram, a.suite),
        },
        Command::Measure(a) => suite(Suite::Measure, a),
        Command::Mom(a) => suite(Suite::Mom, a),
        Command::Cons(a) => suite(Suite::Cons, a),
        Command::All(a) => suite(Suite::All, a),
        Command::Curve {
            action: CurveAction::Dump { curve, out },
        } => curve_dump(&curve, out),
        Command::Sectorize(a) => sectorize(a),
        Command::MeasureScan(a) => measure_scan(a),
        Command::CountMom(a) => count_mom(a),
        Command::CountCons(a) => count_cons(a),
    }
}

fn suite(which: Suite, args: SuiteArgs) -> Result<bool, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml_str(&text)?
        }
        None => ExperimentConfig::default(),
    };
    config.suite = which;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.out.is_some() {
        config.output = args.out;
    }
    let result = run_suite(&config)?;
    print!("{}", result.summary_text());
    for c in &result.checks {
        let budget = if c.within_budget() {
            ""
        } else {
            " over budget"
        };
        println!(
            "{}: {:.1} s of {:.0} s{budget}",
            c.check.name(),
            c.runtime_s,
            c.check.budget_s()
        );
    }
    Ok(result.passed())
}

fn build(curve: &CurveConfig) -> Result<Curve, Failure> {
    curve.build().map_err(config_err)
}

fn sink(out: Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(path) => Box::new(io::BufWriter::new(fs::File::create(path)?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn curve_dump(config: &CurveConfig, out: Option<PathBuf>) -> Result<bool, Failure> {
    let curve = build(config)?;
    let mut w = sink(out)?;
    writeln!(w, "phi,x,y,kappa,psi,arclen,antipodal_phi")?;
    for i in 0..curve.sample_count() {
        let p = curve.point_at(curve.grid_phi(i));
        let a = curve.antipodal(p.phi).map_err(run_err)?;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            p.phi, p.position.x, p.position.y, p.curvature, p.tangent_angle, p.arclen, a
        )?;
    }
    w.flush()?;
    Ok(true)
}

fn sectorize(args: SectorizeArgs) -> Result<bool, Failure> {
    let curve = build(&args.curve)?;
    let scale = Scale::new(args.j, args.base).map_err(config_err)?;
    let sec = match (args.length, args.width) {
        (None, None) => anisotropic_sectorization(&curve, scale),
        (length, width) => {
            let l = length.unwrap_or_else(|| scale.anisotropic_length());
            build_sectorization_with_width(&curve, scale, l, width.unwrap_or_else(|| scale.width()))
        }
    }
    .map_err(config_err)?;
    if let Some(adj) = sec.length_adjustment {
        eprintln!(
            "sector length shortened by {:.3}% to {}",
            100.0 * adj,
            sec.length
        );
    }
    let mut w = sink(args.out)?;
    writeln!(
        w,
        "index,center_phi,l,Lambda,x0,y0,x1,y1,x2,y2,x3,y3,overlap_prev"
    )?;
    for s in &sec.sectors {
        let c = s.rect.corners();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.index,
            s.center_phi,
            s.length,
            s.width,
            c[0].x,
            c[0].y,
            c[1].x,
            c[1].y,
            c[2].x,
            c[2].y,
            c[3].x,
            c[3].y,
            sec.overlaps[s.index]
        )?;
    }
    w.flush()?;
    let violations = validate_sectorization(&sec);
    for v in &violations {
        eprintln!("violation: {v}");
    }
    Ok(violations.is_empty())
}

fn parallelogram_dump(
    config: &CurveConfig,
    samples: usize,
    seed: u64,
    tol: f64,
    out: Option<PathBuf>,
) -> Result<bool, Failure> {
    let curve = build(config)?;
    let mut rng = chunk_rng(seed, 0);
    let mut w = sink(out)?;
    writeln!(w, "qx,qy,count,degenerate,min_sin_theta")?;
    for _ in 0..samples {
        let q = sample_query(&curve, &mut rng);
        let r = preimage_count(&curve, q, tol).map_err(config_err)?;
        let count = match r.count {
            PreimageCount::Finite(n) => n.to_string(),
            PreimageCount::Infinite => "inf".to_string(),
        };
        let min_sin = r.min_sin_theta.map(|s| s.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{count},{},{min_sin}", q.x, q.y, r.degenerate)?;
    }
    w.flush()?;
    Ok(true)
}

fn measure_scan(args: MeasureArgs) -> Result<bool, Failure> {
    let curve = build(&args.curve)?;
    let mut rng = chunk_rng(args.seed, 0);
    let mut w = sink(args.out)?;
    writeln!(w, "omega1,ratio,stderr")?;
    for &omega1 in &args.omegas {
        let r = measure_point(&curve, args.p, omega1, args.omega2, args.samples, rng.gen())
            .map_err(config_err)?;
        writeln!(w, "{omega1},{},{}", r.ratio, r.stderr)?;
    }
    w.flush()?;
    Ok(true)
}

fn target_parameter(args: &CountArgs) -> f64 {
    args.p
        .unwrap_or_else(|| chunk_rng(args.seed, 0).gen_range(0.0..TAU))
}

fn write_counts(args: &CountArgs, rows: &[(f64, CountReport)]) -> Result<bool, Failure> {
    let constant = args
        .constant
        .unwrap_or_else(|| Calibration::fit(rows.iter().map(|(_, r)| r), 1.5).constant);
    if args.constant.is_none() {
        eprintln!("bound constant fitted on this run: {constant}");
    }
    for (x, r) in rows {
        if r.omega < args.omega {
            eprintln!(
                "sweep value {x}: separation {} below --omega {}",
                r.omega, args.omega
            );
        }
        for note in &r.notes {
            eprintln!("sweep value {x}: {note}");
        }
    }
    let mut w = sink(args.out.clone())?;
    writeln!(w, "sweep_value,exact_count,bound_value,runtime_ms")?;
    for (x, r) in rows {
        writeln!(
            w,
            "{x},{},{},{:.3}",
            r.exact_count,
            constant * r.shape,
            r.runtime_ms
        )?;
    }
    w.flush()?;
    Ok(true)
}

fn count_mom(args: CountArgs) -> Result<bool, Failure> {
    let curve = build(&args.curve)?;
    let n = args.n.unwrap_or(2);
    let j = *args
        .j
        .first()
        .ok_or_else(|| config_err("--j needs a value"))?;
    let sec = anisotropic_sectorization(&curve, Scale::new(j, args.base).map_err(config_err)?)
        .map_err(config_err)?;
    let p = target_parameter(&args);
    let centers = mom_configuration(&curve, p, n)?;
    let mut rows = Vec::new();
    for &d in &args.delta {
        let start = Instant::now();
        let mut r = max_mom_count(
            &sec,
            p,
            &centers,
            d * sec.length,
            args.phases.max(1),
            args.max_tuples,
        )
        .map_err(run_err)?;
        r.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        rows.push((d, r));
    }
    write_counts(&args, &rows)
}

fn count_cons(args: CountArgs) -> Result<bool, Failure> {
    let curve = build(&args.curve)?;
    let n = args.n.unwrap_or(3);
    let coarse =
        anisotropic_sectorization(&curve, Scale::new(args.i, args.base).map_err(config_err)?)
            .map_err(config_err)?;
    let p = target_parameter(&args);
    let legs = cons_configuration(&curve, p, n)?;
    let mut rows = Vec::new();
    for &j in &args.j {
        if j <= args.i {
            return Err(config_err(format!(
                "fine scale j = {j} must exceed i = {}",
                args.i
            )));
        }
        let fine = anisotropic_sectorization(&curve, Scale::new(j, args.base).map_err(config_err)?)
            .map_err(config_err)?;
        let start = Instant::now();
        let mut r = max_cons_count(&fine, &coarse, p, &legs, args.k_tol, args.max_tuples)
            .map_err(run_err)?;
        r.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        rows.push(((j - args.i) as f64, r));
    }
    write_counts(&args, &rows)
}
