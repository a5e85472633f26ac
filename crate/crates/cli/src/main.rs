//! `ipmforge` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or schema error, 2 verification
//! failure, 3 oracle guard exceeded.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use ipmforge::codegen::{
    build_kernel, interpret, render_c, render_kernel_json, render_sidecar_json, ExecMode, SpecializeOptions,
    DEFAULT_ELEM_SPLIT_THRESHOLD,
};
use ipmforge::ipm::{gamma_limit, CertificateJson, SolveError, StepError};
use ipmforge::lp::{check_strict_feasibility, FeasibleWitness};
use ipmforge::mpc::MpcJson;
use ipmforge::oracle::OracleError;
use ipmforge::suite::{csv_row, run_instance, MRange, RunOptions, SuiteSpec, CSV_HEADER};
use ipmforge::{solve, solve_by_vertex_enumeration, IpmConfig, LpInstance, LpJson, Matrix, MonitorMode};

#[derive(Debug)]
enum Failure {
    Usage(String),
    Verification(String),
    Guard(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Verification(m) | Failure::Guard(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Verification(_) => 2,
            Failure::Guard(_) => 3,
        }
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

fn verification(msg: impl Into<String>) -> anyhow::Error {
    Failure::Verification(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(
    name = "ipmforge",
    version,
    about = "Short-step interior-point LP solving and kernel generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode an MPC problem as an LP; writes lp.json and layout.json.
    Encode {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve an LP and emit a certificate.
    Solve {
        input: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Certificate path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate kernel.json, solver.c and sidecar.json for an LP.
    Gen {
        input: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
        /// Matrix statements with more output elements become per-element functions.
        #[arg(long, default_value_t = DEFAULT_ELEM_SPLIT_THRESHOLD)]
        split_threshold: usize,
    },
    /// Verify a certificate against the vertex-enumeration optimum.
    Check { lp: PathBuf, certificate: PathBuf },
    /// Run the random-instance suite and print CSV.
    Bench {
        /// Variable counts, `lo..hi` or `lo..=hi`.
        #[arg(long, default_value = "2..=4")]
        n_range: String,
        /// Row counts, `lo..hi` or `lo..=hi`; an `n` suffix scales by the variable count.
        #[arg(long, default_value = "3n..5n")]
        m_range: String,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-2)]
        epsilon: f64,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, value_enum, default_value_t = Monitor::Error)]
        monitor: Monitor,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Strictly feasible start, comma-separated; overrides `x0` in the input.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Barrier parameter; defaults to the number of constraint rows.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, value_enum, default_value_t = Monitor::Error)]
    monitor: Monitor,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Monitor {
    Error,
    Warn,
}

impl From<Monitor> for MonitorMode {
    fn from(m: Monitor) -> Self {
        match m {
            Monitor::Error => MonitorMode::Error,
            Monitor::Warn => MonitorMode::Warn,
        }
    }
}

fn build_config(
    epsilon: f64,
    beta: Option<f64>,
    gamma: Option<f64>,
    nu: Option<f64>,
    monitor: Monitor,
) -> anyhow::Result<IpmConfig> {
    let mut cfg = IpmConfig::default_config(epsilon);
    if let Some(b) = beta {
        cfg.beta = b;
        cfg.gamma = gamma_limit(b);
    }
    if let Some(g) = gamma {
        cfg.gamma = g;
    }
    cfg.nu = nu;
    cfg.monitor = monitor.into();
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        usage(format!("{}: at `{at}`: {}", path.display(), e.inner()))
    })
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

struct Loaded {
    lp: LpInstance,
    start: FeasibleWitness,
    cfg: IpmConfig,
}

fn load_lp(path: &Path, args: &SolverArgs) -> anyhow::Result<Loaded> {
    let json: LpJson = read_json(path)?;
    let (lp, x0) = json
        .to_instance()
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let x0 = match &args.x0 {
        Some(v) => Matrix::column(v).map_err(|e| usage(format!("--x0: {e}")))?,
        None => x0.ok_or_else(|| usage("no starting point: pass --x0 or add `x0` to the LP file"))?,
    };
    if x0.rows() != lp.n() {
        return Err(usage(format!("x0 has {} entries, expected {}", x0.rows(), lp.n())));
    }
    let start = check_strict_feasibility(&lp, &x0).map_err(|e| usage(format!("x0: {e}")))?;
    let eps = args.epsilon.unwrap_or(lp.epsilon());
    let lp = lp.with_epsilon(eps).map_err(|e| usage(e.to_string()))?;
    let cfg = build_config(eps, args.beta, args.gamma, args.nu, args.monitor)?;
    Ok(Loaded { lp, start, cfg })
}

fn cmd_encode(input: &Path, out: &Path) -> anyhow::Result<()> {
    let mpc: MpcJson = read_json(input)?;
    let enc = mpc.encode().map_err(|e| usage(format!("{}: {e}", input.display())))?;
    let Some(witness) = &enc.witness else {
        return Err(verification(
            "encoded LP has no strictly feasible interpolated start; the target may be unreachable within the bounds",
        ));
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_file(
        &out.join("lp.json"),
        &to_pretty(&LpJson::from_instance(&enc.lp, Some(&witness.x))),
    )?;
    write_file(&out.join("layout.json"), &to_pretty(&enc.layout))?;
    info!("encoded {} variables and {} rows", enc.lp.n(), enc.lp.m());
    Ok(())
}

fn cmd_solve(input: &Path, args: &SolverArgs, out: Option<&Path>) -> anyhow::Result<()> {
    let Loaded { lp, start, cfg } = load_lp(input, args)?;
    match solve(&lp, &start, &cfg) {
        Ok(cert) => {
            emit(out, &to_pretty(&CertificateJson::from(&cert)))?;
            let clean = cert.monitor_clean();
            let within = cert.gap_bound <= cfg.epsilon;
            if cfg.monitor == MonitorMode::Warn {
                if !clean {
                    warn!("monitor recorded {} violation(s)", cert.violations().count());
                }
                if !within {
                    warn!("gap bound {:e} exceeds epsilon {:e}", cert.gap_bound, cfg.epsilon);
                }
                return Ok(());
            }
            if !clean {
                return Err(verification("monitor recorded violations"));
            }
            if !within {
                return Err(verification(format!(
                    "gap bound {:e} exceeds epsilon {:e}",
                    cert.gap_bound, cfg.epsilon
                )));
            }
            Ok(())
        }
        Err(SolveError::Step { error, certificate }) => {
            if let StepError::Monitor(_, record) = &error {
                eprintln!("{}", serde_json::to_string(record).expect("serializable"));
            }
            emit(out, &to_pretty(&CertificateJson::from(certificate.as_ref())))?;
            Err(verification(error.to_string()))
        }
        Err(SolveError::Config(e)) => Err(usage(e.to_string())),
        Err(SolveError::Start(e)) => Err(usage(format!("starting point: {e}"))),
        Err(e) => Err(verification(e.to_string())),
    }
}

fn cmd_gen(input: &Path, args: &SolverArgs, out: &Path, split_threshold: usize) -> anyhow::Result<()> {
    let Loaded { lp, start, cfg } = load_lp(input, args)?;
    let built = build_kernel(
        &lp,
        &start,
        &cfg,
        SpecializeOptions {
            elem_split_threshold: split_threshold,
        },
    )
    .map_err(|e| verification(e.to_string()))?;
    let run = interpret(&built.kernel, ExecMode::checked(&built.sidecar))
        .map_err(|e| verification(format!("checked interpretation: {e}")))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("kernel.json"), &(render_kernel_json(&built.kernel) + "\n"))?;
    write_file(&out.join("sidecar.json"), &(render_sidecar_json(&built.sidecar) + "\n"))?;
    write_file(&out.join("solver.c"), &render_c(&built.kernel, &built.sidecar))?;
    let summary = serde_json::json!({
        "trip_count": built.kernel.sizes.trip_count,
        "functions": built.kernel.functions.len(),
        "static_bytes": built.kernel.static_footprint_bytes(),
        "clauses_checked": run.clauses_checked,
        "x_final": run.certificate.x_final.data(),
        "objective": run.certificate.objective,
        "t_final": run.certificate.t_final,
        "gap_bound": run.certificate.gap_bound,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct CheckItem {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn cmd_check(lp_path: &Path, cert_path: &Path) -> anyhow::Result<()> {
    let json: LpJson = read_json(lp_path)?;
    let (lp, _) = json
        .to_instance()
        .map_err(|e| usage(format!("{}: {e}", lp_path.display())))?;
    let cert: CertificateJson = read_json(cert_path)?;
    let eps = cert.config.epsilon;
    let oracle = solve_by_vertex_enumeration(&lp).map_err(|e| match e {
        OracleError::GuardExceeded { .. } => anyhow::Error::from(Failure::Guard(e.to_string())),
        OracleError::NoFeasibleVertex => verification(e.to_string()),
    })?;
    let x = Matrix::column(&cert.x).map_err(|e| usage(format!("certificate x: {e}")))?;
    if x.rows() != lp.n() {
        return Err(usage(format!(
            "certificate x has {} entries, expected {}",
            x.rows(),
            lp.n()
        )));
    }
    let cx = lp.objective(&x).map_err(|e| usage(e.to_string()))?;
    let gap = cert.objective - oracle.optimum;
    let mut checks = Vec::new();
    checks.push(CheckItem {
        name: "objective_matches_x",
        pass: (cx - cert.objective).abs() <= 1e-9 * (1.0 + cx.abs()),
        detail: format!("c'x = {cx:.12e}, reported {:.12e}", cert.objective),
    });
    let feasible = check_strict_feasibility(&lp, &x);
    checks.push(CheckItem {
        name: "x_strictly_feasible",
        pass: feasible.is_ok(),
        detail: match &feasible {
            Ok(w) => format!("min slack {:e}", w.min_slack()),
            Err(e) => e.to_string(),
        },
    });
    checks.push(CheckItem {
        name: "optimality",
        pass: gap.abs() <= eps + 1e-9,
        detail: format!("objective - optimum = {gap:e}, epsilon {eps:e}"),
    });
    match &cert.schedule {
        Some(s) => {
            let recomputed = s.gap_bound(cert.t_final);
            checks.push(CheckItem {
                name: "gap_bound_recomputed",
                pass: (recomputed - cert.gap_bound).abs() <= 1e-12 * recomputed.abs().max(1e-300),
                detail: format!("constant/t_final = {recomputed:e}, reported {:e}", cert.gap_bound),
            });
            checks.push(CheckItem {
                name: "gap_within_bound",
                pass: gap <= recomputed + 1e-9,
                detail: format!("gap {gap:e} against bound {recomputed:e}"),
            });
            checks.push(CheckItem {
                name: "t_final_reaches_t_stop",
                pass: cert.t_final >= s.t_stop && cert.iterations == s.trip_count,
                detail: format!(
                    "t_final {:e}, t_stop {:e}, iterations {}/{}",
                    cert.t_final, s.t_stop, cert.iterations, s.trip_count
                ),
            });
        }
        None => checks.push(CheckItem {
            name: "gap_within_bound",
            pass: gap.abs() <= 1e-9,
            detail: "no schedule: degenerate cost, start must already be optimal".into(),
        }),
    }
    let pass = checks.iter().all(|c| c.pass);
    let report = serde_json::json!({
        "pass": pass,
        "optimum": oracle.optimum,
        "active_set": oracle.active_set,
        "objective": cert.objective,
        "gap": gap,
        "checks": checks,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    if pass {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        Err(verification(format!("check failed: {}", failed.join(", "))))
    }
}

fn parse_range(text: &str) -> Option<(usize, usize, bool)> {
    let (lo, hi, inclusive) = if let Some((a, b)) = text.split_once("..=") {
        (a, b, true)
    } else {
        let (a, b) = text.split_once("..")?;
        (a, b, false)
    };
    let lo: usize = lo.trim().parse().ok()?;
    let hi: usize = hi.trim().parse().ok()?;
    let hi = if inclusive { hi + 1 } else { hi };
    (lo < hi).then_some((lo, hi, inclusive))
}

fn parse_m_range(text: &str) -> Option<MRange> {
    let scaled = text.contains('n');
    let plain = text.replace('n', "");
    let (lo, hi, _) = parse_range(&plain)?;
    if scaled {
        let all_scaled = text
            .split("..")
            .all(|p| p.trim_start_matches('=').trim().ends_with('n'));
        all_scaled.then_some(MRange::PerVariable { lo, hi })
    } else {
        Some(MRange::Absolute { lo, hi })
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    n_range: &str,
    m_range: &str,
    count: usize,
    seed: u64,
    epsilon: f64,
    beta: Option<f64>,
    gamma: Option<f64>,
    monitor: Monitor,
    jobs: Option<usize>,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let (lo, hi, _) =
        parse_range(n_range).ok_or_else(|| usage(format!("--n-range `{n_range}`: expected lo..hi or lo..=hi")))?;
    if lo == 0 {
        return Err(usage("--n-range must start at 1 or more"));
    }
    let m = parse_m_range(m_range)
        .ok_or_else(|| usage(format!("--m-range `{m_range}`: expected lo..hi, lo..=hi or 3n..5n")))?;
    let cfg = build_config(epsilon, beta, gamma, None, monitor)?;
    let spec = SuiteSpec {
        n_values: (lo..hi).collect(),
        m_range: m,
        count,
        seed,
        epsilon,
    };
    for &n in &spec.n_values {
        if spec.m_range.rows(n).start < 3 * n {
            return Err(usage(format!("--m-range must give m >= 3n (n = {n})")));
        }
    }
    let items = spec.items();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| anyhow!("thread pool: {e}"))?;
    let reports: Vec<_> = pool.install(|| {
        items
            .par_iter()
            .map(|item| run_instance(*item, &cfg, epsilon, RunOptions::default()))
            .collect()
    });
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &reports {
        if let Some(e) = &r.error {
            warn!("n={} m={} seed={}: {e}", r.n, r.m, r.seed);
        }
        csv.push_str(&csv_row(r));
        csv.push('\n');
    }
    emit(out, &csv)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Encode { input, out } => cmd_encode(&input, &out),
        Command::Solve { input, solver, out } => cmd_solve(&input, &solver, out.as_deref()),
        Command::Gen {
            input,
            solver,
            out,
            split_threshold,
        } => cmd_gen(&input, &solver, &out, split_threshold),
        Command::Check { lp, certificate } => cmd_check(&lp, &certificate),
        Command::Bench {
            n_range,
            m_range,
            count,
            seed,
            epsilon,
            beta,
            gamma,
            monitor,
            jobs,
            out,
        } => cmd_bench(
            &n_range,
            &m_range,
            count,
            seed,
            epsilon,
            beta,
            gamma,
            monitor,
            jobs,
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IPMFORGE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.downcast_ref::<Failure>().map_or(1, Failure::code);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
