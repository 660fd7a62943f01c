//! Command-line front end.
//!
//! Exit codes: 0 success, 2 unreadable input (usage, I/O, parse errors),
//! 3 invalid problem or arguments, 4 exhaustive-search cap exceeded,
//! 5 a verified property failed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::io::{FileError, McRecord, ProblemFile, ReportFile, SelectionRecord, VerificationRecord};
use crate::model::InverseProblem;
use crate::objective::{phi_eig, Design};
use crate::problems::{ChainParams, ProblemKind, ProblemSpec};
use crate::select::{self, SelectionReport, DEFAULT_EXHAUSTIVE_CAP};
use crate::verify::{self, SubmodularMode, EXHAUSTIVE_MAX_CANDIDATES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_CAP: i32 = 4;
pub const EXIT_PROPERTY: i32 = 5;

/// Monte Carlo acceptance band, in standard errors.
pub const MC_Z: f64 = 3.0;

#[derive(Debug, Parser)]
#[command(
    name = "eigsense",
    version,
    about = "Greedy sensor placement by expected information gain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print phi = log det(I + H~(S)) and EIG = phi / 2 for a sensor subset.
    Eval {
        problem: PathBuf,
        /// Comma-separated 1-based sensor indices; empty for no sensors.
        #[arg(default_value = "")]
        subset: String,
    },
    /// Greedy selection of k sensors.
    Greedy {
        #[command(flatten)]
        sel: SelectArgs,
        /// Use lazy evaluation of marginal gains.
        #[arg(long)]
        lazy: bool,
        /// Compare against the exhaustive optimum and report the ratio.
        #[arg(long)]
        certify: bool,
    },
    /// Exact optimum by enumerating all k-subsets.
    Exhaustive {
        #[command(flatten)]
        sel: SelectArgs,
    },
    /// Check monotonicity, diminishing returns and the analytic EIG.
    Verify {
        problem: PathBuf,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Design for the Monte Carlo check; defaults to all active sensors.
        #[arg(long)]
        subset: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Generate a test problem file.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
struct SelectArgs {
    problem: PathBuf,
    #[arg(short, long)]
    k: usize,
    /// Maximum number of subsets for exhaustive search.
    #[arg(long, default_value_t = DEFAULT_EXHAUSTIVE_CAP)]
    cap: u128,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Record wall time and a timestamp in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Random,
    Chain,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    n: usize,
    #[arg(long = "ns")]
    n_s: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    conditioning: f64,
    #[arg(long)]
    diffusivity: Option<f64>,
    #[arg(long)]
    element_size: Option<f64>,
    #[arg(long)]
    prior_correlation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Comma-separated 0-based chain nodes for the sensors.
    #[arg(long)]
    sensors: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Parse(String),
    Invariant(String),
    Cap(String),
    Property(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Parse(_) => EXIT_PARSE,
            Failure::Invariant(_) => EXIT_INVARIANT,
            Failure::Cap(_) => EXIT_CAP,
            Failure::Property(_) => EXIT_PROPERTY,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Parse(m) | Failure::Invariant(m) | Failure::Cap(m) | Failure::Property(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::CapExceeded { .. } => Failure::Cap(e.to_string()),
            Error::BoundViolated { .. } => Failure::Property(e.to_string()),
            _ => Failure::Invariant(e.to_string()),
        }
    }
}

impl From<FileError> for Failure {
    fn from(e: FileError) -> Self {
        Failure::Parse(e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Formats `x` with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..=12).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.*e}", digits - 1)
    }
}

/// Parses `"1,3"` into 0-based indices. Empty input is the empty set.
fn parse_indices(text: &str, one_based: bool) -> std::result::Result<Vec<usize>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let i: usize = t.parse().map_err(|_| Failure::Parse(format!("invalid index {t:?}")))?;
            if one_based {
                i.checked_sub(1)
                    .ok_or_else(|| Failure::Invariant("sensor indices are 1-based".into()))
            } else {
                Ok(i)
            }
        })
        .collect()
}

fn load(path: &Path) -> std::result::Result<(ProblemFile, InverseProblem), Failure> {
    let file = ProblemFile::read(path)?;
    let problem = file.to_problem()?;
    Ok((file, problem))
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> std::result::Result<T, Failure> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Failure::Invariant(format!("cannot start {t} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn io_fail(e: std::io::Error) -> Failure {
    Failure::Parse(format!("cannot write output: {e}"))
}

fn print_selection(out: &mut dyn Write, r: &SelectionReport) -> std::io::Result<()> {
    writeln!(
        out,
        "method   {}",
        serde_json::to_value(r.method)
            .unwrap_or_default()
            .as_str()
            .unwrap_or("")
    )?;
    writeln!(out, "{:>5}  {:>6}  {:>20}  {:>20}", "step", "sensor", "gain", "phi")?;
    for (i, s) in r.steps.iter().enumerate() {
        writeln!(
            out,
            "{:>5}  {:>6}  {:>20}  {:>20}",
            i + 1,
            s.index + 1,
            format_sig(s.gain, 12),
            format_sig(s.phi, 12)
        )?;
    }
    let chosen: Vec<String> = r.chosen.one_based().iter().map(|i| i.to_string()).collect();
    writeln!(out, "chosen   [{}]", chosen.join(", "))?;
    writeln!(out, "phi_eig  {}", format_sig(r.phi_final, 12))?;
    writeln!(out, "eig_nats {}", format_sig(r.eig_final, 12))?;
    if let Some(c) = &r.certificate {
        writeln!(out, "opt_phi  {}", format_sig(c.opt_phi, 12))?;
        writeln!(out, "ratio    {}", format_sig(c.ratio, 12))?;
        writeln!(out, "floor    {}", format_sig(c.floor, 12))?;
    }
    Ok(())
}

fn write_report(
    out: &mut dyn Write,
    path: Option<&Path>,
    file: &ProblemFile,
    r: &SelectionReport,
    timing: bool,
) -> CmdResult {
    print_selection(out, r).map_err(io_fail)?;
    if let Some(path) = path {
        let mut rf = ReportFile::new(file.hash());
        rf.timestamp = timing.then(unix_now);
        rf.selection = Some(SelectionRecord::from_report(r, timing));
        rf.write(path)?;
    }
    Ok(())
}

fn cmd_eval(out: &mut dyn Write, problem: &Path, subset: &str) -> CmdResult {
    let (_, p) = load(problem)?;
    let design = Design::new(&p, parse_indices(subset, true)?)?;
    let phi = phi_eig(&p, &design)?;
    writeln!(out, "phi_eig  {}", format_sig(phi, 12)).map_err(io_fail)?;
    writeln!(out, "eig_nats {}", format_sig(0.5 * phi, 12)).map_err(io_fail)?;
    Ok(())
}

fn cmd_greedy(out: &mut dyn Write, sel: &SelectArgs, lazy: bool, certify: bool) -> CmdResult {
    let (file, p) = load(&sel.problem)?;
    let report = with_threads(sel.threads, || -> crate::Result<SelectionReport> {
        let g = if lazy {
            select::lazy_greedy(&p, sel.k)?
        } else {
            select::greedy(&p, sel.k)?
        };
        if certify {
            let e = select::exhaustive(&p, sel.k, sel.cap)?;
            select::certify_bound(&g, &e)
        } else {
            Ok(g)
        }
    })??;
    write_report(out, sel.out.as_deref(), &file, &report, sel.timing)
}

fn cmd_exhaustive(out: &mut dyn Write, sel: &SelectArgs) -> CmdResult {
    let (file, p) = load(&sel.problem)?;
    let report = with_threads(sel.threads, || select::exhaustive(&p, sel.k, sel.cap))??;
    write_report(out, sel.out.as_deref(), &file, &report, sel.timing)
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    out: &mut dyn Write,
    problem: &Path,
    trials: usize,
    samples: usize,
    seed: u64,
    subset: Option<&str>,
    report_path: Option<&Path>,
    threads: Option<usize>,
) -> CmdResult {
    let (file, p) = load(problem)?;
    let design = match subset {
        Some(s) => Design::new(&p, parse_indices(s, true)?)?,
        None => Design::all_active(&p),
    };
    let record = with_threads(threads, || -> crate::Result<VerificationRecord> {
        let monotone = verify::check_monotone(&p, trials, seed)?;
        let mode = if p.active_indices().len() <= EXHAUSTIVE_MAX_CANDIDATES {
            SubmodularMode::Exhaustive
        } else {
            SubmodularMode::Randomized { trials, seed }
        };
        let submodular = verify::check_submodular(&p, mode)?;
        let estimate = verify::mc_eig(&p, &design, samples, seed)?;
        let analytic_eig = 0.5 * phi_eig(&p, &design)?;
        let within = estimate.within(analytic_eig, MC_Z);
        let passed = monotone.passed() && submodular.passed() && within;
        Ok(VerificationRecord {
            monotone,
            submodular,
            mc: McRecord {
                estimate,
                design: design.one_based(),
                analytic_eig,
                z_tolerance: MC_Z,
                within_tolerance: within,
            },
            passed,
        })
    })??;

    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format_sig(v, 6));
    let m = &record.monotone;
    let s = &record.submodular;
    let mc = &record.mc;
    let lines = [
        format!(
            "monotone    checked {:>7}  min gain {}  max formula error {}  violations {}",
            m.checked,
            opt(m.min_gain),
            format_sig(m.max_formula_error, 3),
            m.violations.len()
        ),
        format!(
            "submodular  checked {:>7}  max violation {}  max closed-form error {}  violations {}  ({})",
            s.checked,
            opt(s.max_violation),
            format_sig(s.max_closed_form_error, 3),
            s.violations.len(),
            match s.mode {
                SubmodularMode::Exhaustive => "exhaustive",
                SubmodularMode::Randomized { .. } => "randomized",
            }
        ),
        format!(
            "mc_eig      mean {}  stderr {}  analytic {}  samples {}  within {}σ: {}",
            format_sig(mc.estimate.mean_kl, 6),
            format_sig(mc.estimate.std_error, 3),
            format_sig(mc.analytic_eig, 6),
            mc.estimate.n_samples,
            MC_Z,
            mc.within_tolerance
        ),
        format!("result      {}", if record.passed { "PASS" } else { "FAIL" }),
    ];
    for l in &lines {
        writeln!(out, "{l}").map_err(io_fail)?;
    }
    for v in m.violations.iter().chain(s.violations.iter()).take(10) {
        writeln!(out, "violation   {} ({:e})", v.description, v.amount).map_err(io_fail)?;
    }
    if let Some(path) = report_path {
        let mut rf = ReportFile::new(file.hash());
        rf.verification = Some(record.clone());
        rf.write(path)?;
    }
    if record.passed {
        Ok(())
    } else {
        Err(Failure::Property("verification failed".into()))
    }
}

fn cmd_gen(out: &mut dyn Write, g: &GenArgs) -> CmdResult {
    let defaults = ChainParams::default();
    let sensors = g.sensors.as_deref().map(|s| parse_indices(s, false)).transpose()?;
    let spec = ProblemSpec {
        kind: match g.kind {
            KindArg::Random => ProblemKind::Random,
            KindArg::Chain => ProblemKind::Chain,
        },
        n: g.n,
        n_s: g.n_s,
        seed: g.seed,
        conditioning: g.conditioning,
        chain: ChainParams {
            diffusivity: g.diffusivity.unwrap_or(defaults.diffusivity),
            element_size: g.element_size,
            prior_correlation: g.prior_correlation.unwrap_or(defaults.prior_correlation),
            noise_std: g.noise.unwrap_or(defaults.noise_std),
            sensors,
        },
    };
    let problem = spec.generate()?;
    let file = ProblemFile::from_problem(&problem, Some(spec));
    match &g.out {
        Some(path) => file.write(path)?,
        None => out.write_all(file.to_json().as_bytes()).map_err(io_fail)?,
    }
    Ok(())
}

/// Runs the command line `args` (including the program name) and returns the
/// exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    let result = match &cli.command {
        Command::Eval { problem, subset } => cmd_eval(out, problem, subset),
        Command::Greedy { sel, lazy, certify } => cmd_greedy(out, sel, *lazy, *certify),
        Command::Exhaustive { sel } => cmd_exhaustive(out, sel),
        Command::Verify {
            problem,
            trials,
            samples,
            seed,
            subset,
            out: report,
            threads,
        } => cmd_verify(
            out,
            problem,
            *trials,
            *samples,
            *seed,
            subset.as_deref(),
            report.as_deref(),
            *threads,
        ),
        Command::Gen(g) => cmd_gen(out, g),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message());
            f.code()
        }
    }
}
