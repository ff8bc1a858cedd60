//! Command-line front end: `fit`, `rates`, `sparsity`, `verify` and
//! `calc-rate`.
//!
//! Configurations are JSON files, optionally adjusted by flags. Each run that
//! writes artifacts also writes the resolved configuration (`config.json`)
//! and a `manifest.json`; passing that `config.json` back reproduces the same
//! artifact bytes. Exit status is 2 for usage and configuration errors, 1 for
//! failed verification or a failed run, and 0 otherwise.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{rate_exponent, RateParams, DEFAULT_XI};
use crate::error::Error;
use crate::experiments::{run_rate_experiment, sparsity_sweep, EvalSet, ExperimentConfig};
use crate::kernel::KernelSpec;
use crate::loss::LossSpec;
use crate::models::{sample_dataset, ConditionalModel, Dataset, Design, ModelSpec};
use crate::solver::{fit, SolverOptions};
use crate::util::{maybe_inf, parse_maybe_inf, to_json_bytes, write_atomic};
use crate::verify::{run_all, VerifyOptions};

const THREADS_ENV: &str = "QTUBE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "qtube", version, about = "Kernel regression with the epsilon-insensitive q-norm loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one dataset and write the fit as JSON.
    Fit(FitArgs),
    /// Run a learning-rate sweep over sample sizes.
    Rates(RatesArgs),
    /// Sweep the tube width on one dataset.
    Sparsity(SparsityArgs),
    /// Run the invariant suite and print one line per check.
    Verify(VerifyArgs),
    /// Evaluate the rate exponent for a parameter set.
    CalcRate(CalcRateArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "qtube-out")]
    out: PathBuf,
    /// Worker threads (falls back to QTUBE_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// CSV dataset with columns x_0..x_{d-1},y; replaces any sampled data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct RatesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Tube decay exponent; `inf` means ε = 0.
    #[arg(long, value_parser = parse_maybe_inf)]
    eta: Option<f64>,
    /// Comma-separated sample sizes.
    #[arg(long = "T-grid", value_delimiter = ',')]
    t_grid: Option<Vec<usize>>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args, Debug)]
struct SparsityArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Smaller samples and no rate sweeps.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Also write the results as JSON into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalcRateArgs {
    /// JSON file holding the rate parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    w: Option<f64>,
    /// Power-model exponent: sets w = φ + 1 and α = η = (q+φ+1)/(2(q+φ)).
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, value_parser = parse_maybe_inf)]
    p: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_maybe_inf)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
}

/// Configuration of the `fit` subcommand. Data come from `data` (CSV) or
/// are sampled from `model` with `T` and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub design: Design,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub kernel: KernelSpec,
    pub q: f64,
    #[serde(default)]
    pub eps: f64,
    pub lambda: f64,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn default_r_norm() -> f64 {
    2.0
}

fn default_n_mc() -> usize {
    20_000
}

/// Configuration of the `sparsity` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsityConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub design: Design,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(default)]
    pub seed: u64,
    pub kernel: KernelSpec,
    pub q: f64,
    pub lambda: f64,
    pub eps_grid: Vec<f64>,
    #[serde(with = "maybe_inf", default = "default_r_norm")]
    pub r_norm: f64,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default)]
    pub solver: SolverOptions,
}

/// Provenance record written next to every set of artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the resolved `config.json`.
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<PathBuf>,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } | Error::DimensionMismatch { .. } | Error::Json(_) | Error::Csv(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Run(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Rates(a) => run_rates(a),
        Command::Sparsity(a) => run_sparsity(a),
        Command::Verify(a) => run_verify(a),
        Command::CalcRate(a) => run_calc_rate(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn thread_count(flag: Option<usize>) -> CliResult<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(Failure::Usage("thread count must be >= 1".into()));
    }
    Ok(n)
}

fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Run(format!("cannot start worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Writes `config.json`, the named artifacts and the manifest into `out`.
fn persist<C: Serialize>(
    command: &str,
    out: &Path,
    config: &C,
    seed: u64,
    threads: usize,
    started_at: String,
    artifacts: Vec<(&str, Vec<u8>)>,
) -> CliResult<()> {
    let config_bytes = to_json_bytes(config)?;
    let hash = Sha256::digest(&config_bytes);
    let mut config_hash = String::with_capacity(64);
    for b in hash {
        let _ = write!(config_hash, "{b:02x}");
    }
    let mut outputs = vec![out.join("config.json")];
    write_atomic(&outputs[0], &config_bytes)?;
    for (name, bytes) in artifacts {
        let path = out.join(name);
        write_atomic(&path, &bytes)?;
        outputs.push(path);
    }
    let manifest = RunManifest {
        command: command.into(),
        config_hash,
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        threads,
        started_at,
        finished_at: now(),
        outputs,
    };
    write_atomic(&out.join("manifest.json"), &to_json_bytes(&manifest)?)?;
    Ok(())
}

fn run_fit(a: FitArgs) -> CliResult<i32> {
    let started_at = now();
    let Some(path) = &a.common.config else {
        return Err(Failure::Usage("fit needs --config".into()));
    };
    let mut cfg: FitConfig = read_config(path)?;
    if let Some(d) = a.data {
        cfg.data = Some(d);
    }
    if let Some(v) = a.q {
        cfg.q = v;
    }
    if let Some(v) = a.eps {
        cfg.eps = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    let spec = LossSpec::new(cfg.q, cfg.eps)?;
    cfg.kernel.validate()?;
    cfg.solver.validate()?;
    let dataset = match (&cfg.data, &cfg.model, cfg.t) {
        (Some(p), _, _) => {
            let f = fs::File::open(p).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
            Dataset::read_csv(f)?
        }
        (None, Some(m), Some(t)) => sample_dataset(&ConditionalModel::new(m.clone())?, &cfg.design, t, cfg.seed)?,
        _ => return Err(Failure::Usage("fit config needs `data`, or `model` with `T`".into())),
    };
    let threads = thread_count(a.common.threads)?;
    let result = with_threads(threads, || fit(&dataset, &cfg.kernel, &spec, cfg.lambda, &cfg.solver))??;
    println!(
        "fit: T={} objective={:.6e} iterations={} converged={} support={}",
        dataset.len(),
        result.diagnostics.objective,
        result.iterations,
        result.converged,
        result.support.len()
    );
    let json = result.to_json()?;
    persist("fit", &a.common.out, &cfg, cfg.seed, threads, started_at, vec![("fit.json", to_json_bytes(&json)?)])?;
    Ok(0)
}

fn run_rates(a: RatesArgs) -> CliResult<i32> {
    let started_at = now();
    let mut cfg = match &a.common.config {
        Some(p) => read_config::<ExperimentConfig>(p)?,
        None => ExperimentConfig::power_schedule(a.q.unwrap_or(2.0), 1.0),
    };
    if let Some(v) = a.q {
        cfg.q = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.eta {
        cfg.eta = v;
    }
    if let Some(v) = a.t_grid {
        cfg.t_grid = v;
    }
    if let Some(v) = a.repeats {
        cfg.repeats = v;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let threads = thread_count(a.common.threads)?;
    let report = with_threads(threads, || run_rate_experiment(&cfg))??;
    print!("{}", report.rows_csv());
    println!(
        "slope {:.4} (se {:.4}), theoretical exponent {:.4}, failed cells {}",
        report.fitted_slope,
        report.slope_stderr,
        report.theoretical_lambda,
        report.failures.len()
    );
    let artifacts = vec![
        ("report.json", to_json_bytes(&report)?),
        ("rows.csv", report.rows_csv().into_bytes()),
        ("scatter.csv", report.scatter_csv().into_bytes()),
    ];
    persist("rates", &a.common.out, &cfg, cfg.seed, threads, started_at, artifacts)?;
    Ok(0)
}

fn run_sparsity(a: SparsityArgs) -> CliResult<i32> {
    let started_at = now();
    let Some(path) = &a.common.config else {
        return Err(Failure::Usage("sparsity needs --config".into()));
    };
    let mut cfg: SparsityConfig = read_config(path)?;
    if let Some(v) = a.q {
        cfg.q = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    let model = ConditionalModel::new(cfg.model.clone())?;
    let threads = thread_count(a.common.threads)?;
    let rows = with_threads(threads, || {
        let data = sample_dataset(&model, &cfg.design, cfg.t, cfg.seed)?;
        let eval = EvalSet::new(&model, &cfg.design, cfg.q, cfg.n_mc, cfg.seed)?;
        sparsity_sweep(&data, &cfg.kernel, cfg.q, cfg.lambda, &cfg.eps_grid, &cfg.solver, Some((&eval, cfg.r_norm)))
    })??;
    let mut csv = String::from("eps,ratio,objective,lr_error,converged\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.eps,
            r.ratio,
            r.objective,
            r.lr_error.map_or(String::new(), |v| v.to_string()),
            r.converged
        );
    }
    print!("{csv}");
    let artifacts = vec![("sparsity.json", to_json_bytes(&rows)?), ("sparsity.csv", csv.into_bytes())];
    persist("sparsity", &a.common.out, &cfg, cfg.seed, threads, started_at, artifacts)?;
    Ok(0)
}

fn run_verify(a: VerifyArgs) -> CliResult<i32> {
    let mut opts = if a.quick { VerifyOptions::quick() } else { VerifyOptions::default() };
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    let threads = thread_count(a.threads)?;
    let checks = with_threads(threads, || run_all(&opts))?;
    for c in &checks {
        println!("{} {}.{}: {}", if c.passed { "PASS" } else { "FAIL" }, c.module, c.name, c.detail);
    }
    if !opts.rate_sweeps {
        println!("SKIP experiments.rate_sweep_*: not run with --quick");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    if let Some(out) = a.out {
        write_atomic(&out.join("verify.json"), &to_json_bytes(&checks)?)?;
    }
    Ok(i32::from(failed > 0))
}

fn run_calc_rate(a: CalcRateArgs) -> CliResult<i32> {
    let mut params = match (&a.config, a.phi) {
        (Some(p), _) => read_config::<RateParams>(p)?,
        (None, Some(phi)) => {
            let q = a.q.ok_or_else(|| Failure::Usage("--phi needs --q".into()))?;
            RateParams::power_schedule(q, phi)
        }
        (None, None) => {
            let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Failure::Usage(format!("calc-rate needs --{name} (or --config)")));
            RateParams {
                q: need(a.q, "q")?,
                w: need(a.w, "w")?,
                p: f64::INFINITY,
                alpha: need(a.alpha, "alpha")?,
                eta: need(a.eta, "eta")?,
                beta: 1.0,
                k: 0.0,
                xi: DEFAULT_XI,
            }
        }
    };
    let overrides = [
        (a.q, &mut params.q),
        (a.w, &mut params.w),
        (a.p, &mut params.p),
        (a.alpha, &mut params.alpha),
        (a.eta, &mut params.eta),
        (a.beta, &mut params.beta),
        (a.k, &mut params.k),
        (a.xi, &mut params.xi),
    ];
    for (flag, field) in overrides {
        if let Some(v) = flag {
            *field = v;
        }
    }
    let exponent = rate_exponent(&params)?;
    let bytes = to_json_bytes(&exponent)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(0)
}
