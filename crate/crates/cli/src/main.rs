use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use hankel_scs::checks::{full_suite, SuiteOptions};
use hankel_scs::experiment::{parse_step, run_noise, run_phase, run_timing, sample_count, NoiseSpec, PhaseSpec, SolverKind, TimingSpec};
use hankel_scs::io::{read_json, write_json, ModelFile, ResultFile, SignalFile};
use hankel_scs::rng::seeded;
use hankel_scs::signal::{observe, random_model, synthesize, uniform_mask, ModelOptions};
use hankel_scs::{SolverConfig, Termination};
use serde_json::{json, Value};

const THREADS_ENV: &str = "HANKEL_SCS_THREADS";

#[derive(Parser, Debug)]
#[command(name = "hankel-scs", version, about = "Spectral compressed sensing by symmetric Hankel matrix completion")]
struct Cli {
    /// Master seed; overrides any seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// JSON config: a solver config for `recover`, an experiment spec for
    /// `phase`, `timing` and `noise`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; HANKEL_SCS_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a random model and a noisy partial observation of it.
    Gen(GenArgs),
    /// Recover a full signal from an observation file.
    Recover(RecoverArgs),
    /// Success-rate grid over rank and sampling ratio.
    Phase(PhaseArgs),
    /// Time to accuracy, SHGD against PGD.
    Timing(TimingArgs),
    /// Reconstruction error against noise level.
    Noise(NoiseArgs),
    /// Operator, factorization and theory property checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 127)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    /// Number of observed samples.
    #[arg(long, conflicts_with = "ratio")]
    m: Option<usize>,
    /// Sampling ratio; `m = floor(ratio n)`.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Minimum frequency separation in units of 1/n.
    #[arg(long)]
    min_sep: Option<f64>,
    /// Sample with replacement.
    #[arg(long)]
    replacement: bool,
    /// Where to write the ground-truth model.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecoverArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value = "shgd")]
    solver: SolverKind,
    /// `fixed:<eta'>` or `backtrack`.
    #[arg(long)]
    step: Option<String>,
    /// Relative-change stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args, Debug)]
struct ExperimentOut {
    /// Leave wall-time columns empty so the CSV is reproducible byte for
    /// byte.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args, Debug)]
struct PhaseArgs {
    /// Full-size grid: n = 126, r = 1..=35, 19 ratios, 50 trials.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    solver: Option<SolverKind>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[command(flatten)]
    out: ExperimentOut,
}

#[derive(Args, Debug)]
struct TimingArgs {
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<f64>>,
    #[arg(long)]
    repeats: Option<usize>,
    #[command(flatten)]
    out: ExperimentOut,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sample_counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    solver: Option<SolverKind>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 127)]
    max_n: usize,
    #[arg(long, hide = true)]
    corrupt_weights: bool,
}

enum Failure {
    Usage(anyhow::Error),
    Solver(anyhow::Error),
    Selftest,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver failure: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Selftest) => ExitCode::from(3),
    }
}

fn thread_count(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?)),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Outcome {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = thread_count(cli.threads)? {
        pool = pool.num_threads(t);
    }
    let pool = pool.build()?;
    pool.install(|| dispatch(&cli))
}

fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Gen(a) => gen(cli, a),
        Command::Recover(a) => recover(cli, a),
        Command::Phase(a) => phase(cli, a),
        Command::Timing(a) => timing(cli, a),
        Command::Noise(a) => noise(cli, a),
        Command::Selftest(a) => selftest(cli, a),
    }
}

fn emit_text(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    match out {
        Some(p) => Ok(write_json(p, value)?),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn load<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    match path {
        Some(p) => read_json(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(T::default()),
    }
}

fn gen(cli: &Cli, a: &GenArgs) -> Outcome {
    let m = match (a.m, a.ratio) {
        (Some(m), _) => m,
        (None, Some(p)) if p > 0.0 && p <= 1.0 => sample_count(p, a.n),
        (None, Some(p)) => return Err(anyhow!("ratio {p} is outside (0, 1]").into()),
        (None, None) => sample_count(0.6, a.n),
    };
    let mut rng = seeded(cli.seed.unwrap_or(0));
    let opts = ModelOptions { min_sep: a.min_sep.map(|s| s / a.n as f64), damping_range: None };
    let model = random_model(a.n, a.rank, &opts, &mut rng)?;
    let mask = uniform_mask(a.n, m, a.replacement, &mut rng)?;
    let observed = observe(&synthesize(&model), &mask, a.sigma, &mut rng)?;
    if let Some(p) = &a.model_out {
        write_json(p, &ModelFile::from(&model))?;
    }
    emit_json(cli.out.as_deref(), &SignalFile::new(&observed, &mask)?)?;
    Ok(())
}

fn recover(cli: &Cli, a: &RecoverArgs) -> Outcome {
    let file: SignalFile = read_json(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (signal, mask) = file.decode()?;
    let mut cfg: SolverConfig = load(cli.config.as_deref())?;
    if let Some(r) = a.rank {
        cfg.r = r;
    }
    if let Some(s) = &a.step {
        cfg.step_policy = parse_step(s)?;
    }
    if let Some(t) = a.tol {
        cfg.rel_change_tol = t;
    }
    if let Some(k) = a.max_iters {
        cfg.max_iters = k;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let res = a.solver.recover(&signal, &mask, &cfg).map_err(|e| match e {
        hankel_scs::Error::InvalidArgument(_) => Failure::Usage(e.into()),
        _ => Failure::Solver(e.into()),
    })?;
    emit_json(cli.out.as_deref(), &ResultFile::from(&res))?;
    let reason = serde_json::to_value(res.termination)?;
    eprintln!("{}: {} after {} iterations", a.solver.name(), reason.as_str().unwrap_or("?"), res.iters);
    if res.termination == Termination::Diverged {
        return Err(Failure::Solver(anyhow!("loss diverged")));
    }
    Ok(())
}

fn git_hash() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

/// `results.csv` gets `results.csv.json` next to it.
fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn write_outputs(cli: &Cli, kind: &str, csv: &str, spec: Value, extra: Value, started: Instant) -> anyhow::Result<()> {
    emit_text(cli.out.as_deref(), csv)?;
    let Some(out) = &cli.out else { return Ok(()) };
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = json!({
        "kind": kind,
        "spec": spec,
        "results": extra,
        "git_hash": git_hash(),
        "host": {
            "os": std::env::consts::OS,
            "arch": std::env::consts::ARCH,
            "threads": rayon::current_num_threads(),
        },
        "unix_time": stamp,
        "elapsed_s": started.elapsed().as_secs_f64(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_json(sidecar_path(out), &meta)?;
    Ok(())
}

fn phase(cli: &Cli, a: &PhaseArgs) -> Outcome {
    let mut spec: PhaseSpec = load(cli.config.as_deref())?;
    if a.full {
        let full = PhaseSpec::full();
        spec.n = full.n;
        spec.ranks = full.ranks;
        spec.ratios = full.ratios;
        spec.trials = full.trials;
    }
    if let Some(v) = a.n {
        spec.n = v;
    }
    if let Some(v) = &a.ranks {
        spec.ranks = v.clone();
    }
    if let Some(v) = &a.ratios {
        spec.ratios = v.clone();
    }
    if let Some(v) = a.trials {
        spec.trials = v;
    }
    if let Some(v) = a.solver {
        spec.solver = v;
    }
    if let Some(v) = a.max_iters {
        spec.config.max_iters = v;
    }
    if let Some(v) = cli.seed {
        spec.seed = v;
    }
    let started = Instant::now();
    let grid = run_phase(&spec)?;
    write_outputs(cli, "phase", &grid.to_csv(!a.out.no_timing), serde_json::to_value(&spec)?, Value::Null, started)?;
    Ok(())
}

fn timing(cli: &Cli, a: &TimingArgs) -> Outcome {
    let mut spec: TimingSpec = load(cli.config.as_deref())?;
    if let Some(v) = &a.sizes {
        spec.sizes = v.clone();
    }
    if let Some(v) = a.rank {
        spec.r = v;
    }
    if let Some(v) = a.m {
        spec.m = v;
    }
    if let Some(v) = a.trials {
        spec.trials = v;
    }
    if let Some(v) = &a.targets {
        spec.targets = v.clone();
    }
    if let Some(v) = a.repeats {
        spec.repeats = v;
    }
    if let Some(v) = cli.seed {
        spec.seed = v;
    }
    let started = Instant::now();
    let res = run_timing(&spec).map_err(|e| Failure::Solver(e.into()))?;
    for c in &res.costs {
        eprintln!(
            "n={} {}: {:.1} conv passes/iter, {:.1} FFTs/iter, init {:.0} ms",
            c.n,
            c.solver.name(),
            c.passes_per_iter,
            c.fft_calls_per_iter,
            c.mean_init_ms
        );
    }
    let costs = if a.out.no_timing { Value::Null } else { json!({ "costs": res.costs }) };
    write_outputs(cli, "timing", &res.to_csv(!a.out.no_timing), serde_json::to_value(&spec)?, costs, started)?;
    Ok(())
}

fn noise(cli: &Cli, a: &NoiseArgs) -> Outcome {
    let mut spec: NoiseSpec = load(cli.config.as_deref())?;
    if let Some(v) = a.n {
        spec.n = v;
    }
    if let Some(v) = a.rank {
        spec.r = v;
    }
    if let Some(v) = &a.sample_counts {
        spec.sample_counts = v.clone();
    }
    if let Some(v) = &a.sigmas {
        spec.sigmas = v.clone();
    }
    if let Some(v) = a.trials {
        spec.trials = v;
    }
    if let Some(v) = a.solver {
        spec.solver = v;
    }
    if let Some(v) = cli.seed {
        spec.seed = v;
    }
    let started = Instant::now();
    let res = run_noise(&spec)?;
    let slopes: Vec<Value> =
        spec.sample_counts.iter().map(|&m| json!({ "m": m, "loglog_slope": res.loglog_slope(m) })).collect();
    let failures: usize = res.rows.iter().map(|r| r.failures).sum();
    write_outputs(cli, "noise", &res.to_csv(), serde_json::to_value(&spec)?, json!({ "slopes": slopes, "failures": failures }), started)?;
    Ok(())
}

fn selftest(cli: &Cli, a: &SelftestArgs) -> Outcome {
    let opts = SuiteOptions { cases: a.cases, max_n: a.max_n, seed: cli.seed.unwrap_or(0), corrupt_weights: a.corrupt_weights };
    let started = Instant::now();
    let outcomes = full_suite(&opts);
    let mut report = String::new();
    for o in &outcomes {
        report.push_str(&format!("{o}\n"));
    }
    let passed = outcomes.iter().filter(|o| o.passed()).count();
    report.push_str(&format!("{passed}/{} checks passed in {:.1} s\n", outcomes.len(), started.elapsed().as_secs_f64()));
    emit_text(cli.out.as_deref(), &report)?;
    if passed == outcomes.len() {
        Ok(())
    } else {
        Err(Failure::Selftest)
    }
}
