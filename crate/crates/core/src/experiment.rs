//! Seeded Monte Carlo experiments: phase-transition grids, time-to-accuracy
//! comparisons and noise sweeps, with CSV output.
//!
//! Every trial draws its model, mask and noise from a generator seeded by
//! `derive_seed(master, coordinates)`, so results do not depend on how
//! trials are scheduled across workers.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::metrics::rel_error;
use crate::pgd::pgd_recover_with;
use crate::rng::{derive_seed, seeded};
use crate::shgd::recover_with;
use crate::signal::{observe, random_model, synthesize, uniform_mask, ModelOptions, SamplingMask};
use crate::solver::{IterView, RecoveryResult, SolverConfig, StepPolicy};

/// Relative error below which a noiseless recovery counts as a success.
pub const SUCCESS_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Shgd,
    Pgd,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Shgd => "shgd",
            SolverKind::Pgd => "pgd",
        }
    }

    pub fn recover(self, observed: &[Complex64], mask: &SamplingMask, config: &SolverConfig) -> Result<RecoveryResult> {
        self.recover_with(observed, mask, config, &mut |_| ControlFlow::Continue(()))
    }

    pub fn recover_with(
        self,
        observed: &[Complex64],
        mask: &SamplingMask,
        config: &SolverConfig,
        observer: &mut dyn FnMut(&IterView<'_>) -> ControlFlow<()>,
    ) -> Result<RecoveryResult> {
        match self {
            SolverKind::Shgd => recover_with(observed, mask, config, observer),
            SolverKind::Pgd => pgd_recover_with(observed, mask, config, observer),
        }
    }
}

impl FromStr for SolverKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shgd" => Ok(SolverKind::Shgd),
            "pgd" => Ok(SolverKind::Pgd),
            other => Err(invalid(format!("unknown solver {other:?} (expected shgd or pgd)"))),
        }
    }
}

/// Parses `fixed:<eta'>` or `backtrack`.
pub fn parse_step(s: &str) -> Result<StepPolicy> {
    if s == "backtrack" {
        return Ok(StepPolicy::backtracking());
    }
    let eta = s
        .strip_prefix("fixed:")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| invalid(format!("step must be fixed:<eta'> or backtrack, got {s:?}")))?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid("fixed step scale must be positive"));
    }
    Ok(StepPolicy::Fixed { eta_prime: eta })
}

/// `p` as an integer key for seed derivation, immune to float formatting.
fn ratio_key(p: f64) -> u64 {
    (p * 1e6).round() as u64
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, c) = v.into_iter().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

/// `⌊p n⌋` observations, at least one.
pub fn sample_count(p: f64, n: usize) -> usize {
    ((p * n as f64 + 1e-9).floor() as usize).clamp(1, n)
}

struct Trial {
    x: Vec<Complex64>,
    observed: Vec<Complex64>,
    mask: SamplingMask,
}

fn draw_trial(seed: u64, n: usize, r: usize, m: usize, model: &ModelOptions, sigma_e: f64) -> Result<Trial> {
    let mut rng = seeded(seed);
    let truth = random_model(n, r, model, &mut rng)?;
    let x = synthesize(&truth).into_vec();
    let mask = uniform_mask(n, m, false, &mut rng)?;
    let observed = observe(&x, &mask, sigma_e, &mut rng)?.into_vec();
    Ok(Trial { x, observed, mask })
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseSpec {
    pub n: usize,
    pub ranks: Vec<usize>,
    pub ratios: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverKind,
    pub model: ModelOptions,
    /// Rank is overwritten per cell.
    pub config: SolverConfig,
}

impl Default for PhaseSpec {
    fn default() -> Self {
        Self {
            n: 127,
            ranks: (1..=16).collect(),
            ratios: (1..=9).map(|k| k as f64 / 10.0).collect(),
            trials: 20,
            seed: 0,
            solver: SolverKind::Shgd,
            model: ModelOptions::default(),
            // Near-colliding frequencies converge slowly but do converge; a
            // short budget turns them into spurious failures at high p.
            config: SolverConfig { max_iters: 5000, ..SolverConfig::default() },
        }
    }
}

impl PhaseSpec {
    /// The full-size grid: `n = 126`, `r = 1..=35`, 19 ratios from 0.05 to
    /// 0.95, 50 trials.
    pub fn full() -> Self {
        Self {
            n: 126,
            ranks: (1..=35).collect(),
            ratios: (1..=19).map(|k| k as f64 / 20.0).collect(),
            trials: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.ranks.is_empty() || self.ratios.is_empty() {
            return Err(invalid("trials, ranks and ratios must be nonempty"));
        }
        if self.ranks.contains(&0) || self.ratios.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(invalid("ranks must be positive and ratios in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub r: usize,
    pub p: f64,
    pub m: usize,
    pub successes: usize,
    pub trials: usize,
    /// Over trials where the solver returned; `NaN` when none did.
    pub mean_iters: f64,
    pub mean_ms: f64,
}

impl PhaseCell {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub spec: PhaseSpec,
    pub cells: Vec<PhaseCell>,
}

impl GridResult {
    pub fn cell(&self, r: usize, p: f64) -> Option<&PhaseCell> {
        self.cells.iter().find(|c| c.r == r && ratio_key(c.p) == ratio_key(p))
    }

    /// CSV with one row per `(r, p)`. Wall-time columns are left empty when
    /// `timing` is false so the output is reproducible byte for byte.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("r,p,m,successes,trials,mean_iters,mean_ms\n");
        for c in &self.cells {
            let ms = if timing { fmt_f(c.mean_ms) } else { String::new() };
            writeln!(out, "{},{},{},{},{},{},{}", c.r, c.p, c.m, c.successes, c.trials, fmt_f(c.mean_iters), ms).expect("write to string");
        }
        out
    }
}

struct Outcome {
    success: bool,
    iters: Option<f64>,
    ms: Option<f64>,
}

fn phase_trial(spec: &PhaseSpec, r: usize, p: f64, trial: usize) -> Outcome {
    let seed = derive_seed(spec.seed, &[r as u64, ratio_key(p), trial as u64]);
    let m = sample_count(p, spec.n);
    let run = || -> Result<(f64, RecoveryResult)> {
        let t = draw_trial(seed, spec.n, r, m, &spec.model, 0.0)?;
        let cfg = SolverConfig { r, seed, ..spec.config.clone() };
        let res = spec.solver.recover(&t.observed, &t.mask, &cfg)?;
        Ok((rel_error(&res.x_hat, &t.x)?, res))
    };
    match run() {
        Ok((err, res)) => Outcome {
            success: err <= SUCCESS_TOL,
            iters: Some(res.iters as f64),
            ms: Some(res.init_ms + res.history.last().map_or(0.0, |h| h.ms)),
        },
        // Solver failures count as non-success; the grid carries on.
        Err(_) => Outcome { success: false, iters: None, ms: None },
    }
}

/// Runs `trials` seeded recoveries per `(r, p)` cell on the current rayon
/// pool and aggregates them in grid order.
pub fn run_phase(spec: &PhaseSpec) -> Result<GridResult> {
    spec.validate()?;
    SolverConfig { r: 1, ..spec.config.clone() }.validate()?;
    let jobs: Vec<(usize, usize, usize)> = (0..spec.ranks.len())
        .flat_map(|ri| (0..spec.ratios.len()).flat_map(move |pi| (0..spec.trials).map(move |t| (ri, pi, t))))
        .collect();
    let mut done: Vec<((usize, usize, usize), Outcome)> =
        jobs.par_iter().map(|&(ri, pi, t)| ((ri, pi, t), phase_trial(spec, spec.ranks[ri], spec.ratios[pi], t))).collect();
    done.sort_by_key(|(k, _)| *k);
    let mut cells = Vec::with_capacity(spec.ranks.len() * spec.ratios.len());
    for chunk in done.chunks(spec.trials) {
        let (ri, pi, _) = chunk[0].0;
        let outs: Vec<&Outcome> = chunk.iter().map(|(_, o)| o).collect();
        cells.push(PhaseCell {
            r: spec.ranks[ri],
            p: spec.ratios[pi],
            m: sample_count(spec.ratios[pi], spec.n),
            successes: outs.iter().filter(|o| o.success).count(),
            trials: spec.trials,
            mean_iters: mean(outs.iter().filter_map(|o| o.iters)),
            mean_ms: mean(outs.iter().filter_map(|o| o.ms)),
        });
    }
    Ok(GridResult { spec: spec.clone(), cells })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingSpec {
    /// Signal lengths; one block of rows per length.
    pub sizes: Vec<usize>,
    pub r: usize,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    pub targets: Vec<f64>,
    /// Minimum frequency separation in units of `1/n`; none when absent.
    pub separation: Option<f64>,
    /// Wall time per trial is the median over this many repetitions.
    pub repeats: usize,
    pub solvers: Vec<SolverKind>,
    pub config: SolverConfig,
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self {
            sizes: vec![2046],
            r: 150,
            m: 876,
            trials: 10,
            seed: 0,
            targets: (1..=7).map(|k| 10f64.powi(-k)).collect(),
            separation: Some(1.5),
            repeats: 3,
            solvers: vec![SolverKind::Shgd, SolverKind::Pgd],
            config: SolverConfig {
                step_policy: StepPolicy::Fixed { eta_prime: 0.75 },
                rel_change_tol: 0.0,
                max_iters: 3000,
                ..SolverConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    pub solver: SolverKind,
    pub target: f64,
    /// Trials that reached the target.
    pub reached: usize,
    pub trials: usize,
    /// Iteration-loop time to the target, over trials that reached it.
    pub mean_ms: f64,
    pub mean_iters: f64,
    /// `mean_ms(shgd) / mean_ms(pgd)` when every trial of both reached the
    /// target.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverCost {
    pub n: usize,
    pub solver: SolverKind,
    pub mean_init_ms: f64,
    /// Convolution passes per iteration (one per factor column per product).
    pub passes_per_iter: f64,
    pub fft_calls_per_iter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub spec: TimingSpec,
    pub rows: Vec<TimingRow>,
    pub costs: Vec<SolverCost>,
}

impl TimingResult {
    pub fn row(&self, n: usize, solver: SolverKind, target: f64) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.n == n && r.solver == solver && r.target == target)
    }

    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("n,solver,target,mean_ms,mean_iters,ratio,reached,trials\n");
        for r in &self.rows {
            let (ms, ratio) = if timing { (fmt_f(r.mean_ms), r.ratio.map(fmt_f).unwrap_or_default()) } else { Default::default() };
            writeln!(out, "{},{},{},{},{},{},{},{}", r.n, r.solver.name(), r.target, ms, fmt_f(r.mean_iters), ratio, r.reached, r.trials)
                .expect("write to string");
        }
        out
    }
}

/// One timed run: for each target, the iteration and loop time at which
/// the error first dropped below it.
struct TimedRun {
    hits: Vec<Option<(usize, f64)>>,
    init_ms: f64,
    iters: usize,
    passes: u64,
    ffts: u64,
}

fn timed_run(solver: SolverKind, t: &Trial, cfg: &SolverConfig, targets: &[f64]) -> Result<TimedRun> {
    let mut hits = vec![None; targets.len()];
    let floor = targets.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_norm = crate::linalg::norm2(&t.x);
    let mut observer = |v: &IterView<'_>| {
        let err = v.x.iter().zip(&t.x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / x_norm;
        for (h, &target) in hits.iter_mut().zip(targets) {
            if h.is_none() && err <= target {
                *h = Some((v.k, v.record.ms));
            }
        }
        if err <= floor {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    };
    let res = solver.recover_with(&t.observed, &t.mask, cfg, &mut observer)?;
    Ok(TimedRun { hits, init_ms: res.init_ms, iters: res.iters, passes: res.counters.conv_passes, ffts: res.counters.fft_calls })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Time-to-accuracy for each solver on matched trials. Runs serially so
/// that timings are not disturbed by other trials.
pub fn run_timing(spec: &TimingSpec) -> Result<TimingResult> {
    if spec.trials == 0 || spec.repeats == 0 || spec.sizes.is_empty() || spec.targets.is_empty() || spec.solvers.is_empty() {
        return Err(invalid("timing spec needs sizes, targets, solvers, trials and repeats"));
    }
    let cfg = SolverConfig { r: spec.r, ..spec.config.clone() };
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut costs = Vec::new();
    for &n in &spec.sizes {
        let mut per_solver = Vec::new();
        for &solver in &spec.solvers {
            // hits[target][trial] = (iters, median ms)
            let mut hits = vec![Vec::new(); spec.targets.len()];
            let (mut init, mut passes, mut ffts, mut iters) = (Vec::new(), 0u64, 0u64, 0usize);
            for trial in 0..spec.trials {
                let seed = derive_seed(spec.seed, &[n as u64, trial as u64]);
                let model = ModelOptions { min_sep: spec.separation.map(|s| s / n as f64), damping_range: None };
                let t = draw_trial(seed, n, spec.r, spec.m, &model, 0.0)?;
                let cfg = SolverConfig { seed, ..cfg.clone() };
                let runs = (0..spec.repeats).map(|_| timed_run(solver, &t, &cfg, &spec.targets)).collect::<Result<Vec<_>>>()?;
                init.push(median(runs.iter().map(|r| r.init_ms).collect()));
                passes += runs[0].passes;
                ffts += runs[0].ffts;
                iters += runs[0].iters;
                for (ti, slot) in hits.iter_mut().enumerate() {
                    if let Some((k, _)) = runs[0].hits[ti] {
                        let ms = median(runs.iter().map(|r| r.hits[ti].map_or(f64::INFINITY, |h| h.1)).collect());
                        slot.push((k as f64, ms));
                    }
                }
            }
            costs.push(SolverCost {
                n,
                solver,
                mean_init_ms: mean(init),
                passes_per_iter: passes as f64 / iters.max(1) as f64,
                fft_calls_per_iter: ffts as f64 / iters.max(1) as f64,
            });
            per_solver.push((solver, hits));
        }
        for (ti, &target) in spec.targets.iter().enumerate() {
            let complete = |s: SolverKind| per_solver.iter().find(|(k, _)| *k == s).map(|(_, h)| (h[ti].len() == spec.trials, mean(h[ti].iter().map(|x| x.1))));
            let ratio = match (complete(SolverKind::Shgd), complete(SolverKind::Pgd)) {
                (Some((true, a)), Some((true, b))) if b > 0.0 => Some(a / b),
                _ => None,
            };
            for (solver, hits) in &per_solver {
                let h = &hits[ti];
                rows.push(TimingRow {
                    n,
                    solver: *solver,
                    target,
                    reached: h.len(),
                    trials: spec.trials,
                    mean_ms: mean(h.iter().map(|x| x.1)),
                    mean_iters: mean(h.iter().map(|x| x.0)),
                    ratio,
                });
            }
        }
    }
    Ok(TimingResult { spec: spec.clone(), rows, costs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub n: usize,
    pub r: usize,
    pub sample_counts: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverKind,
    pub model: ModelOptions,
    pub config: SolverConfig,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            n: 127,
            r: 12,
            sample_counts: vec![60, 120],
            // 60 dB down to 0 dB in 10 dB steps.
            sigmas: (0..=6).map(|k| 10f64.powf(-3.0 + 0.5 * k as f64)).collect(),
            trials: 20,
            seed: 0,
            solver: SolverKind::Shgd,
            model: ModelOptions::default(),
            config: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma_e: f64,
    pub snr_db: f64,
    pub m: usize,
    /// Mean relative error `‖x̂ − x‖/‖x‖` over trials; failed solves count
    /// as error 1.
    pub mean_rmse: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseResult {
    pub spec: NoiseSpec,
    pub rows: Vec<NoiseRow>,
}

impl NoiseResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma_e,snr_db,m,mean_rmse\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.sigma_e, r.snr_db, r.m, r.mean_rmse).expect("write to string");
        }
        out
    }

    /// Least-squares slope of `log10(rmse)` against `log10(σ_e)` for one
    /// sample count, over rows with `σ_e > 0`.
    pub fn loglog_slope(&self, m: usize) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.m == m && r.sigma_e > 0.0 && r.mean_rmse > 0.0)
            .map(|r| (r.sigma_e.log10(), r.mean_rmse.log10()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let (mx, my) = (mean(pts.iter().map(|p| p.0)), mean(pts.iter().map(|p| p.1)));
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

/// `−20 log10 σ_e`; infinite for noiseless rows.
pub fn snr_db(sigma_e: f64) -> f64 {
    // Adding zero turns −0 into 0 for σ_e = 1.
    -20.0 * sigma_e.log10() + 0.0
}

pub fn run_noise(spec: &NoiseSpec) -> Result<NoiseResult> {
    if spec.trials == 0 || spec.sample_counts.is_empty() || spec.sigmas.is_empty() {
        return Err(invalid("noise spec needs sample counts, noise levels and trials"));
    }
    if spec.sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(invalid("noise levels must be nonnegative"));
    }
    let cfg = SolverConfig { r: spec.r, ..spec.config.clone() };
    cfg.validate()?;
    let jobs: Vec<(usize, usize, usize)> = (0..spec.sample_counts.len())
        .flat_map(|mi| (0..spec.sigmas.len()).flat_map(move |si| (0..spec.trials).map(move |t| (mi, si, t))))
        .collect();
    let mut done: Vec<((usize, usize, usize), Option<f64>)> = jobs
        .par_iter()
        .map(|&(mi, si, t)| {
            let (m, sigma) = (spec.sample_counts[mi], spec.sigmas[si]);
            // The noise level is not part of the seed: every level sees the
            // same models and masks, so curves differ only through noise.
            let seed = derive_seed(spec.seed, &[m as u64, t as u64]);
            let err = draw_trial(seed, spec.n, spec.r, m, &spec.model, sigma)
                .and_then(|tr| {
                    let res = spec.solver.recover(&tr.observed, &tr.mask, &SolverConfig { seed, ..cfg.clone() })?;
                    rel_error(&res.x_hat, &tr.x)
                })
                .ok()
                .filter(|e| e.is_finite());
            ((mi, si, t), err)
        })
        .collect();
    done.sort_by_key(|(k, _)| *k);
    let rows = done
        .chunks(spec.trials)
        .map(|chunk| {
            let (mi, si, _) = chunk[0].0;
            let sigma_e = spec.sigmas[si];
            NoiseRow {
                sigma_e,
                snr_db: snr_db(sigma_e),
                m: spec.sample_counts[mi],
                mean_rmse: mean(chunk.iter().map(|(_, e)| e.unwrap_or(1.0))),
                failures: chunk.iter().filter(|(_, e)| e.is_none()).count(),
            }
        })
        .collect();
    Ok(NoiseResult { spec: spec.clone(), rows })
}
