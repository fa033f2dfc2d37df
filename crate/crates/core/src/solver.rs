//! Configuration, results and the projected-gradient driver shared by the
//! symmetric solver and the asymmetric baseline.

use std::ops::ControlFlow;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hankel::OpCounters;
use crate::linalg::{norm2, CMatrix};
use crate::lowrank::SvdOptions;
use crate::rng::seeded;
use crate::signal::SamplingMask;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepPolicy {
    /// `η = η′ / σ₁(M⁰)`.
    Fixed { eta_prime: f64 },
    /// Armijo backtracking from `η₀ = eta0_scale / σ₁(M⁰)`, restarted
    /// every iteration.
    Backtracking { beta: f64, c_armijo: f64, eta0_scale: f64 },
}

impl StepPolicy {
    pub fn backtracking() -> Self {
        StepPolicy::Backtracking { beta: 0.5, c_armijo: 1e-4, eta0_scale: 1.0 }
    }
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self::backtracking()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Projection {
    pub enabled: bool,
    /// Incoherence level; estimated from the initial factor when absent.
    pub mu: Option<f64>,
}

impl Default for Projection {
    fn default() -> Self {
        Self { enabled: true, mu: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSplitting {
    pub enabled: bool,
    /// Number of iteration subsets; `Ω` is split into `k + 1` parts.
    pub k: usize,
}

impl Default for SampleSplitting {
    fn default() -> Self {
        Self { enabled: false, k: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub r: usize,
    pub max_iters: usize,
    pub rel_change_tol: f64,
    pub step_policy: StepPolicy,
    pub projection: Projection,
    pub sample_splitting: SampleSplitting,
    /// `σ = σ₁(M⁰)/(1 − ε₀)` sets the projection radius.
    pub eps0: f64,
    /// Weight of the balancing term in the asymmetric baseline.
    pub balance_weight: f64,
    /// Loss growth over its initial value that counts as divergence.
    pub divergence_factor: f64,
    pub max_halvings: usize,
    /// Residual tolerance of the initial truncated SVD.
    pub init_tol: f64,
    pub init_max_iters: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            r: 1,
            max_iters: 1000,
            rel_change_tol: 1e-7,
            step_policy: StepPolicy::default(),
            projection: Projection::default(),
            sample_splitting: SampleSplitting::default(),
            eps0: 0.1,
            balance_weight: 1.0 / 16.0,
            divergence_factor: 1e6,
            max_halvings: 30,
            init_tol: 1e-8,
            init_max_iters: 50,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_rank(r: usize) -> Self {
        Self { r, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(invalid("rank must be at least 1"));
        }
        match self.step_policy {
            StepPolicy::Fixed { eta_prime } if !(eta_prime > 0.0) => {
                return Err(invalid("eta_prime must be positive"));
            }
            StepPolicy::Backtracking { beta, c_armijo, eta0_scale }
                if !(beta > 0.0 && beta < 1.0) || !(c_armijo > 0.0 && c_armijo < 1.0) || !(eta0_scale > 0.0) =>
            {
                return Err(invalid("backtracking needs 0 < beta < 1, 0 < c < 1, eta0_scale > 0"));
            }
            _ => {}
        }
        if matches!(self.projection.mu, Some(mu) if !(mu > 0.0)) {
            return Err(invalid("mu must be positive"));
        }
        if !(self.eps0 >= 0.0 && self.eps0 < 1.0) {
            return Err(invalid("eps0 must lie in [0, 1)"));
        }
        if self.sample_splitting.enabled && self.sample_splitting.k == 0 {
            return Err(invalid("sample splitting needs k >= 1"));
        }
        if !(self.rel_change_tol >= 0.0) {
            return Err(invalid("rel_change_tol must be nonnegative"));
        }
        Ok(())
    }

    pub(crate) fn svd_options(&self) -> SvdOptions {
        SvdOptions { tol: self.init_tol, max_iters: self.init_max_iters, best_effort: true, ..SvdOptions::default() }
    }
}

/// `η = η′ / σ₁(M⁰)`.
pub fn fixed_step(sigma1_m0: f64, eta_prime: f64) -> f64 {
    assert!(sigma1_m0 > 0.0, "sigma1 must be positive");
    eta_prime / sigma1_m0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    #[serde(rename = "tol_reached")]
    ToleranceReached,
    MaxIters,
    Diverged,
    /// Backtracking exhausted its halvings without an Armijo step.
    Stalled,
    /// The observer asked to stop.
    Interrupted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: usize,
    pub loss: f64,
    pub rel_change: f64,
    pub step: f64,
    /// Milliseconds since the first iteration started.
    pub ms: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub balancing_gap: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RecoveryResult {
    /// Recovered signal at the original length, unweighted domain.
    pub x_hat: Vec<Complex64>,
    /// Final factor (`Z`, or `Z_U` for the baseline).
    pub z_final: CMatrix,
    /// `Z_V` for the baseline.
    pub v_final: Option<CMatrix>,
    pub iters: usize,
    pub history: Vec<IterRecord>,
    pub termination: Termination,
    pub sigma1: f64,
    pub init_ms: f64,
    /// Operator work spent in the iteration loop.
    pub counters: OpCounters,
    /// Loss evaluations in the iteration loop.
    pub evaluations: usize,
}

impl RecoveryResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::ToleranceReached
    }
}

/// What the observer sees after every accepted iteration.
pub struct IterView<'a> {
    pub k: usize,
    pub x: &'a [Complex64],
    pub record: &'a IterRecord,
}

/// One block of observations: multiplicities over the padded length and
/// its sampling ratio.
#[derive(Clone, Debug)]
pub(crate) struct ObsPart {
    pub mult: Vec<f64>,
    pub p: f64,
}

impl ObsPart {
    pub fn from_mask(mask: &SamplingMask) -> Self {
        Self { mult: mask.multiplicity(), p: mask.ratio() }
    }
}

/// Splits the mask into `k + 1` parts of (almost) equal size at random,
/// the remainder dealt round-robin.
pub(crate) fn split_mask(mask: &SamplingMask, k: usize, seed: u64) -> Result<Vec<SamplingMask>> {
    let parts = k + 1;
    if mask.m() < parts {
        return Err(invalid(format!("cannot split {} samples into {parts} parts", mask.m())));
    }
    let mut idx = mask.indices().to_vec();
    idx.shuffle(&mut seeded(seed ^ 0x5A11_7000));
    let mut buckets = vec![Vec::new(); parts];
    for (i, a) in idx.into_iter().enumerate() {
        buckets[i % parts].push(a);
    }
    buckets.into_iter().map(|b| SamplingMask::new(mask.n(), b, mask.with_replacement())).collect()
}

/// Iteration `k` uses part `1 + k mod K`; part 0 seeds the initialization.
pub(crate) fn part_for_iter(k: usize, parts: usize) -> usize {
    if parts == 1 {
        0
    } else {
        1 + k % (parts - 1)
    }
}

/// Clips every row of `z` to Euclidean norm at most `radius`.
pub fn project_rows(z: &CMatrix, radius: f64) -> CMatrix {
    let mut out = z.clone();
    for i in 0..out.nrows() {
        let norm = out.row(i).norm();
        if norm > radius {
            let s = Complex64::new(radius / norm, 0.0);
            out.row_mut(i).iter_mut().for_each(|c| *c *= s);
        }
    }
    out
}

/// A smooth loss over factor iterates with cached evaluations.
pub(crate) trait Problem {
    type State: Clone;
    type Eval;

    fn evaluate(&self, s: &Self::State, part: usize) -> Self::Eval;
    fn loss(&self, e: &Self::Eval) -> f64;
    fn gradient(&self, s: &Self::State, e: &Self::Eval, part: usize) -> Self::State;
    fn grad_norm_sq(&self, g: &Self::State) -> f64;
    /// `Re⟨∇, Δ⟩ = descent_scale · Re⟨g, Δ⟩` for the returned gradient `g`.
    fn descent_scale(&self) -> f64;
    fn descend(&self, s: &Self::State, g: &Self::State, eta: f64) -> Self::State;
    /// Signal estimate at the original length.
    fn signal(&self, e: &Self::Eval) -> Vec<Complex64>;
    fn extra(&self, _e: &Self::Eval) -> Option<f64> {
        None
    }
    fn parts(&self) -> usize;
    /// Called once the starting point has been evaluated.
    fn loop_started(&self) {}
}

pub(crate) struct LoopOutcome<S> {
    pub state: S,
    pub x: Vec<Complex64>,
    pub history: Vec<IterRecord>,
    pub termination: Termination,
    pub evaluations: usize,
}

pub(crate) fn run<P: Problem>(
    problem: &P,
    init: P::State,
    sigma1: f64,
    config: &SolverConfig,
    observer: &mut dyn FnMut(&IterView<'_>) -> ControlFlow<()>,
) -> LoopOutcome<P::State> {
    let start = Instant::now();
    let parts = problem.parts();
    let mut state = init;
    let mut eval = problem.evaluate(&state, part_for_iter(0, parts));
    let mut evaluations = 1;
    let loss0 = problem.loss(&eval);
    problem.loop_started();
    let mut x = problem.signal(&eval);
    let mut history = Vec::new();
    let limit = config.divergence_factor * loss0.max(f64::MIN_POSITIVE);
    let diverged = |loss: f64| !loss.is_finite() || loss > limit;
    let finish = |state, x, history, termination, evaluations| LoopOutcome { state, x, history, termination, evaluations };
    if diverged(loss0) {
        return finish(state, x, history, Termination::Diverged, evaluations);
    }

    for k in 0..config.max_iters {
        let part = part_for_iter(k, parts);
        let eval_k = if k == 0 || parts == 1 { None } else { Some(problem.evaluate(&state, part)) };
        if eval_k.is_some() {
            evaluations += 1;
        }
        let cur = eval_k.as_ref().unwrap_or(&eval);
        let loss = problem.loss(cur);
        let grad = problem.gradient(&state, cur, part);
        let (cand, cand_eval, eta) = match config.step_policy {
            StepPolicy::Fixed { eta_prime } => {
                let eta = fixed_step(sigma1, eta_prime);
                let cand = problem.descend(&state, &grad, eta);
                let ce = problem.evaluate(&cand, part);
                evaluations += 1;
                (cand, ce, eta)
            }
            StepPolicy::Backtracking { beta, c_armijo, eta0_scale } => {
                let decrease = problem.descent_scale() * problem.grad_norm_sq(&grad);
                let mut eta = eta0_scale / sigma1;
                let mut accepted = None;
                for _ in 0..=config.max_halvings {
                    let cand = problem.descend(&state, &grad, eta);
                    let ce = problem.evaluate(&cand, part);
                    evaluations += 1;
                    let l = problem.loss(&ce);
                    if l <= loss - c_armijo * eta * decrease {
                        accepted = Some((cand, ce));
                        break;
                    }
                    eta *= beta;
                }
                match accepted {
                    Some((cand, ce)) => (cand, ce, eta),
                    None => return finish(state, x, history, Termination::Stalled, evaluations),
                }
            }
        };
        let new_loss = problem.loss(&cand_eval);
        if diverged(new_loss) {
            return finish(state, x, history, Termination::Diverged, evaluations);
        }
        let x_new = problem.signal(&cand_eval);
        let denom = norm2(&x);
        let diff: f64 = x_new.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let rel_change = if denom > 0.0 { diff / denom } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
        let record = IterRecord {
            k: k + 1,
            loss: new_loss,
            rel_change,
            step: eta,
            ms: start.elapsed().as_secs_f64() * 1e3,
            balancing_gap: problem.extra(&cand_eval),
        };
        state = cand;
        eval = cand_eval;
        x = x_new;
        history.push(record);
        let view = IterView { k: k + 1, x: &x, record: history.last().expect("just pushed") };
        if observer(&view).is_break() {
            return finish(state, x, history, Termination::Interrupted, evaluations);
        }
        if rel_change <= config.rel_change_tol {
            return finish(state, x, history, Termination::ToleranceReached, evaluations);
        }
    }
    finish(state, x, history, Termination::MaxIters, evaluations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_step_cases() {
        assert_eq!(fixed_step(2.0, 0.75), 0.375);
        assert!((fixed_step(1.0, 1.0 / 54.0) - 1.0 / 54.0).abs() < 1e-16);
        assert_eq!(fixed_step(4.0, 0.75), fixed_step(2.0, 0.75) / 2.0);
    }

    #[test]
    fn projection_cases() {
        let z = CMatrix::from_row_slice(2, 2, &[Complex64::new(0.3, 0.0), Complex64::new(0.0, 0.4), Complex64::new(1.2, 0.0), Complex64::new(0.0, 1.6)]);
        // Rows of norm 0.5 and 2.0 against radius 1.
        let p = project_rows(&z, 1.0);
        assert_eq!(p.row(0), z.row(0));
        assert!((p.row(1).norm() - 1.0).abs() < 1e-15);
        assert!((p.row(1) * Complex64::new(2.0, 0.0) - z.row(1)).norm() < 1e-15);
        assert_eq!(project_rows(&p, 1.0), p);
        assert_eq!(project_rows(&z, 3.0), z);
    }

    #[test]
    fn split_parts_are_disjoint_and_balanced() {
        let mask = SamplingMask::new(50, (0..23).map(|i| 2 * i).collect(), false).unwrap();
        let parts = split_mask(&mask, 3, 9).unwrap();
        assert_eq!(parts.len(), 4);
        let sizes: Vec<usize> = parts.iter().map(|p| p.m()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = parts.iter().flat_map(|p| p.indices().to_vec()).collect();
        all.sort();
        assert_eq!(all, mask.indices());
        assert_eq!((0..5).map(|k| part_for_iter(k, 4)).collect::<Vec<_>>(), vec![1, 2, 3, 1, 2]);
        assert_eq!(part_for_iter(7, 1), 0);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::with_rank(2).validate().is_ok());
        assert!(SolverConfig::with_rank(0).validate().is_err());
        let bad = SolverConfig { step_policy: StepPolicy::Fixed { eta_prime: 0.0 }, ..SolverConfig::with_rank(1) };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { step_policy: StepPolicy::Backtracking { beta: 1.0, c_armijo: 0.1, eta0_scale: 1.0 }, ..SolverConfig::with_rank(1) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = SolverConfig { step_policy: StepPolicy::Fixed { eta_prime: 0.75 }, ..SolverConfig::with_rank(3) };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: SolverConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: SolverConfig = serde_json::from_str(r#"{"r": 4, "max_iters": 10}"#).unwrap();
        assert_eq!(partial.r, 4);
        assert_eq!(partial.rel_change_tol, 1e-7);
        assert_eq!(serde_json::to_string(&Termination::ToleranceReached).unwrap(), "\"tol_reached\"");
    }
}
