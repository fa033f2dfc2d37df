//! Symmetric Hankel projected gradient descent.
//!
//! The lifted matrix is parameterized as `Z Zᵀ` with a single `n_s × r`
//! factor; loss and gradient are evaluated matrix-free.

use std::ops::ControlFlow;
use std::time::Instant;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::hankel::HankelOperator;
use crate::linalg::{adjoint_mul, conj, matmul, max_row_norm, norm_sqr, CMatrix};
use crate::lowrank::spectral_init_with;
use crate::signal::SamplingMask;
use crate::solver::{project_rows, run, split_mask, IterView, ObsPart, Problem, RecoveryResult, SolverConfig};

pub use crate::solver::{fixed_step, StepPolicy, Termination};

/// Cached quantities of one loss evaluation.
pub struct ShgdEval {
    /// `G*(Z Zᵀ)`.
    pub gram: Vec<Complex64>,
    /// `Zᴴ Z`.
    pub zhz: CMatrix,
    pub loss: f64,
}

/// `‖Z Zᵀ‖_F² = tr((ZᴴZ)(ZᵀZ̄)) = Σ_ij (ZᴴZ)_ij²`, real because `ZᴴZ` is
/// Hermitian.
fn lifted_norm_sq(zhz: &CMatrix) -> f64 {
    zhz.iter().map(|a| (a * a).re).sum()
}

fn data_misfit(gram: &[Complex64], y: &[Complex64], mult: &[f64]) -> f64 {
    gram.iter().zip(y).zip(mult).filter(|(_, &m)| m > 0.0).map(|((g, y), m)| m * (g - y).norm_sqr()).sum()
}

/// `f(Z) = (1/4p)‖P_Ω(G*(ZZᵀ) − y)‖² + ¼‖(I − GG*)(ZZᵀ)‖_F²`, with
/// repeated samples counted by multiplicity.
pub fn evaluate(op: &HankelOperator, z: &CMatrix, y_obs: &[Complex64], mult: &[f64], p: f64) -> ShgdEval {
    let gram = op.gstar_gram(z);
    let zhz = adjoint_mul(z, z);
    let data = data_misfit(&gram, y_obs, mult);
    let penalty = (lifted_norm_sq(&zhz) - norm_sqr(&gram)).max(0.0);
    let loss = data / (4.0 * p) + penalty / 4.0;
    ShgdEval { gram, zhz, loss }
}

/// Loss with `p = m / n` taken from the mask.
pub fn loss(z: &CMatrix, y_obs: &[Complex64], mask: &SamplingMask) -> Result<f64> {
    let op = HankelOperator::square(y_obs.len())?;
    check_shapes(&op, z, y_obs, mask)?;
    Ok(evaluate(&op, z, y_obs, &mask.multiplicity(), mask.ratio()).loss)
}

/// `∇f(Z) = G(w) Z̄ + Z (ZᵀZ̄)` with `w = p⁻¹ P_Ω(G*(ZZᵀ) − y) − G*(ZZᵀ)`,
/// scaled so that the directional derivative is `Re⟨∇f, Δ⟩`.
pub fn gradient_from(op: &HankelOperator, z: &CMatrix, e: &ShgdEval, y_obs: &[Complex64], mult: &[f64], p: f64) -> CMatrix {
    let w: Vec<Complex64> = e
        .gram
        .iter()
        .zip(y_obs)
        .zip(mult)
        .map(|((g, y), &m)| if m > 0.0 { (g - y) * (m / p) - g } else { -g })
        .collect();
    let mut grad = op.g_apply_times_conj(&w, z);
    grad += matmul(z, &conj(&e.zhz));
    grad
}

pub fn grad(z: &CMatrix, y_obs: &[Complex64], mask: &SamplingMask) -> Result<CMatrix> {
    let op = HankelOperator::square(y_obs.len())?;
    check_shapes(&op, z, y_obs, mask)?;
    let (mult, p) = (mask.multiplicity(), mask.ratio());
    let e = evaluate(&op, z, y_obs, &mult, p);
    Ok(gradient_from(&op, z, &e, y_obs, &mult, p))
}

fn check_shapes(op: &HankelOperator, z: &CMatrix, y_obs: &[Complex64], mask: &SamplingMask) -> Result<()> {
    if z.nrows() != op.rows() {
        return Err(invalid(format!("factor has {} rows, lift needs {}", z.nrows(), op.rows())));
    }
    if mask.n() != y_obs.len() {
        return Err(invalid("mask length must match the observation length"));
    }
    Ok(())
}

/// Row clipping onto `C = {Z : ‖Z_(i,:)‖₂ ≤ radius}`.
pub fn project_c(z: &CMatrix, radius: f64) -> CMatrix {
    project_rows(z, radius)
}

/// `2 √(μ r σ / n)`.
pub fn projection_radius(mu: f64, r: usize, sigma: f64, n: usize) -> f64 {
    2.0 * (mu * r as f64 * sigma / n as f64).sqrt()
}

/// `n ‖U‖²_{2,∞} / (2r)`, clamped below at 1.
pub(crate) fn estimate_mu(u: &CMatrix, n: usize) -> f64 {
    let r = u.ncols() as f64;
    (n as f64 * max_row_norm(u).powi(2) / (2.0 * r)).max(1.0)
}

struct Shgd {
    op: HankelOperator,
    y: Vec<Complex64>,
    parts: Vec<ObsPart>,
    radius: Option<f64>,
    n_orig: usize,
}

impl Problem for Shgd {
    type State = CMatrix;
    type Eval = ShgdEval;

    fn evaluate(&self, z: &CMatrix, part: usize) -> ShgdEval {
        let pt = &self.parts[part];
        evaluate(&self.op, z, &self.y, &pt.mult, pt.p)
    }

    fn loss(&self, e: &ShgdEval) -> f64 {
        e.loss
    }

    fn gradient(&self, z: &CMatrix, e: &ShgdEval, part: usize) -> CMatrix {
        let pt = &self.parts[part];
        gradient_from(&self.op, z, e, &self.y, &pt.mult, pt.p)
    }

    fn grad_norm_sq(&self, g: &CMatrix) -> f64 {
        g.norm_squared()
    }

    fn descent_scale(&self) -> f64 {
        1.0
    }

    fn descend(&self, z: &CMatrix, g: &CMatrix, eta: f64) -> CMatrix {
        let next = z - g * Complex64::new(eta, 0.0);
        match self.radius {
            Some(radius) => project_rows(&next, radius),
            None => next,
        }
    }

    fn signal(&self, e: &ShgdEval) -> Vec<Complex64> {
        let mut x = self.op.apply_d_inv(&e.gram);
        x.truncate(self.n_orig);
        x
    }

    fn loop_started(&self) {
        self.op.reset_counters();
    }

    fn parts(&self) -> usize {
        self.parts.len()
    }
}

/// Recovers a signal from zero-filled observations on `mask`.
pub fn recover(observed: &[Complex64], mask: &SamplingMask, config: &SolverConfig) -> Result<RecoveryResult> {
    recover_with(observed, mask, config, &mut |_| ControlFlow::Continue(()))
}

/// [`recover`] with a per-iteration observer that may stop the run.
pub fn recover_with(
    observed: &[Complex64],
    mask: &SamplingMask,
    config: &SolverConfig,
    observer: &mut dyn FnMut(&IterView<'_>) -> ControlFlow<()>,
) -> Result<RecoveryResult> {
    config.validate()?;
    let n = observed.len();
    if n == 0 {
        return Err(invalid("observation is empty"));
    }
    if mask.n() != n {
        return Err(invalid(format!("mask length {} != observation length {n}", mask.n())));
    }
    let start = Instant::now();
    let n_pad = if n.is_multiple_of(2) { n + 1 } else { n };
    let mut x_pad = observed.to_vec();
    x_pad.resize(n_pad, Complex64::new(0.0, 0.0));
    let mask = mask.extended(n_pad)?;
    let op = HankelOperator::square(n_pad)?;
    if config.r > op.rows() {
        return Err(invalid(format!("rank {} exceeds the lift dimension {}", config.r, op.rows())));
    }
    let y = op.apply_d(&x_pad);

    let masks = if config.sample_splitting.enabled {
        split_mask(&mask, config.sample_splitting.k, config.seed)?
    } else {
        vec![mask]
    };
    let init = spectral_init_with(&op, &y, &masks[0], config.r, config.seed, &config.svd_options())?;
    let radius = config.projection.enabled.then(|| {
        let mu = config.projection.mu.unwrap_or_else(|| estimate_mu(&init.u0, n_pad));
        projection_radius(mu, config.r, init.sigma1 / (1.0 - config.eps0), n_pad)
    });
    let z0 = match radius {
        Some(radius) => project_rows(&init.z0, radius),
        None => init.z0,
    };
    let problem = Shgd { op, y, parts: masks.iter().map(ObsPart::from_mask).collect(), radius, n_orig: n };
    let init_ms = start.elapsed().as_secs_f64() * 1e3;
    let out = run(&problem, z0, init.sigma1, config, observer);
    Ok(RecoveryResult {
        x_hat: out.x,
        z_final: out.state,
        v_final: None,
        iters: out.history.len(),
        history: out.history,
        termination: out.termination,
        sigma1: init.sigma1,
        init_ms,
        counters: problem.op.counters(),
        evaluations: out.evaluations,
    })
}
