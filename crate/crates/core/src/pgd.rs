//! Projected gradient descent on an asymmetric factorization
//! `H x ≈ Z_U Z_Vᴴ` of the rectangular lift, with a balancing regularizer.
//! Serves as the baseline for the symmetric solver.

use std::ops::ControlFlow;
use std::time::Instant;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::hankel::HankelOperator;
use crate::linalg::{adjoint_mul, matmul, max_row_norm, norm_sqr, CMatrix};
use crate::lowrank::{scale_columns, trunc_svd, LiftedAction, RANK_DEFICIENCY_RATIO};
use crate::shgd::projection_radius;
use crate::signal::SamplingMask;
use crate::solver::{project_rows, run, split_mask, IterView, ObsPart, Problem, RecoveryResult, SolverConfig};

/// `(Z_U, Z_V)` with `n1 + n2 − 1 = n`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPair {
    pub u: CMatrix,
    pub v: CMatrix,
}

pub struct PgdEval {
    /// `G*(Z_U Z_Vᴴ)`.
    pub gram: Vec<Complex64>,
    pub uhu: CMatrix,
    pub vhv: CMatrix,
    pub loss: f64,
}

impl PgdEval {
    /// `‖Z_UᴴZ_U − Z_VᴴZ_V‖_F`.
    pub fn balancing_gap(&self) -> f64 {
        (&self.uhu - &self.vhv).norm()
    }
}

/// `(1/4p)‖P_Ω(G*(UVᴴ) − y)‖² + ¼‖(I − GG*)(UVᴴ)‖_F² + λ‖UᴴU − VᴴV‖_F²`.
pub fn evaluate(op: &HankelOperator, pair: &FactorPair, y_obs: &[Complex64], mult: &[f64], p: f64, lambda: f64) -> PgdEval {
    let gram = op.gstar_outer(&pair.u, &pair.v);
    let uhu = adjoint_mul(&pair.u, &pair.u);
    let vhv = adjoint_mul(&pair.v, &pair.v);
    let data: f64 = gram.iter().zip(y_obs).zip(mult).filter(|(_, &m)| m > 0.0).map(|((g, y), m)| m * (g - y).norm_sqr()).sum();
    // ‖UVᴴ‖_F² = tr((UᴴU)(VᴴV)).
    let lifted: f64 = uhu.iter().zip(vhv.transpose().iter()).map(|(a, b)| (a * b).re).sum();
    let penalty = (lifted - norm_sqr(&gram)).max(0.0);
    let balance = (&uhu - &vhv).norm_squared();
    let loss = data / (4.0 * p) + penalty / 4.0 + lambda * balance;
    PgdEval { gram, uhu, vhv, loss }
}

pub fn pgd_loss(pair: &FactorPair, y_obs: &[Complex64], mask: &SamplingMask, lambda: f64) -> Result<f64> {
    let op = HankelOperator::balanced(y_obs.len());
    check_shapes(&op, pair, y_obs, mask)?;
    Ok(evaluate(&op, pair, y_obs, &mask.multiplicity(), mask.ratio(), lambda).loss)
}

/// Twice the gradient under `Re⟨·,·⟩`:
/// `∇_U = G(w)V + U(VᴴV) + 8λ U E`, `∇_V = G(w)ᴴU + V(UᴴU) − 8λ V E`
/// with `E = UᴴU − VᴴV` and `w = p⁻¹ P_Ω(G*(UVᴴ) − y) − G*(UVᴴ)`.
pub fn gradient_from(op: &HankelOperator, pair: &FactorPair, e: &PgdEval, y_obs: &[Complex64], mult: &[f64], p: f64, lambda: f64) -> FactorPair {
    let w: Vec<Complex64> = e
        .gram
        .iter()
        .zip(y_obs)
        .zip(mult)
        .map(|((g, y), &m)| if m > 0.0 { (g - y) * (m / p) - g } else { -g })
        .collect();
    let bal = (&e.uhu - &e.vhv) * Complex64::new(8.0 * lambda, 0.0);
    let mut gu = op.g_apply(&w, &pair.v);
    gu += matmul(&pair.u, &(&e.vhv + &bal));
    let mut gv = op.g_adjoint_apply(&w, &pair.u);
    gv += matmul(&pair.v, &(&e.uhu - &bal));
    FactorPair { u: gu, v: gv }
}

pub fn pgd_grad(pair: &FactorPair, y_obs: &[Complex64], mask: &SamplingMask, lambda: f64) -> Result<FactorPair> {
    let op = HankelOperator::balanced(y_obs.len());
    check_shapes(&op, pair, y_obs, mask)?;
    let (mult, p) = (mask.multiplicity(), mask.ratio());
    let e = evaluate(&op, pair, y_obs, &mult, p, lambda);
    Ok(gradient_from(&op, pair, &e, y_obs, &mult, p, lambda))
}

fn check_shapes(op: &HankelOperator, pair: &FactorPair, y_obs: &[Complex64], mask: &SamplingMask) -> Result<()> {
    if pair.u.nrows() != op.rows() || pair.v.nrows() != op.cols() || pair.u.ncols() != pair.v.ncols() {
        return Err(invalid(format!(
            "factor shapes {:?}, {:?} do not fit a {} x {} lift",
            pair.u.shape(),
            pair.v.shape(),
            op.rows(),
            op.cols()
        )));
    }
    if mask.n() != y_obs.len() {
        return Err(invalid("mask length must match the observation length"));
    }
    Ok(())
}

struct Pgd {
    op: HankelOperator,
    y: Vec<Complex64>,
    parts: Vec<ObsPart>,
    radius: Option<f64>,
    lambda: f64,
}

impl Problem for Pgd {
    type State = FactorPair;
    type Eval = PgdEval;

    fn evaluate(&self, s: &FactorPair, part: usize) -> PgdEval {
        let pt = &self.parts[part];
        evaluate(&self.op, s, &self.y, &pt.mult, pt.p, self.lambda)
    }

    fn loss(&self, e: &PgdEval) -> f64 {
        e.loss
    }

    fn gradient(&self, s: &FactorPair, e: &PgdEval, part: usize) -> FactorPair {
        let pt = &self.parts[part];
        gradient_from(&self.op, s, e, &self.y, &pt.mult, pt.p, self.lambda)
    }

    fn grad_norm_sq(&self, g: &FactorPair) -> f64 {
        g.u.norm_squared() + g.v.norm_squared()
    }

    fn descent_scale(&self) -> f64 {
        0.5
    }

    fn descend(&self, s: &FactorPair, g: &FactorPair, eta: f64) -> FactorPair {
        let eta = Complex64::new(eta, 0.0);
        let u = &s.u - &g.u * eta;
        let v = &s.v - &g.v * eta;
        match self.radius {
            Some(radius) => FactorPair { u: project_rows(&u, radius), v: project_rows(&v, radius) },
            None => FactorPair { u, v },
        }
    }

    fn signal(&self, e: &PgdEval) -> Vec<Complex64> {
        self.op.apply_d_inv(&e.gram)
    }

    fn extra(&self, e: &PgdEval) -> Option<f64> {
        Some(e.balancing_gap())
    }

    fn loop_started(&self) {
        self.op.reset_counters();
    }

    fn parts(&self) -> usize {
        self.parts.len()
    }
}

pub fn pgd_recover(observed: &[Complex64], mask: &SamplingMask, config: &SolverConfig) -> Result<RecoveryResult> {
    pgd_recover_with(observed, mask, config, &mut |_| ControlFlow::Continue(()))
}

pub fn pgd_recover_with(
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
    let op = HankelOperator::balanced(n);
    let r = config.r;
    if r > op.rows().min(op.cols()) {
        return Err(invalid(format!("rank {r} exceeds the lift dimension {}", op.rows().min(op.cols()))));
    }
    let y = op.apply_d(observed);
    let masks = if config.sample_splitting.enabled {
        split_mask(mask, config.sample_splitting.k, config.seed)?
    } else {
        vec![mask.clone()]
    };

    let p0 = masks[0].ratio();
    let mut v0 = crate::hankel::p_omega(&y, &masks[0]);
    v0.iter_mut().for_each(|c| *c /= p0);
    let svd = trunc_svd(&LiftedAction::new(&op, v0), r, config.seed, &config.svd_options())?;
    let sigma1 = svd.sigma[0];
    let ratio = if sigma1 > 0.0 { svd.sigma[r - 1] / sigma1 } else { 0.0 };
    if !(ratio > RANK_DEFICIENCY_RATIO) {
        return Err(crate::Error::RankDeficient { r, ratio });
    }
    let roots: Vec<f64> = svd.sigma.iter().map(|s| s.sqrt()).collect();
    let mut pair = FactorPair { u: scale_columns(&svd.u, &roots), v: scale_columns(&svd.v, &roots) };
    let radius = config.projection.enabled.then(|| {
        let mu = config.projection.mu.unwrap_or_else(|| {
            let row = max_row_norm(&svd.u).max(max_row_norm(&svd.v));
            (n as f64 * row * row / (2.0 * r as f64)).max(1.0)
        });
        projection_radius(mu, r, sigma1 / (1.0 - config.eps0), n)
    });
    if let Some(radius) = radius {
        pair = FactorPair { u: project_rows(&pair.u, radius), v: project_rows(&pair.v, radius) };
    }
    let problem = Pgd { op, y, parts: masks.iter().map(ObsPart::from_mask).collect(), radius, lambda: config.balance_weight };
    let init_ms = start.elapsed().as_secs_f64() * 1e3;
    let out = run(&problem, pair, sigma1, config, observer);
    Ok(RecoveryResult {
        x_hat: out.x,
        z_final: out.state.u,
        v_final: Some(out.state.v),
        iters: out.history.len(),
        history: out.history,
        termination: out.termination,
        sigma1,
        init_ms,
        counters: problem.op.counters(),
        evaluations: out.evaluations,
    })
}
