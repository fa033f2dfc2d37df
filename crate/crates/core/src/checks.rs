//! Randomized property checks against dense oracles, shared by the
//! `selftest` command and the acceptance suite.
//!
//! Every check reports the worst relative discrepancy over its cases so a
//! failure says how far off it was, not only that it failed.

use std::fmt;

use num_complex::Complex64;
use rand::Rng;

use crate::hankel::{lift_dense, HankelOperator};
use crate::linalg::{conj, matmul, norm2, re_inner, singular_values, vec_inner, CMatrix};
use crate::lowrank::{takagi_truncated, LiftedAction, SvdOptions};
use crate::metrics::{dist_p_upper, lemma4_check, random_complex_orthogonal};
use crate::pgd::{pgd_grad, pgd_loss, FactorPair};
use crate::rng::{derive_seed, seeded, TrialRng};
use crate::shgd;
use crate::signal::{complex_gaussian, random_model, synthesize, uniform_mask, vandermonde, ModelOptions, SamplingMask};

pub const OPERATOR_TOL: f64 = 1e-10;
pub const TAKAGI_TOL: f64 = 1e-8;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const LOSS_TOL: f64 = 1e-10;
pub const GAP_TOL: f64 = 1e-8;
/// Relative slack for comparisons between two computed distances.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: usize,
    /// Worst observed discrepancy (relative unless stated in the name).
    pub worst: f64,
    pub tol: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {} ({} cases, worst {:.2e}, tol {:.0e})", self.name, self.cases, self.worst, self.tol)
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub cases: usize,
    /// Largest signal length used by the operator checks.
    pub max_n: usize,
    pub seed: u64,
    /// Perturb one skew-diagonal weight of every operator under test.
    pub corrupt_weights: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { cases: 100, max_n: 127, seed: 0, corrupt_weights: false }
    }
}

struct Worst(f64);

impl Worst {
    fn push(&mut self, v: f64) {
        // NaN must register as a failure.
        self.0 = if v.is_nan() || self.0.is_nan() { f64::NAN } else { self.0.max(v) };
    }

    fn value(&self) -> f64 {
        if self.0.is_nan() {
            f64::INFINITY
        } else {
            self.0
        }
    }
}

fn rng_for(opts: &SuiteOptions, tag: u64, case: usize) -> TrialRng {
    seeded(derive_seed(opts.seed, &[tag, case as u64]))
}

fn rand_vec(n: usize, rng: &mut TrialRng) -> Vec<Complex64> {
    (0..n).map(|_| complex_gaussian(rng)).collect()
}

fn rand_mat(rows: usize, cols: usize, rng: &mut TrialRng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

fn rel(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn vdiff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Random operator: square lift for odd lengths, balanced rectangular lift
/// otherwise.
fn random_operator(opts: &SuiteOptions, rng: &mut TrialRng) -> HankelOperator {
    let n = rng.random_range(1..=opts.max_n.max(1));
    let mut op = if n % 2 == 1 { HankelOperator::square(n).expect("odd length") } else { HankelOperator::balanced(n) };
    if opts.corrupt_weights {
        let w = op.weights()[0];
        op.corrupt_weight(0, 4.0 * w);
    }
    op
}

/// Adjoint identities, the isometry `G*G = I`, FFT products against dense
/// ones, the Vandermonde factorization of a lifted model and `H*H = D²`.
pub fn operator_checks(opts: &SuiteOptions) -> Vec<CheckOutcome> {
    let mut adjoint = Worst(0.0);
    let mut isometry = Worst(0.0);
    let mut fft = Worst(0.0);
    let mut vander = Worst(0.0);
    let mut hh = Worst(0.0);
    for case in 0..opts.cases {
        let mut rng = rng_for(opts, 1, case);
        let op = random_operator(opts, &mut rng);
        let (n, n1, n2) = (op.len(), op.rows(), op.cols());
        let r = rng.random_range(1..=4);
        let v = rand_vec(n, &mut rng);
        let m = rand_mat(n1, n2, &mut rng);

        // ⟨G v, M⟩ = ⟨v, G* M⟩ on the dense path.
        let gv = op.g_lift_dense(&v).expect("small lift");
        let gsm = op.g_adjoint_dense(&m).expect("small lift");
        let lhs: Complex64 = gv.iter().zip(m.iter()).map(|(a, b)| a.conj() * b).sum();
        let rhs = vec_inner(&v, &gsm);
        adjoint.push(rel((lhs - rhs).norm(), gv.norm() * m.norm()));
        // ⟨G(v) B, A⟩ = ⟨B, G(v)ᴴ A⟩ on the FFT path.
        let a = rand_mat(n1, r, &mut rng);
        let b = rand_mat(n2, r, &mut rng);
        let gb = op.g_apply(&v, &b);
        let gha = op.g_adjoint_apply(&v, &a);
        let lhs: Complex64 = gb.iter().zip(a.iter()).map(|(x, y)| x.conj() * y).sum();
        let rhs: Complex64 = b.iter().zip(gha.iter()).map(|(x, y)| x.conj() * y).sum();
        adjoint.push(rel((lhs - rhs).norm(), gb.norm() * a.norm()));

        let back = op.g_adjoint_dense(&gv).expect("small lift");
        isometry.push(rel(vdiff(&back, &v), norm2(&v)));

        fft.push(rel((&gb - &gv * &b).norm(), gv.norm() * b.norm()));
        fft.push(rel((&gha - gv.adjoint() * &a).norm(), gv.norm() * a.norm()));
        fft.push(rel((op.g_apply_times_conj(&v, &b) - &gv * conj(&b)).norm(), gv.norm() * b.norm()));
        let outer = op.gstar_outer(&a, &b);
        let want = op.g_adjoint_dense(&(&a * b.adjoint())).expect("small lift");
        fft.push(rel(vdiff(&outer, &want), a.norm() * b.norm()));
        if op.is_square() {
            let z = rand_mat(n1, r, &mut rng);
            let want = op.g_adjoint_dense(&(&z * z.transpose())).expect("small lift");
            fft.push(rel(vdiff(&op.gstar_gram(&z), &want), z.norm_squared()));
        }

        let x = rand_vec(n, &mut rng);
        let hx = op.lift_dense(&x).expect("small lift");
        let hhx = op.adjoint_dense(&hx).expect("small lift");
        hh.push(rel(vdiff(&hhx, &op.apply_d(&op.apply_d(&x))), norm2(&hhx)));

        let odd = 2 * rng.random_range(0..=(opts.max_n.max(1) - 1) / 2) + 1;
        let model = random_model(odd, r.min(odd.div_ceil(2)), &ModelOptions::default(), &mut rng).expect("valid model");
        let lifted = lift_dense(&synthesize(&model)).expect("odd length");
        let e = vandermonde(&model, odd.div_ceil(2));
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(model.amps()));
        vander.push(rel((&lifted - &e * d * e.transpose()).norm(), lifted.norm()));
    }
    let cases = opts.cases;
    vec![
        CheckOutcome { name: "adjoint identities <Gv,M> = <v,G*M>", cases, worst: adjoint.value(), tol: OPERATOR_TOL },
        CheckOutcome { name: "isometry G*G = I", cases, worst: isometry.value(), tol: OPERATOR_TOL },
        CheckOutcome { name: "FFT products match dense", cases, worst: fft.value(), tol: OPERATOR_TOL },
        CheckOutcome { name: "lifted model Hx = E diag(d) E^T", cases, worst: vander.value(), tol: OPERATOR_TOL },
        CheckOutcome { name: "H*H = D^2", cases, worst: hh.value(), tol: OPERATOR_TOL },
    ]
}

struct Observed {
    op: HankelOperator,
    y: Vec<Complex64>,
    mask: SamplingMask,
}

/// A lifted, partially observed random model in the weighted domain.
fn observed(n: usize, r: usize, rng: &mut TrialRng, square: bool) -> Observed {
    let op = if square { HankelOperator::square(n).expect("odd length") } else { HankelOperator::balanced(n) };
    let model = random_model(n, r, &ModelOptions::default(), rng).expect("valid model");
    let m = rng.random_range(r.max(1)..=n);
    let mask = uniform_mask(n, m, rng.random_bool(0.3), rng).expect("valid mask");
    let full = op.apply_d(&synthesize(&model));
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for &i in mask.indices() {
        y[i] = full[i];
    }
    Observed { op, y, mask }
}

fn dense_shgd_loss(s: &Observed, z: &CMatrix) -> f64 {
    let m = z * z.transpose();
    let gs = s.op.g_adjoint_dense(&m).expect("small lift");
    let mult = s.mask.multiplicity();
    let data: f64 = (0..s.y.len()).map(|a| mult[a] * (gs[a] - s.y[a]).norm_sqr()).sum();
    let off_hankel = (&m - s.op.g_lift_dense(&gs).expect("small lift")).norm_squared();
    data / (4.0 * s.mask.ratio()) + off_hankel / 4.0
}

fn dense_pgd_loss(s: &Observed, pair: &FactorPair, lambda: f64) -> f64 {
    let m = &pair.u * pair.v.adjoint();
    let gs = s.op.g_adjoint_dense(&m).expect("small lift");
    let mult = s.mask.multiplicity();
    let data: f64 = (0..s.y.len()).map(|a| mult[a] * (gs[a] - s.y[a]).norm_sqr()).sum();
    let off_hankel = (&m - s.op.g_lift_dense(&gs).expect("small lift")).norm_squared();
    let balance = (pair.u.adjoint() * &pair.u - pair.v.adjoint() * &pair.v).norm_squared();
    data / (4.0 * s.mask.ratio()) + off_hankel / 4.0 + lambda * balance
}

fn central_difference(f: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-6;
    (f(h) - f(-h)) / (2.0 * h)
}

/// Truncated Takagi against the Eckart–Young optimum, gradients against
/// central differences and FFT losses against dense evaluations.
pub fn factorization_checks(opts: &SuiteOptions, gradient_points: usize) -> Vec<CheckOutcome> {
    let lambda = 1.0 / 16.0;
    let mut takagi = Worst(0.0);
    for case in 0..opts.cases {
        let mut rng = rng_for(opts, 2, case);
        let n = 2 * rng.random_range(4..=opts.max_n.max(9) / 2) + 1;
        let n_s = n.div_ceil(2);
        let r = rng.random_range(1..=4.min(n_s - 1));
        let model = random_model(n, r, &ModelOptions::default(), &mut rng).expect("valid model");
        let op = HankelOperator::square(n).expect("odd length");
        let noise = 1e-3 * norm2(&synthesize(&model)) / (n as f64).sqrt();
        let x: Vec<Complex64> = synthesize(&model).iter().map(|v| v + complex_gaussian(&mut rng) * noise).collect();
        let dense = op.lift_dense(&x).expect("small lift");
        let sv = singular_values(&dense);
        let optimum = sv[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
        let action = LiftedAction::new(&op, op.apply_d(&x));
        match takagi_truncated(&action, r, case as u64, &SvdOptions::default()) {
            Ok(tk) => takagi.push(rel(((&dense - tk.reconstruct()).norm() - optimum).abs(), dense.norm())),
            Err(_) => takagi.push(f64::INFINITY),
        }
    }

    let mut shgd_grad = Worst(0.0);
    let mut pgd_grad_w = Worst(0.0);
    for case in 0..gradient_points {
        let mut rng = rng_for(opts, 3, case);
        let n = 2 * rng.random_range(2..=20) + 1;
        let r = rng.random_range(1..=3);
        let s = observed(n, r, &mut rng, true);
        let z = rand_mat(s.op.rows(), r, &mut rng);
        let d = rand_mat(s.op.rows(), r, &mut rng);
        let fd = central_difference(|t| shgd::loss(&(&z + &d * Complex64::new(t, 0.0)), &s.y, &s.mask).expect("shapes"));
        let an = re_inner(&shgd::grad(&z, &s.y, &s.mask).expect("shapes"), &d);
        shgd_grad.push(rel((fd - an).abs(), an.abs()));

        let nb = rng.random_range(6..=40);
        let s = observed(nb, r, &mut rng, false);
        let pair = FactorPair { u: rand_mat(s.op.rows(), r, &mut rng), v: rand_mat(s.op.cols(), r, &mut rng) };
        let dir = FactorPair { u: rand_mat(s.op.rows(), r, &mut rng), v: rand_mat(s.op.cols(), r, &mut rng) };
        let fd = central_difference(|t| {
            let t = Complex64::new(t, 0.0);
            let moved = FactorPair { u: &pair.u + &dir.u * t, v: &pair.v + &dir.v * t };
            pgd_loss(&moved, &s.y, &s.mask, lambda).expect("shapes")
        });
        let g = pgd_grad(&pair, &s.y, &s.mask, lambda).expect("shapes");
        let an = 0.5 * (re_inner(&g.u, &dir.u) + re_inner(&g.v, &dir.v));
        pgd_grad_w.push(rel((fd - an).abs(), an.abs()));
    }

    let mut loss = Worst(0.0);
    for case in 0..opts.cases {
        let mut rng = rng_for(opts, 4, case);
        let n = 2 * rng.random_range(1..=opts.max_n.max(3) / 2) + 1;
        let r = rng.random_range(1..=4.min(n.div_ceil(2)));
        let s = observed(n, r, &mut rng, true);
        let z = rand_mat(s.op.rows(), r, &mut rng);
        let want = dense_shgd_loss(&s, &z);
        loss.push(rel((shgd::loss(&z, &s.y, &s.mask).expect("shapes") - want).abs(), want));

        let nb = rng.random_range(2..=opts.max_n.max(2));
        let rb = r.min(nb / 2).max(1);
        let s = observed(nb, rb, &mut rng, false);
        let pair = FactorPair { u: rand_mat(s.op.rows(), rb, &mut rng), v: rand_mat(s.op.cols(), rb, &mut rng) };
        let want = dense_pgd_loss(&s, &pair, lambda);
        loss.push(rel((pgd_loss(&pair, &s.y, &s.mask, lambda).expect("shapes") - want).abs(), want));
    }

    vec![
        CheckOutcome { name: "Takagi error equals truncated-SVD optimum", cases: opts.cases, worst: takagi.value(), tol: TAKAGI_TOL },
        CheckOutcome { name: "symmetric gradient vs central differences", cases: gradient_points, worst: shgd_grad.value(), tol: GRADIENT_TOL },
        CheckOutcome { name: "asymmetric gradient vs central differences", cases: gradient_points, worst: pgd_grad_w.value(), tol: GRADIENT_TOL },
        CheckOutcome { name: "FFT loss matches dense oracle", cases: opts.cases, worst: loss.value(), tol: LOSS_TOL },
    ]
}

/// Symmetric rank-`r` pair `(Z⋆, Z)`: independent draws for even cases,
/// perturbations of `Z⋆` at assorted scales for odd ones.
fn factor_pair(rng: &mut TrialRng, case: usize, n_s: usize, r: usize) -> (CMatrix, CMatrix) {
    let z_star = rand_mat(n_s, r, rng);
    let z = if case.is_multiple_of(2) {
        rand_mat(n_s, r, rng)
    } else {
        let scale = 10f64.powf(rng.random_range(-4.0..0.0)) * z_star.norm();
        let e = rand_mat(n_s, r, rng);
        let q = random_complex_orthogonal(r, 0.5, rng);
        matmul(&z_star, &q) + &e * Complex64::new(scale / e.norm(), 0.0)
    };
    (z_star, z)
}

/// Takagi factor of `Z Zᵀ`, the form in which the distance inequalities are
/// stated.
fn takagi_of(z: &CMatrix) -> CMatrix {
    let m = z * z.transpose();
    let (q, s) = crate::lowrank::dense_takagi(&m);
    let r = z.ncols();
    let mut out = q.columns(0, r).into_owned();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= Complex64::new(s[j].sqrt(), 0.0);
    }
    out
}

/// The distance-inequality chain, first-order stationarity of reported
/// alignments and feasibility against sampled complex orthogonal matrices.
pub fn theory_checks(opts: &SuiteOptions, n_s: usize, r: usize, q_samples: usize) -> Vec<CheckOutcome> {
    let mut chain_failures = 0usize;
    let mut gap = Worst(0.0);
    let mut feas = Worst(0.0);
    for case in 0..opts.cases {
        let mut rng = rng_for(opts, 5, case);
        let (zs_raw, z_raw) = factor_pair(&mut rng, case, n_s, r);
        let (z_star, z) = (takagi_of(&zs_raw), takagi_of(&z_raw));
        let m_star = &z_star * z_star.transpose();
        let m = &z * z.transpose();
        match lemma4_check(&z, &z_star, &m, &m_star) {
            Ok(rep) if rep.pass => {}
            _ => chain_failures += 1,
        }
        match dist_p_upper(&z, &z_star) {
            Ok(al) => {
                let scale = singular_values(&z_star)[0].powi(2);
                gap.push(al.first_order_gap / scale);
                let mut worst = 0.0f64;
                for _ in 0..q_samples {
                    let q = random_complex_orthogonal(r, rng.random_range(0.0..1.0), &mut rng);
                    let aligned = 2.0 * (&z - matmul(&z_star, &q)).norm_squared();
                    worst = worst.max((al.residual.powi(2) - aligned) / aligned.max(f64::MIN_POSITIVE));
                }
                feas.push(worst.max(0.0));
            }
            Err(_) => {
                gap.push(f64::INFINITY);
                feas.push(f64::INFINITY);
            }
        }
    }
    vec![
        CheckOutcome { name: "distance inequality chain (violations)", cases: opts.cases, worst: chain_failures as f64, tol: 0.0 },
        CheckOutcome { name: "alignment first-order gap / ||Z*||^2", cases: opts.cases, worst: gap.value(), tol: GAP_TOL },
        CheckOutcome { name: "alignment beats sampled complex orthogonal Q", cases: opts.cases * q_samples, worst: feas.value(), tol: FEASIBILITY_SLACK },
    ]
}

/// Every check at its default size: operators, factorizations (20
/// gradient points) and the theory suite on `n_s = 20`, `r = 3` with 100
/// sampled `Q` per instance.
pub fn full_suite(opts: &SuiteOptions) -> Vec<CheckOutcome> {
    let mut all = operator_checks(opts);
    all.extend(factorization_checks(opts, 20));
    all.extend(theory_checks(opts, 20, 3, 100));
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        let opts = SuiteOptions { cases: 10, max_n: 41, ..Default::default() };
        let mut all = operator_checks(&opts);
        all.extend(factorization_checks(&opts, 5));
        all.extend(theory_checks(&opts, 20, 3, 20));
        for c in &all {
            eprintln!("{c}");
        }
        assert!(all.iter().all(CheckOutcome::passed));
    }

    #[test]
    fn corrupted_weights_are_detected() {
        let opts = SuiteOptions { cases: 5, max_n: 41, corrupt_weights: true, ..Default::default() };
        let out = operator_checks(&opts);
        let failed: Vec<_> = out.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
        assert!(failed.iter().any(|n| n.starts_with("isometry")), "{failed:?}");
        assert!(failed.iter().any(|n| n.starts_with("H*H")), "{failed:?}");
    }
}
