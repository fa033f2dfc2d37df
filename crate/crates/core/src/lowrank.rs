//! Truncated SVD by randomized subspace iteration, truncated Takagi
//! factorization of complex symmetric operators, and the spectral
//! initialization of the symmetric solver.

use nalgebra::{DVector, Schur};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::hankel::HankelOperator;
use crate::linalg::{adjoint_mul, conj, matmul, orthonormalize_fast, sorted_svd, CMatrix, ONE, ZERO};
use crate::rng::seeded;
use crate::signal::{complex_gaussian, SamplingMask};

/// A linear operator known only through block products.
pub trait MatrixAction: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `M X`.
    fn apply(&self, x: &CMatrix) -> CMatrix;
    /// `Mᴴ X`.
    fn apply_adjoint(&self, x: &CMatrix) -> CMatrix;
}

impl MatrixAction for CMatrix {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &CMatrix) -> CMatrix {
        matmul(self, x)
    }

    fn apply_adjoint(&self, x: &CMatrix) -> CMatrix {
        adjoint_mul(self, x)
    }
}

/// The lifted matrix `G(v)` of a fixed vector, applied matrix-free.
pub struct LiftedAction<'a> {
    op: &'a HankelOperator,
    v: Vec<Complex64>,
}

impl<'a> LiftedAction<'a> {
    pub fn new(op: &'a HankelOperator, v: Vec<Complex64>) -> Self {
        assert_eq!(v.len(), op.len(), "vector length must match the operator");
        Self { op, v }
    }
}

impl MatrixAction for LiftedAction<'_> {
    fn nrows(&self) -> usize {
        self.op.rows()
    }

    fn ncols(&self) -> usize {
        self.op.cols()
    }

    fn apply(&self, x: &CMatrix) -> CMatrix {
        self.op.g_apply(&self.v, x)
    }

    fn apply_adjoint(&self, x: &CMatrix) -> CMatrix {
        self.op.g_adjoint_apply(&self.v, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvdOptions {
    pub oversampling: usize,
    /// Minimum number of subspace iterations before the residual test.
    pub power_iters: usize,
    /// Largest allowed `‖M v_i − σ_i u_i‖ / σ_1` over the kept triplets.
    pub tol: f64,
    pub max_iters: usize,
    /// Return the last iterate instead of failing when `max_iters` runs out.
    pub best_effort: bool,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self { oversampling: 10, power_iters: 2, tol: 1e-10, max_iters: 300, best_effort: false }
    }
}

/// `M ≈ U diag(sigma) Vᴴ` with `r` triplets, sigma nonincreasing.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
    pub iters: usize,
}

impl TruncatedSvd {
    pub fn reconstruct(&self) -> CMatrix {
        let us = scale_columns(&self.u, &self.sigma);
        matmul(&us, &self.v.adjoint())
    }
}

pub(crate) fn scale_columns(a: &CMatrix, s: &[f64]) -> CMatrix {
    let mut out = a.clone();
    for (mut col, &x) in out.column_iter_mut().zip(s) {
        col *= Complex64::new(x, 0.0);
    }
    out
}

fn gaussian_block(rows: usize, cols: usize, seed: u64) -> CMatrix {
    let mut rng = seeded(seed);
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(&mut rng))
}

/// Rank-`r` truncated SVD of an operator by randomized subspace iteration
/// with Rayleigh–Ritz extraction.
pub fn trunc_svd(op: &dyn MatrixAction, r: usize, seed: u64, opts: &SvdOptions) -> Result<TruncatedSvd> {
    let (m, n) = (op.nrows(), op.ncols());
    if r == 0 || r > m.min(n) {
        return Err(invalid(format!("rank {r} must be in 1..={}", m.min(n))));
    }
    let k = (r + opts.oversampling).min(m.min(n));
    let mut y = op.apply(&gaussian_block(n, k, seed));
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iters.max(1) {
        let q = orthonormalize_fast(&y);
        // QᴴM = Wᴴ with W = MᴴQ = Q₂R₂, so QᴴM = R₂ᴴQ₂ᴴ.
        let w = op.apply_adjoint(&q);
        let q2 = orthonormalize_fast(&w);
        let r2 = adjoint_mul(&q2, &w);
        let (us, s, vs) = sorted_svd(&r2.adjoint());
        let u = matmul(&q, &us);
        let v = matmul(&q2, &vs);
        let sigma1 = s[0];
        if sigma1 == 0.0 {
            return Ok(TruncatedSvd { u: u.columns(0, r).into(), sigma: vec![0.0; r], v: v.columns(0, r).into(), iters: it });
        }
        y = op.apply(&v);
        residual = (0..r)
            .map(|i| (y.column(i) - u.column(i) * Complex64::new(s[i], 0.0)).norm())
            .fold(0.0, f64::max)
            / sigma1;
        let out_of_budget = opts.best_effort && it == opts.max_iters.max(1) && residual.is_finite();
        if (it >= opts.power_iters && residual <= opts.tol) || out_of_budget {
            return Ok(TruncatedSvd { u: u.columns(0, r).into(), sigma: s[..r].to_vec(), v: v.columns(0, r).into(), iters: it });
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::SvdNotConverged { iters: opts.max_iters, residual })
}

/// Truncated Takagi factorization `M ≈ U_hat diag(sigma) U_hatᵀ`.
#[derive(Clone, Debug)]
pub struct TakagiFactor {
    pub u_hat: CMatrix,
    pub sigma: Vec<f64>,
}

impl TakagiFactor {
    /// `Z = U_hat diag(sigma)^{1/2}`, so that `Z Zᵀ` reconstructs.
    pub fn factor(&self) -> CMatrix {
        let roots: Vec<f64> = self.sigma.iter().map(|s| s.sqrt()).collect();
        scale_columns(&self.u_hat, &roots)
    }

    pub fn reconstruct(&self) -> CMatrix {
        let us = scale_columns(&self.u_hat, &self.sigma);
        matmul(&us, &self.u_hat.transpose())
    }
}

/// Relative symmetry mismatch `|yᵀMx − xᵀMy| / (‖y‖‖Mx‖ + ‖x‖‖My‖)` on a
/// random probe pair.
pub fn symmetry_mismatch(op: &dyn MatrixAction, seed: u64) -> f64 {
    let n = op.ncols();
    let probes = gaussian_block(n, 2, seed ^ 0x5157_4d4d);
    let mp = op.apply(&probes);
    let (x, y) = (probes.column(0), probes.column(1));
    let (mx, my) = (mp.column(0), mp.column(1));
    let lhs: Complex64 = y.iter().zip(mx.iter()).map(|(a, b)| a * b).sum();
    let rhs: Complex64 = x.iter().zip(my.iter()).map(|(a, b)| a * b).sum();
    let scale = y.norm() * mx.norm() + x.norm() * my.norm();
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).norm() / scale
    }
}

const SYMMETRY_TOL: f64 = 1e-8;

/// Rank-`r` Takagi factorization of a complex symmetric operator.
///
/// A truncated SVD `UΣVᴴ` supplies the dominant subspace; the `r × r` core
/// `S = Uᴴ M Ū` is complex symmetric and is Takagi-factored densely: with
/// `S = AΣBᴴ`, `W = Aᴴ B̄` is symmetric unitary and commutes with `Σ`, so
/// its principal square root `R` gives `S = (AR) Σ (AR)ᵀ`.
pub fn takagi_truncated(op: &dyn MatrixAction, r: usize, seed: u64, opts: &SvdOptions) -> Result<TakagiFactor> {
    if op.nrows() != op.ncols() {
        return Err(invalid("Takagi factorization needs a square operator"));
    }
    let mismatch = symmetry_mismatch(op, seed);
    if !(mismatch <= SYMMETRY_TOL) {
        return Err(Error::NotSymmetric { mismatch });
    }
    let svd = trunc_svd(op, r, seed, opts)?;
    let mu_bar = op.apply(&conj(&svd.u));
    let core = adjoint_mul(&svd.u, &mu_bar);
    let core = (&core + core.transpose()) * Complex64::new(0.5, 0.0);
    let (q, sigma) = dense_takagi(&core);
    Ok(TakagiFactor { u_hat: matmul(&svd.u, &q), sigma })
}

/// Takagi factorization of a small dense complex symmetric matrix,
/// `S = Q diag(σ) Qᵀ` with `Q` unitary.
pub fn dense_takagi(s: &CMatrix) -> (CMatrix, Vec<f64>) {
    let r = s.nrows();
    let (a, sigma, b) = sorted_svd(s);
    let mut w = adjoint_mul(&a, &conj(&b));
    let tiny = 1e-13 * sigma.first().copied().unwrap_or(0.0);
    let zero: Vec<bool> = sigma.iter().map(|&x| x <= tiny).collect();
    for i in 0..r {
        for j in 0..r {
            if zero[i] || zero[j] {
                w[(i, j)] = if i == j { ONE } else { ZERO };
            }
        }
    }
    let w = (&w + w.transpose()) * Complex64::new(0.5, 0.0);
    let root = unitary_sqrt(&w);
    (matmul(&a, &root), sigma)
}

/// Principal square root of a unitary (hence normal) matrix via its
/// complex Schur form, which is diagonal up to rounding.
fn unitary_sqrt(w: &CMatrix) -> CMatrix {
    let r = w.nrows();
    if r == 0 {
        return w.clone();
    }
    let (t, tri) = Schur::new(w.clone()).unpack();
    let d = DVector::from_iterator(r, (0..r).map(|i| tri[(i, i)].sqrt()));
    let td = scale_columns_complex(&t, d.as_slice());
    matmul(&td, &t.adjoint())
}

fn scale_columns_complex(a: &CMatrix, s: &[Complex64]) -> CMatrix {
    let mut out = a.clone();
    for (mut col, &x) in out.column_iter_mut().zip(s) {
        col *= x;
    }
    out
}

/// Spectral initialization from weighted observations.
#[derive(Clone, Debug)]
pub struct SpectralInit {
    /// `Z̃⁰ = U⁰ (Σ⁰)^{1/2}`, before any projection.
    pub z0: CMatrix,
    /// `U⁰`, orthonormal columns.
    pub u0: CMatrix,
    pub sigma: Vec<f64>,
    pub sigma1: f64,
}

/// Ratio below which `σ_r(M⁰)/σ_1(M⁰)` counts as rank deficient.
pub const RANK_DEFICIENCY_RATIO: f64 = 1e-12;

/// Takagi-factors `M⁰ = T_r(p⁻¹ G P_Ω y)` with `p = m / n`.
///
/// `y_obs` lives in the weighted domain `y = D x` and has odd length.
pub fn spectral_init(y_obs: &[Complex64], mask: &SamplingMask, r: usize, seed: u64, opts: &SvdOptions) -> Result<SpectralInit> {
    let op = HankelOperator::square(y_obs.len())?;
    spectral_init_with(&op, y_obs, mask, r, seed, opts)
}

pub(crate) fn spectral_init_with(
    op: &HankelOperator,
    y_obs: &[Complex64],
    mask: &SamplingMask,
    r: usize,
    seed: u64,
    opts: &SvdOptions,
) -> Result<SpectralInit> {
    if mask.n() != y_obs.len() {
        return Err(invalid("mask length must match the observation length"));
    }
    let p = mask.ratio();
    let mut v = crate::hankel::p_omega(y_obs, mask);
    v.iter_mut().for_each(|c| *c /= p);
    let action = LiftedAction::new(op, v);
    let tk = takagi_truncated(&action, r, seed, opts)?;
    let sigma1 = tk.sigma[0];
    let ratio = if sigma1 > 0.0 { tk.sigma[r - 1] / sigma1 } else { 0.0 };
    if !(ratio > RANK_DEFICIENCY_RATIO) {
        return Err(Error::RankDeficient { r, ratio });
    }
    Ok(SpectralInit { z0: tk.factor(), u0: tk.u_hat, sigma: tk.sigma, sigma1 })
}
