//! Hankel lift `H`, its adjoint, the skew-diagonal weighting `D`, and the
//! normalized lift `G = H D⁻¹` with `G*G = I`.
//!
//! Products with lifted matrices are evaluated matrix-free: `G*(L Rᴴ)` is a
//! sum of `r` linear convolutions and `G(v)·B` is `r` Hankel matrix-vector
//! products, each computed with one zero-padded FFT of length
//! `next_pow2(n)`. Dense lifts exist only as test oracles.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, ZERO};
use crate::signal::SamplingMask;

/// Largest lift dimension the dense oracles accept.
pub const DENSE_LIMIT: usize = 2048;

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn plans(len: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut p = planner().lock().unwrap_or_else(|e| e.into_inner());
    (p.plan_fft_forward(len), p.plan_fft_inverse(len))
}

/// Square lift dimensions, `n = 2 n_s − 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HankelDims {
    pub n: usize,
    pub n_s: usize,
}

impl HankelDims {
    pub fn new(n: usize) -> Result<Self> {
        if n.is_multiple_of(2) {
            return Err(Error::EvenLength(n));
        }
        Ok(Self { n, n_s: n.div_ceil(2) })
    }
}

/// Skew-diagonal lengths `w_a = #{(i, j) : i + j = a}` of an `n1 × n2` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewDiagWeights(Vec<f64>);

impl SkewDiagWeights {
    pub fn new(n1: usize, n2: usize) -> Self {
        let n = n1 + n2 - 1;
        let lo = n1.min(n2);
        let w = (0..n).map(|a| (a + 1).min(lo).min(n - a) as f64).collect();
        Self(w)
    }

    pub fn square(n_s: usize) -> Self {
        Self::new(n_s, n_s)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Snapshot of the instrumentation counters of a [`HankelOperator`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounters {
    /// One per column convolution or per column Hankel matvec.
    pub conv_passes: u64,
    pub fft_calls: u64,
}

/// Matrix-free lift operators for a fixed `n1 × n2` Hankel shape.
pub struct HankelOperator {
    n1: usize,
    n2: usize,
    n: usize,
    fft_len: usize,
    weights: Vec<f64>,
    sqrt_w: Vec<f64>,
    inv_sqrt_w: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    conv_passes: AtomicU64,
    fft_calls: AtomicU64,
}

impl std::fmt::Debug for HankelOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HankelOperator")
            .field("n1", &self.n1)
            .field("n2", &self.n2)
            .field("fft_len", &self.fft_len)
            .finish_non_exhaustive()
    }
}

impl Clone for HankelOperator {
    fn clone(&self) -> Self {
        Self {
            n1: self.n1,
            n2: self.n2,
            n: self.n,
            fft_len: self.fft_len,
            weights: self.weights.clone(),
            sqrt_w: self.sqrt_w.clone(),
            inv_sqrt_w: self.inv_sqrt_w.clone(),
            fwd: Arc::clone(&self.fwd),
            inv: Arc::clone(&self.inv),
            conv_passes: AtomicU64::new(0),
            fft_calls: AtomicU64::new(0),
        }
    }
}

impl HankelOperator {
    /// Square `n_s × n_s` lift for odd `n`.
    pub fn square(n: usize) -> Result<Self> {
        let dims = HankelDims::new(n)?;
        Ok(Self::rectangular(dims.n_s, dims.n_s))
    }

    /// `n1 × n2` lift of a length `n1 + n2 − 1` signal.
    pub fn rectangular(n1: usize, n2: usize) -> Self {
        assert!(n1 >= 1 && n2 >= 1, "lift dimensions must be positive");
        let n = n1 + n2 - 1;
        let weights = SkewDiagWeights::new(n1, n2).0;
        let fft_len = n.next_power_of_two();
        let (fwd, inv) = plans(fft_len);
        let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let inv_sqrt_w = sqrt_w.iter().map(|s| 1.0 / s).collect();
        Self {
            n1,
            n2,
            n,
            fft_len,
            weights,
            sqrt_w,
            inv_sqrt_w,
            fwd,
            inv,
            conv_passes: AtomicU64::new(0),
            fft_calls: AtomicU64::new(0),
        }
    }

    /// The most square lift of a length-`n` signal: `n2 = ⌊n/2⌋ + 1`,
    /// `n1 = n + 1 − n2` (63 × 64 for `n = 126`).
    pub fn balanced(n: usize) -> Self {
        let n2 = n / 2 + 1;
        Self::rectangular(n + 1 - n2, n2)
    }

    pub fn rows(&self) -> usize {
        self.n1
    }

    pub fn cols(&self) -> usize {
        self.n2
    }

    /// Signal length.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_square(&self) -> bool {
        self.n1 == self.n2
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn counters(&self) -> OpCounters {
        OpCounters {
            conv_passes: self.conv_passes.load(Ordering::Relaxed),
            fft_calls: self.fft_calls.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counters(&self) {
        self.conv_passes.store(0, Ordering::Relaxed);
        self.fft_calls.store(0, Ordering::Relaxed);
    }

    /// Overwrites one skew-diagonal weight. Used by the self-test to show
    /// that the property checks detect a broken operator.
    #[doc(hidden)]
    pub fn corrupt_weight(&mut self, a: usize, w: f64) {
        self.weights[a] = w;
        self.sqrt_w[a] = w.sqrt();
        self.inv_sqrt_w[a] = 1.0 / w.sqrt();
    }

    /// `[D x]_a = √w_a x_a`.
    pub fn apply_d(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n, "length mismatch");
        x.iter().zip(&self.sqrt_w).map(|(v, s)| v * s).collect()
    }

    /// `[D⁻¹ x]_a = x_a / √w_a`.
    pub fn apply_d_inv(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n, "length mismatch");
        x.iter().zip(&self.inv_sqrt_w).map(|(v, s)| v * s).collect()
    }

    fn check_dense(&self) -> Result<()> {
        let big = self.n1.max(self.n2);
        if big > DENSE_LIMIT {
            return Err(Error::DenseTooLarge(big));
        }
        Ok(())
    }

    /// Dense `H x`, `M[i, j] = x[i + j]`. Oracle only.
    pub fn lift_dense(&self, x: &[Complex64]) -> Result<CMatrix> {
        self.check_dense()?;
        assert_eq!(x.len(), self.n, "length mismatch");
        Ok(CMatrix::from_fn(self.n1, self.n2, |i, j| x[i + j]))
    }

    /// Dense `H* M`, sums along skew-diagonals. Oracle only.
    pub fn adjoint_dense(&self, m: &CMatrix) -> Result<Vec<Complex64>> {
        self.check_dense()?;
        assert_eq!(m.shape(), (self.n1, self.n2), "shape mismatch");
        let mut out = vec![ZERO; self.n];
        for j in 0..self.n2 {
            for i in 0..self.n1 {
                out[i + j] += m[(i, j)];
            }
        }
        Ok(out)
    }

    /// Dense `G v = H D⁻¹ v`.
    pub fn g_lift_dense(&self, v: &[Complex64]) -> Result<CMatrix> {
        self.lift_dense(&self.apply_d_inv(v))
    }

    /// Dense `G* M = D⁻¹ H* M`.
    pub fn g_adjoint_dense(&self, m: &CMatrix) -> Result<Vec<Complex64>> {
        Ok(self.apply_d_inv(&self.adjoint_dense(m)?))
    }

    fn forward(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.fft_calls.fetch_add(1, Ordering::Relaxed);
        self.fwd.process_with_scratch(buf, scratch);
    }

    fn inverse(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.fft_calls.fetch_add(1, Ordering::Relaxed);
        self.inv.process_with_scratch(buf, scratch);
    }

    fn scratch(&self) -> Vec<Complex64> {
        vec![ZERO; self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len())]
    }

    /// `G*(Z Zᵀ)` for a square lift: `(1/√w_a) Σ_l (z_l ∗ z_l)[a]`.
    pub fn gstar_gram(&self, z: &CMatrix) -> Vec<Complex64> {
        assert!(self.is_square(), "gstar_gram needs a square lift");
        assert_eq!(z.nrows(), self.n1, "factor rows must equal n_s");
        let l = self.fft_len;
        let mut scratch = self.scratch();
        let mut acc = vec![ZERO; l];
        let mut buf = vec![ZERO; l];
        for col in z.column_iter() {
            buf.fill(ZERO);
            buf[..self.n1].iter_mut().zip(col.iter()).for_each(|(b, c)| *b = *c);
            self.forward(&mut buf, &mut scratch);
            acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b * b);
        }
        self.conv_passes.fetch_add(z.ncols() as u64, Ordering::Relaxed);
        self.finish_adjoint(acc, &mut scratch)
    }

    /// `G*(L Rᴴ)`: `(1/√w_a) Σ_l (l_l ∗ conj(r_l))[a]`.
    pub fn gstar_outer(&self, left: &CMatrix, right: &CMatrix) -> Vec<Complex64> {
        assert_eq!(left.nrows(), self.n1, "left factor rows must equal n1");
        assert_eq!(right.nrows(), self.n2, "right factor rows must equal n2");
        assert_eq!(left.ncols(), right.ncols(), "factor ranks differ");
        let l = self.fft_len;
        let mut scratch = self.scratch();
        let mut acc = vec![ZERO; l];
        let mut a = vec![ZERO; l];
        let mut b = vec![ZERO; l];
        for (lc, rc) in left.column_iter().zip(right.column_iter()) {
            a.fill(ZERO);
            b.fill(ZERO);
            a[..self.n1].iter_mut().zip(lc.iter()).for_each(|(x, c)| *x = *c);
            b[..self.n2].iter_mut().zip(rc.iter()).for_each(|(x, c)| *x = c.conj());
            self.forward(&mut a, &mut scratch);
            self.forward(&mut b, &mut scratch);
            acc.iter_mut().zip(a.iter().zip(&b)).for_each(|(s, (x, y))| *s += x * y);
        }
        self.conv_passes.fetch_add(left.ncols() as u64, Ordering::Relaxed);
        self.finish_adjoint(acc, &mut scratch)
    }

    fn finish_adjoint(&self, mut acc: Vec<Complex64>, scratch: &mut [Complex64]) -> Vec<Complex64> {
        self.inverse(&mut acc, scratch);
        let scale = 1.0 / self.fft_len as f64;
        acc.truncate(self.n);
        acc.iter_mut().zip(&self.inv_sqrt_w).for_each(|(v, s)| *v *= scale * s);
        acc
    }

    /// `G(v) · B = H(D⁻¹ v) · B`, an `n1 × r` matrix.
    pub fn g_apply(&self, v: &[Complex64], b: &CMatrix) -> CMatrix {
        assert_eq!(v.len(), self.n, "vector length must equal n");
        assert_eq!(b.nrows(), self.n2, "right operand rows must equal n2");
        let u = self.apply_d_inv(v);
        self.hankel_times(&u, b, self.n1, self.n2)
    }

    /// `G(v) · Z̄`, the symmetric-factor product of the gradient.
    pub fn g_apply_times_conj(&self, v: &[Complex64], z: &CMatrix) -> CMatrix {
        self.g_apply(v, &crate::linalg::conj(z))
    }

    /// `G(v)ᴴ · A`, an `n2 × r` matrix.
    pub fn g_adjoint_apply(&self, v: &[Complex64], a: &CMatrix) -> CMatrix {
        assert_eq!(v.len(), self.n, "vector length must equal n");
        assert_eq!(a.nrows(), self.n1, "left operand rows must equal n1");
        let u: Vec<Complex64> = self.apply_d_inv(v).iter().map(|c| c.conj()).collect();
        self.hankel_times(&u, a, self.n2, self.n1)
    }

    /// `out[i, l] = Σ_j u[i + j] b[j, l]` for `i < rows`, `j < inner`, via
    /// convolution with the reversed column; the wrap-around of a
    /// length-`next_pow2(n)` circular convolution lands only on discarded
    /// indices `< inner − 1`.
    fn hankel_times(&self, u: &[Complex64], b: &CMatrix, rows: usize, inner: usize) -> CMatrix {
        let l = self.fft_len;
        let mut scratch = self.scratch();
        let mut u_hat = vec![ZERO; l];
        u_hat[..self.n].copy_from_slice(u);
        let mut out = CMatrix::zeros(rows, b.ncols());
        if b.ncols() == 0 {
            return out;
        }
        self.forward(&mut u_hat, &mut scratch);
        let scale = 1.0 / l as f64;
        let mut buf = vec![ZERO; l];
        for (k, col) in b.column_iter().enumerate() {
            buf.fill(ZERO);
            for (j, c) in col.iter().enumerate() {
                buf[inner - 1 - j] = *c;
            }
            self.forward(&mut buf, &mut scratch);
            buf.iter_mut().zip(&u_hat).for_each(|(x, y)| *x *= y);
            self.inverse(&mut buf, &mut scratch);
            for i in 0..rows {
                out[(i, k)] = buf[i + inner - 1] * scale;
            }
        }
        self.conv_passes.fetch_add(b.ncols() as u64, Ordering::Relaxed);
        out
    }
}

/// Dense square Hankel lift of an odd-length signal. Oracle only.
pub fn lift_dense(x: &[Complex64]) -> Result<CMatrix> {
    let dims = HankelDims::new(x.len())?;
    if dims.n_s > DENSE_LIMIT {
        return Err(Error::DenseTooLarge(dims.n_s));
    }
    Ok(CMatrix::from_fn(dims.n_s, dims.n_s, |i, j| x[i + j]))
}

/// Dense `H* M` for a square matrix: `out[a] = Σ_{i+j=a} M[i, j]`.
pub fn hankel_adjoint_dense(m: &CMatrix) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(crate::error::invalid("adjoint expects a square matrix"));
    }
    let n_s = m.nrows();
    if n_s > DENSE_LIMIT {
        return Err(Error::DenseTooLarge(n_s));
    }
    if n_s == 0 {
        return Ok(Vec::new());
    }
    let mut out = vec![ZERO; 2 * n_s - 1];
    for j in 0..n_s {
        for i in 0..n_s {
            out[i + j] += m[(i, j)];
        }
    }
    Ok(out)
}

/// `P_Ω x`: zero off the mask, entries scaled by their multiplicity.
pub fn p_omega(x: &[Complex64], mask: &SamplingMask) -> Vec<Complex64> {
    assert_eq!(x.len(), mask.n(), "length mismatch");
    let mut out = vec![ZERO; x.len()];
    for &i in mask.indices() {
        out[i] += x[i];
    }
    out
}
