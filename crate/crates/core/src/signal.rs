//! Spectrally sparse signals, random ground-truth models, sampling masks and
//! noisy observations.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::CMatrix;

/// Maximum number of frequency draws spent on satisfying a separation bound.
pub const MAX_SEPARATION_ATTEMPTS: usize = 10_000;

/// Ground truth of a superposition of `r` damped complex sinusoids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    n: usize,
    freqs: Vec<f64>,
    dampings: Vec<f64>,
    amps: Vec<Complex64>,
}

impl SpectralModel {
    pub fn new(n: usize, freqs: Vec<f64>, dampings: Vec<f64>, amps: Vec<Complex64>) -> Result<Self> {
        let r = freqs.len();
        if r == 0 {
            return Err(invalid("model needs at least one sinusoid"));
        }
        if dampings.len() != r || amps.len() != r {
            return Err(invalid("freqs, dampings and amps must have equal length"));
        }
        if n == 0 || r > n.div_ceil(2) {
            return Err(invalid(format!("r = {r} exceeds floor((n+1)/2) for n = {n}")));
        }
        if let Some(f) = freqs.iter().find(|f| !(0.0..1.0).contains(*f)) {
            return Err(invalid(format!("frequency {f} outside [0, 1)")));
        }
        if let Some(t) = dampings.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(invalid(format!("damping {t} must be finite and nonnegative")));
        }
        if amps.iter().any(|d| d.norm() == 0.0 || !d.re.is_finite() || !d.im.is_finite()) {
            return Err(invalid("amplitudes must be finite and nonzero"));
        }
        for i in 0..r {
            for j in i + 1..r {
                if freqs[i] == freqs[j] {
                    return Err(invalid(format!("duplicate frequency {}", freqs[i])));
                }
            }
        }
        Ok(Self { n, freqs, dampings, amps })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.freqs.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn dampings(&self) -> &[f64] {
        &self.dampings
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    /// Poles `w_k = exp(i 2π f_k − τ_k)`.
    pub fn poles(&self) -> Vec<Complex64> {
        self.freqs
            .iter()
            .zip(&self.dampings)
            .map(|(&f, &tau)| Complex64::new(-tau, 2.0 * PI * f).exp())
            .collect()
    }

    /// Smallest pairwise wrap-around frequency distance (∞ for r = 1).
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.freqs.len() {
            for j in i + 1..self.freqs.len() {
                best = best.min(wrap_distance(self.freqs[i], self.freqs[j]));
            }
        }
        best
    }
}

/// `min(|a − b|, 1 − |a − b|)` for frequencies in `[0, 1)`.
pub fn wrap_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

/// Time-domain samples.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ComplexSignal(Vec<Complex64>);

impl ComplexSignal {
    pub fn new(data: Vec<Complex64>) -> Result<Self> {
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(invalid("signal contains NaN or infinite samples"));
        }
        Ok(Self(data))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.0
    }
}

impl Deref for ComplexSignal {
    type Target = [Complex64];
    fn deref(&self) -> &[Complex64] {
        &self.0
    }
}

impl DerefMut for ComplexSignal {
    fn deref_mut(&mut self) -> &mut [Complex64] {
        &mut self.0
    }
}

impl From<ComplexSignal> for Vec<Complex64> {
    fn from(s: ComplexSignal) -> Self {
        s.0
    }
}

/// Observed index set Ω, kept sorted.
///
/// With replacement, an index may appear several times; operators weight
/// such entries by their multiplicity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    n: usize,
    indices: Vec<usize>,
    with_replacement: bool,
}

impl SamplingMask {
    pub fn new(n: usize, mut indices: Vec<usize>, with_replacement: bool) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("sampling mask must contain at least one index"));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= n) {
            return Err(invalid(format!("mask index {i} out of range for n = {n}")));
        }
        indices.sort_unstable();
        if !with_replacement && indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate mask index without replacement"));
        }
        Ok(Self { n, indices, with_replacement })
    }

    /// Every index of `[0, n)`.
    pub fn full(n: usize) -> Result<Self> {
        Self::new(n, (0..n).collect(), false)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of samples `m`, counting repeats.
    pub fn m(&self) -> usize {
        self.indices.len()
    }

    /// Sampling ratio `p = m / n`.
    pub fn ratio(&self) -> f64 {
        self.m() as f64 / self.n as f64
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn with_replacement(&self) -> bool {
        self.with_replacement
    }

    /// Distinct indices in increasing order.
    pub fn unique(&self) -> Vec<usize> {
        let mut u = self.indices.clone();
        u.dedup();
        u
    }

    /// Per-position multiplicity, length `n`.
    pub fn multiplicity(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n];
        for &i in &self.indices {
            w[i] += 1.0;
        }
        w
    }

    /// Same indices over a longer ambient length (zero-padding).
    pub fn extended(&self, n: usize) -> Result<Self> {
        if n < self.n {
            return Err(invalid("cannot shrink a mask"));
        }
        Ok(Self { n, indices: self.indices.clone(), with_replacement: self.with_replacement })
    }
}

/// `x[t] = Σ_k d_k exp((i2πf_k − τ_k) t)`.
pub fn synthesize(model: &SpectralModel) -> ComplexSignal {
    let n = model.n();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..model.r() {
        let rate = Complex64::new(-model.dampings[k], 2.0 * PI * model.freqs[k]);
        for (t, o) in out.iter_mut().enumerate() {
            *o += model.amps[k] * (rate * t as f64).exp();
        }
    }
    ComplexSignal(out)
}

/// Options for [`random_model`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Minimum wrap-around distance between frequencies.
    pub min_sep: Option<f64>,
    /// Damping factors drawn uniformly from this interval; zero when absent.
    pub damping_range: Option<(f64, f64)>,
}

/// Draws a random model: frequencies uniform on `[0,1)`, amplitudes
/// `(1 + 10^{0.5 c}) e^{−iφ}` with `c ~ U[0,1)`, `φ ~ U[0,2π)`.
///
/// With a separation bound the frequencies are drawn one at a time and
/// each candidate too close to an accepted one is rejected.
pub fn random_model<R: Rng + ?Sized>(n: usize, r: usize, opts: &ModelOptions, rng: &mut R) -> Result<SpectralModel> {
    if r == 0 || n + 1 < 2 * r {
        return Err(invalid(format!("need n >= 2r - 1 (n = {n}, r = {r})")));
    }
    let freqs = match opts.min_sep {
        None => (0..r).map(|_| rng.random::<f64>()).collect(),
        Some(sep) => {
            if !(sep >= 0.0) || r as f64 * sep >= 1.0 {
                return Err(Error::SeparationInfeasible { r, min_sep: sep, attempts: 0 });
            }
            let mut freqs: Vec<f64> = Vec::with_capacity(r);
            let mut attempts = 0;
            while freqs.len() < r {
                if attempts == MAX_SEPARATION_ATTEMPTS {
                    return Err(Error::SeparationInfeasible { r, min_sep: sep, attempts });
                }
                attempts += 1;
                let f: f64 = rng.random();
                if freqs.iter().all(|&g| wrap_distance(f, g) >= sep) {
                    freqs.push(f);
                }
            }
            freqs
        }
    };
    let dampings = match opts.damping_range {
        None => vec![0.0; r],
        Some((lo, hi)) => {
            if !(lo >= 0.0 && hi >= lo) {
                return Err(invalid(format!("damping range [{lo}, {hi}] invalid")));
            }
            (0..r).map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect()
        }
    };
    let amps = (0..r)
        .map(|_| {
            let c: f64 = rng.random();
            let phi: f64 = rng.random::<f64>() * 2.0 * PI;
            (1.0 + 10f64.powf(0.5 * c)) * Complex64::new(0.0, -phi).exp()
        })
        .collect();
    SpectralModel::new(n, freqs, dampings, amps)
}

/// Uniformly random mask of `m` samples out of `n`.
pub fn uniform_mask<R: Rng + ?Sized>(n: usize, m: usize, with_replacement: bool, rng: &mut R) -> Result<SamplingMask> {
    if m == 0 {
        return Err(invalid("mask size m must be at least 1"));
    }
    let indices = if with_replacement {
        (0..m).map(|_| rng.random_range(0..n)).collect()
    } else {
        if m > n {
            return Err(invalid(format!("cannot draw m = {m} distinct indices from n = {n}")));
        }
        rand::seq::index::sample(rng, n, m).into_vec()
    };
    SamplingMask::new(n, indices, with_replacement)
}

/// Standard complex Gaussian: real and imaginary parts each `N(0, 1/2)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid sigma");
    Complex64::new(normal.sample(rng), normal.sample(rng))
}

/// `P_Ω(x + e)` zero-filled off the mask, with
/// `e = σ_e ‖P_Ω x‖₂ w / ‖w‖₂` and `w` standard complex Gaussian on Ω.
pub fn observe<R: Rng + ?Sized>(signal: &[Complex64], mask: &SamplingMask, sigma_e: f64, rng: &mut R) -> Result<ComplexSignal> {
    if signal.len() != mask.n() {
        return Err(invalid(format!("signal length {} != mask length {}", signal.len(), mask.n())));
    }
    if !(sigma_e >= 0.0) {
        return Err(invalid("noise level must be nonnegative"));
    }
    let support = mask.unique();
    let mut out = vec![Complex64::new(0.0, 0.0); signal.len()];
    for &i in &support {
        out[i] = signal[i];
    }
    if sigma_e > 0.0 {
        let w: Vec<Complex64> = support.iter().map(|_| complex_gaussian(rng)).collect();
        let w_norm = crate::linalg::norm2(&w);
        let x_norm = crate::linalg::norm2(&out);
        if w_norm > 0.0 {
            let scale = sigma_e * x_norm / w_norm;
            for (&i, wi) in support.iter().zip(&w) {
                out[i] += wi * scale;
            }
        }
    }
    ComplexSignal::new(out)
}

/// Vandermonde matrix `E[t, k] = w_k^t`, `n_s × r`.
pub fn vandermonde(model: &SpectralModel, n_s: usize) -> CMatrix {
    let rates: Vec<Complex64> = model
        .freqs
        .iter()
        .zip(&model.dampings)
        .map(|(&f, &tau)| Complex64::new(-tau, 2.0 * PI * f))
        .collect();
    CMatrix::from_fn(n_s, model.r(), |t, k| (rates[k] * t as f64).exp())
}
