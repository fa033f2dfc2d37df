//! JSON file formats: observed signals, ground-truth models and recovery
//! results.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::signal::{ComplexSignal, SamplingMask, SpectralModel};
use crate::solver::{IterRecord, RecoveryResult, Termination};

fn pairs(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

fn unpairs(v: &[[f64; 2]]) -> Vec<Complex64> {
    v.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Observed signal: `samples` has length `n` and is zero off the mask.
/// Repeated entries in `observed` mean sampling with replacement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalFile {
    pub n: usize,
    pub observed: Vec<usize>,
    pub samples: Vec<[f64; 2]>,
}

impl SignalFile {
    pub fn new(observed: &[Complex64], mask: &SamplingMask) -> Result<Self> {
        if observed.len() != mask.n() {
            return Err(invalid(format!("signal length {} != mask length {}", observed.len(), mask.n())));
        }
        Ok(Self { n: mask.n(), observed: mask.indices().to_vec(), samples: pairs(observed) })
    }

    /// Validates the document and returns the zero-filled signal and mask.
    pub fn decode(&self) -> Result<(ComplexSignal, SamplingMask)> {
        if self.samples.len() != self.n {
            return Err(invalid(format!("expected {} samples, found {}", self.n, self.samples.len())));
        }
        let mut sorted = self.observed.clone();
        sorted.sort_unstable();
        let repeats = sorted.windows(2).any(|w| w[0] == w[1]);
        let mask = SamplingMask::new(self.n, sorted, repeats)?;
        let mut x = unpairs(&self.samples);
        let mut on = vec![false; self.n];
        for &i in mask.indices() {
            on[i] = true;
        }
        for (v, keep) in x.iter_mut().zip(on) {
            if !keep {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        Ok((ComplexSignal::new(x)?, mask))
    }
}

/// Ground-truth model with split real and imaginary amplitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub r: usize,
    pub freqs: Vec<f64>,
    pub dampings: Vec<f64>,
    pub amps_re: Vec<f64>,
    pub amps_im: Vec<f64>,
}

impl From<&SpectralModel> for ModelFile {
    fn from(m: &SpectralModel) -> Self {
        Self {
            n: m.n(),
            r: m.r(),
            freqs: m.freqs().to_vec(),
            dampings: m.dampings().to_vec(),
            amps_re: m.amps().iter().map(|a| a.re).collect(),
            amps_im: m.amps().iter().map(|a| a.im).collect(),
        }
    }
}

impl ModelFile {
    pub fn decode(&self) -> Result<SpectralModel> {
        if self.amps_re.len() != self.amps_im.len() || self.freqs.len() != self.r {
            return Err(invalid("model field lengths disagree with r"));
        }
        let amps = self.amps_re.iter().zip(&self.amps_im).map(|(&re, &im)| Complex64::new(re, im)).collect();
        SpectralModel::new(self.n, self.freqs.clone(), self.dampings.clone(), amps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub x_hat: Vec<[f64; 2]>,
    pub iters: usize,
    pub termination: Termination,
    pub history: Vec<IterRecord>,
}

impl From<&RecoveryResult> for ResultFile {
    fn from(r: &RecoveryResult) -> Self {
        Self { x_hat: pairs(&r.x_hat), iters: r.iters, termination: r.termination, history: r.history.clone() }
    }
}

impl ResultFile {
    pub fn x_hat(&self) -> Vec<Complex64> {
        unpairs(&self.x_hat)
    }
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
