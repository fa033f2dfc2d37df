//! Frequency, damping and amplitude extraction from a completed signal by
//! ESPRIT on the Hankel lift.

use std::f64::consts::TAU;

use nalgebra::Schur;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hankel::HankelOperator;
use crate::linalg::CMatrix;
use crate::lowrank::{trunc_svd, LiftedAction, SvdOptions, RANK_DEFICIENCY_RATIO};

/// Estimated modes, sorted by frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub freqs: Vec<f64>,
    pub dampings: Vec<f64>,
    pub amps: Vec<Complex64>,
}

impl ModeEstimate {
    pub fn r(&self) -> usize {
        self.freqs.len()
    }

    /// `Σ_k d_k exp((i2πf_k − τ_k) t)` for `t < n`.
    pub fn synthesize(&self, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|t| {
                (0..self.r())
                    .map(|k| self.amps[k] * (Complex64::new(-self.dampings[k], TAU * self.freqs[k]) * t as f64).exp())
                    .sum()
            })
            .collect()
    }
}

pub fn esprit(x: &[Complex64], r: usize) -> Result<ModeEstimate> {
    let n = x.len();
    if r == 0 || n < 2 * r + 1 {
        return Err(invalid(format!("need n >= 2r + 1 (n = {n}, r = {r})")));
    }
    let op = HankelOperator::balanced(n);
    // G(D x) = H x.
    let action = LiftedAction::new(&op, op.apply_d(x));
    let svd = trunc_svd(&action, r, 0x5EED, &SvdOptions::default())?;
    let ratio = if svd.sigma[0] > 0.0 { svd.sigma[r - 1] / svd.sigma[0] } else { 0.0 };
    if !(ratio > RANK_DEFICIENCY_RATIO) {
        return Err(Error::RankDeficient { r, ratio });
    }
    let rows = svd.u.nrows();
    let up = svd.u.rows(0, rows - 1).clone_owned();
    let down = svd.u.rows(1, rows - 1).clone_owned();
    let phi = up.svd(true, true).solve(&down, 1e-14).map_err(|e| invalid(e.to_string()))?;
    let tri = Schur::new(phi).unpack().1;
    let poles: Vec<Complex64> = (0..r).map(|i| tri[(i, i)]).collect();

    let vander = CMatrix::from_fn(n, r, |t, k| poles[k].powu(t as u32));
    let rhs = CMatrix::from_column_slice(n, 1, x);
    let amps = vander.svd(true, true).solve(&rhs, 1e-14).map_err(|e| invalid(e.to_string()))?;

    let mut modes: Vec<(f64, f64, Complex64)> = poles
        .iter()
        .zip(amps.iter())
        .map(|(p, a)| (p.arg().rem_euclid(TAU) / TAU % 1.0, -p.norm().ln(), *a))
        .collect();
    modes.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(ModeEstimate {
        freqs: modes.iter().map(|m| m.0).collect(),
        dampings: modes.iter().map(|m| m.1).collect(),
        amps: modes.iter().map(|m| m.2).collect(),
    })
}
