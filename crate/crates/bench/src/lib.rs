//! Shared inputs for the benchmarks: a random noiseless problem and
//! factors of matching shape for both solvers.

use hankel_scs::hankel::HankelOperator;
use hankel_scs::rng::seeded;
use hankel_scs::signal::{complex_gaussian, observe, random_model, synthesize, uniform_mask, ModelOptions};
use hankel_scs::{CMatrix, FactorPair, SamplingMask};
use num_complex::Complex64;

pub struct Fixture {
    pub n: usize,
    pub r: usize,
    pub observed: Vec<Complex64>,
    pub mask: SamplingMask,
    /// Square lift of length `n` (odd).
    pub sym: HankelOperator,
    pub z: CMatrix,
    pub y_sym: Vec<Complex64>,
    /// Balanced rectangular lift of length `n`.
    pub rect: HankelOperator,
    pub pair: FactorPair,
    pub y_rect: Vec<Complex64>,
    pub mult: Vec<f64>,
    pub p: f64,
}

impl Fixture {
    /// `n` must be odd so both lifts share one mask.
    pub fn new(n: usize, r: usize, m: usize, seed: u64) -> Self {
        assert!(n % 2 == 1, "fixture length must be odd");
        let mut rng = seeded(seed);
        let model = random_model(n, r, &ModelOptions::default(), &mut rng).expect("model");
        let mask = uniform_mask(n, m, false, &mut rng).expect("mask");
        let observed = observe(&synthesize(&model), &mask, 0.0, &mut rng).expect("observe").into_vec();
        let sym = HankelOperator::square(n).expect("odd length");
        let rect = HankelOperator::balanced(n);
        let mut gauss = |rows: usize| CMatrix::from_fn(rows, r, |_, _| complex_gaussian(&mut rng));
        let z = gauss(sym.rows());
        let pair = FactorPair { u: gauss(rect.rows()), v: gauss(rect.cols()) };
        Self {
            n,
            r,
            y_sym: sym.apply_d(&observed),
            y_rect: rect.apply_d(&observed),
            observed,
            mult: mask.multiplicity(),
            p: mask.ratio(),
            mask,
            sym,
            z,
            rect,
            pair,
        }
    }
}
