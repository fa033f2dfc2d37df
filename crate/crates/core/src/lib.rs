//! Recovery of spectrally sparse signals from partial samples by low-rank
//! symmetric Hankel matrix completion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod error;
pub mod esprit;
pub mod experiment;
pub mod hankel;
pub mod io;
pub mod linalg;
pub mod lowrank;
pub mod metrics;
pub mod pgd;
pub mod rng;
pub mod shgd;
pub mod signal;
pub mod solver;

pub use error::{Error, Result};
pub use hankel::{HankelDims, HankelOperator, SkewDiagWeights};
pub use linalg::CMatrix;
pub use lowrank::{MatrixAction, TakagiFactor};
pub use signal::{ComplexSignal, SamplingMask, SpectralModel};
pub use pgd::{pgd_recover, FactorPair};
pub use shgd::recover;
pub use solver::{RecoveryResult, SolverConfig, StepPolicy, Termination};
