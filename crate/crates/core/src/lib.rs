//! Weight-localized predictive recursion for semiparametric density regression.
//!
//! The conditional density of `y` given covariates `x` is modelled as a
//! kernel mixture `m(y|x) = ∫ φ(y|θ) f(θ|x) dθ` whose mixing density is
//! estimated at each target `x` by a predictive recursion that weights each
//! observation by its covariate affinity to the target.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fdr;
pub mod kernels;
pub mod localization;
pub mod measure;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod prmlx;
pub mod recursion;
pub mod sim;
pub mod sobol;

pub use data::{Dataset, Normalizer};
pub use error::{PrxError, Result};
pub use kernels::{KernelSpec, MixtureKernel};
pub use localization::LocalizationConfig;
pub use measure::{DominatingMeasure, MixingMeasure};
pub use recursion::{fit_permuted, run_prx, FitResult, RecursionState};
