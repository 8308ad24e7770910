//! Nonparametric quasi-maximum-likelihood spectral estimation for Gaussian
//! locally stationary time series.
//!
//! Modules, bottom-up:
//!
//! * [`process`]: tvAR models and a seeded simulator.
//! * [`spectral`]: the pre-periodogram and the empirical spectral functional `F_n`.
//! * [`likelihood`]: local Whittle contrast and conditional Gaussian likelihood.
//! * [`isotonic`]: PAVA and greatest-convex-minorant isotonic regression.
//! * [`estimator`]: monotone-variance and Fourier-sieve tvAR fits.
//! * [`espec`]: Monte Carlo studies of the empirical spectral process.
//! * [`harness`]: reproducible rate and equivalence studies with CSV/JSON output.
//!
//! Sign convention: a tvAR(p) process satisfies
//! `X_t + Σ_j α_j(t/n) X_{t-j} = σ(t/n) ε_t`, i.e. the AR coefficients sit on
//! the left-hand side. Most AR toolkits use the opposite sign.

pub mod error;
pub mod espec;
pub mod estimator;
pub mod harness;
pub mod isotonic;
pub mod likelihood;
pub mod numeric;
pub mod process;
pub mod spectral;

pub use error::{Error, Result};
