//! Monte Carlo studies of the empirical spectral process.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::likelihood::SpectrumField;
use crate::numeric::{compensated_sum, mean_and_stderr, ols_slope, stream_rng};
use crate::process::{simulate_with_rng, TvARModel, DEFAULT_BURN_IN};
use crate::spectral::{
    build_un, functional_f, functional_fn, FnPath, FrequencyGrid, PrePeriodogram, TestFunction,
};

/// Minimum replication count of a tail study.
pub const MIN_TAIL_REPLICATIONS: usize = 1000;

/// Confidence level of the upper limit compared against the bounds.
pub const TAIL_CONFIDENCE: f64 = 0.99;

/// Resolution of the `u` integral in `F(φ)`.
pub const F_U_GRID: usize = 4096;

/// Simulation of `S = n^{-1/2} Σ_i λ_i (Z_i² - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailStudySpec {
    pub weights: Vec<f64>,
    pub replications: usize,
    pub eta: Vec<f64>,
    pub seed: u64,
}

impl TailStudySpec {
    /// `λ_i ≡ 1`.
    pub fn flat(n: usize, replications: usize, eta: Vec<f64>, seed: u64) -> Self {
        Self {
            weights: vec![1.0; n],
            replications,
            eta,
            seed,
        }
    }

    /// `λ_i = 1 + i/n`.
    pub fn ramp(n: usize, replications: usize, eta: Vec<f64>, seed: u64) -> Self {
        Self {
            weights: (1..=n).map(|i| 1.0 + i as f64 / n as f64).collect(),
            replications,
            eta,
            seed,
        }
    }

    /// `R² = (1/n) Σ λ_i²`.
    pub fn r_squared(&self) -> f64 {
        self.weights.iter().map(|l| l * l).sum::<f64>() / self.weights.len() as f64
    }

    /// `L = max λ_i`.
    pub fn l_max(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("tail study weights must be positive and finite"));
        }
        if self.replications < MIN_TAIL_REPLICATIONS {
            return Err(Error::invalid(format!(
                "tail study needs at least {MIN_TAIL_REPLICATIONS} replications"
            )));
        }
        if self.eta.is_empty()
            || self.eta[0] <= 0.0
            || self.eta.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid("eta grid must be positive and strictly increasing"));
        }
        Ok(())
    }

    /// `2 exp(-η² / (8 (R² + L η / √n)))`.
    pub fn bernstein_bound(&self, eta: f64) -> f64 {
        let n = self.weights.len() as f64;
        2.0 * (-eta * eta / (8.0 * (self.r_squared() + self.l_max() * eta / n.sqrt()))).exp()
    }

    /// `6 exp(-η / (16 R))`.
    pub fn exponential_bound(&self, eta: f64) -> f64 {
        6.0 * (-eta / (16.0 * self.r_squared().sqrt())).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub eta: f64,
    pub exceedances: usize,
    pub empirical: f64,
    pub upper_confidence: f64,
    pub bernstein_bound: f64,
    pub exponential_bound: f64,
}

impl TailRow {
    pub fn within_bounds(&self) -> bool {
        self.upper_confidence <= self.bernstein_bound && self.upper_confidence <= self.exponential_bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub rows: Vec<TailRow>,
    /// Slope of `log P̂(|S| ≥ η)` against `η` over the upper half of the grid,
    /// using points with a nonzero empirical tail.
    pub upper_half_slope: Option<f64>,
}

/// One-sided Clopper-Pearson upper limit for `k` successes in `r` trials.
pub fn clopper_pearson_upper(k: usize, r: usize, level: f64) -> Result<f64> {
    if k > r || r == 0 {
        return Err(Error::invalid("need 0 <= k <= r and r >= 1"));
    }
    if k == r {
        return Ok(1.0);
    }
    let beta = Beta::new((k + 1) as f64, (r - k) as f64)
        .map_err(|e| Error::invalid(format!("beta distribution: {e}")))?;
    Ok(beta.inverse_cdf(level))
}

pub fn chi2_tail_study(spec: &TailStudySpec) -> Result<TailReport> {
    spec.validate()?;
    let n = spec.weights.len();
    let scale = 1.0 / (n as f64).sqrt();
    let draws: Vec<f64> = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(spec.seed, r as u64 + 1);
            let s: f64 = spec
                .weights
                .iter()
                .map(|l| {
                    let z: f64 = rng.sample(StandardNormal);
                    l * (z * z - 1.0)
                })
                .sum();
            (s * scale).abs()
        })
        .collect();
    let total = spec.replications;
    let rows = spec
        .eta
        .iter()
        .map(|&eta| -> Result<TailRow> {
            let k = draws.iter().filter(|d| **d >= eta).count();
            Ok(TailRow {
                eta,
                exceedances: k,
                empirical: k as f64 / total as f64,
                upper_confidence: clopper_pearson_upper(k, total, TAIL_CONFIDENCE)?,
                bernstein_bound: spec.bernstein_bound(eta),
                exponential_bound: spec.exponential_bound(eta),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let half = &rows[rows.len() / 2..];
    let pts: Vec<(f64, f64)> = half
        .iter()
        .filter(|r| r.exceedances > 0)
        .map(|r| (r.eta, r.empirical.ln()))
        .collect();
    let upper_half_slope = if pts.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        Some(ols_slope(&x, &y))
    } else {
        None
    };
    Ok(TailReport {
        rows,
        upper_half_slope,
    })
}

/// How `F_n(φ)` is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// `E_n = √n (F_n - F)` with `F(φ) = ∫∫ φ f`.
    Analytic,
    /// `Ẽ_n = √n (F_n - mean F_n)`.
    ReplicationMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EspecSample {
    pub n: usize,
    pub centering: Centering,
    pub fn_values: Vec<f64>,
    pub center: f64,
    pub values: Vec<f64>,
}

/// `F(φ)` against the model's spectral density.
pub fn analytic_f(model: &TvARModel, phi: &TestFunction) -> f64 {
    let field = SpectrumField::from_model(model);
    functional_f(phi, &|u, l| field.eval(u, l), &FrequencyGrid::default(), F_U_GRID)
}

fn fn_path(phi: &TestFunction, n: usize) -> Result<FnPath> {
    if phi.has_closed_form_lags() {
        Ok(FnPath::Lag)
    } else {
        let m = (4 * n).next_power_of_two().max(1024);
        Ok(FnPath::Quadrature {
            grid: Some(FrequencyGrid::new(m)?),
        })
    }
}

/// `F_n(φ)` on `replications` independent paths; path `r` uses stream `r + 1` of `seed`.
pub fn simulate_fn(
    model: &TvARModel,
    phi: &TestFunction,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let path = fn_path(phi, n)?;
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64 + 1);
            let x = simulate_with_rng(model, n, DEFAULT_BURN_IN, &mut rng)?;
            let pp = PrePeriodogram::new(x.values())?;
            functional_fn(&pp, phi, &path)
        })
        .collect()
}

pub fn espec_sample(
    model: &TvARModel,
    phi: &TestFunction,
    n: usize,
    replications: usize,
    seed: u64,
    centering: Centering,
) -> Result<EspecSample> {
    if replications < 2 {
        return Err(Error::invalid("need at least two replications"));
    }
    let fn_values = simulate_fn(model, phi, n, replications, seed)?;
    let center = match centering {
        Centering::Analytic => analytic_f(model, phi),
        Centering::ReplicationMean => compensated_sum(fn_values.iter().copied()) / replications as f64,
    };
    let root_n = (n as f64).sqrt();
    let values = fn_values.iter().map(|v| root_n * (v - center)).collect();
    Ok(EspecSample {
        n,
        centering,
        fn_values,
        center,
        values,
    })
}

/// `2π ∫∫ φ_j(u,λ) [φ_k(u,λ) + φ_k(u,-λ)] f²(u,λ) dλ du`.
pub fn clt_covariance(
    phi_j: &TestFunction,
    phi_k: &TestFunction,
    f: &SpectrumField,
    grid: &FrequencyGrid,
    u_grid: usize,
) -> Result<f64> {
    if u_grid == 0 {
        return Err(Error::invalid("u grid must have at least one node"));
    }
    let uf = u_grid as f64;
    let parts: Vec<f64> = (0..u_grid)
        .into_par_iter()
        .map(|i| {
            let u = (i as f64 + 0.5) / uf;
            grid.nodes()
                .map(|l| {
                    let fv = f.eval(u, l);
                    phi_j.eval(u, l) * (phi_k.eval(u, l) + phi_k.eval(u, -l)) * fv * fv
                })
                .sum::<f64>()
        })
        .collect();
    Ok(2.0 * PI * compensated_sum(parts.iter().copied()) * grid.weight() / uf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub n: usize,
    pub mean_fn: f64,
    pub stderr: f64,
    pub f: f64,
    /// `√n |mean F_n - F|`.
    pub b_n: f64,
    /// `n |mean F_n - F|`.
    pub scaled: f64,
    pub scaled_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub rows: Vec<BiasRow>,
}

impl BiasReport {
    /// Last `n|bias|` is at most twice the first plus four combined standard errors.
    pub fn bounded(&self) -> bool {
        let (first, last) = (&self.rows[0], &self.rows[self.rows.len() - 1]);
        let se = (last.scaled_stderr.powi(2) + 4.0 * first.scaled_stderr.powi(2)).sqrt();
        last.scaled <= 2.0 * first.scaled + 4.0 * se
    }
}

pub fn bias_scaling_study(
    model: &TvARModel,
    phi: &TestFunction,
    n_list: &[usize],
    replications: usize,
    seed: u64,
) -> Result<BiasReport> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::invalid("n list must be nonempty and strictly increasing"));
    }
    if replications < 2 {
        return Err(Error::invalid("need at least two replications"));
    }
    let f = analytic_f(model, phi);
    let rows = n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| -> Result<BiasRow> {
            let vals = simulate_fn(model, phi, n, replications, seed.wrapping_add(i as u64))?;
            let (mean_fn, stderr) = mean_and_stderr(&vals);
            let nf = n as f64;
            let bias = (mean_fn - f).abs();
            Ok(BiasRow {
                n,
                mean_fn,
                stderr,
                f,
                b_n: nf.sqrt() * bias,
                scaled: nf * bias,
                scaled_stderr: nf * stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasReport { rows })
}

/// Analytic versus Monte Carlo variance of `E_n(φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub pair: String,
    pub analytic: f64,
    pub empirical: f64,
    pub stderr: f64,
}

impl CltRow {
    pub fn relative_error(&self) -> f64 {
        (self.empirical - self.analytic).abs() / self.analytic.abs()
    }
}

/// Compares the limiting variance of `E_n(φ)` with its sample variance over
/// `replications` paths of length `n`.
pub fn clt_variance_check(
    pair: &str,
    model: &TvARModel,
    phi: &TestFunction,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<CltRow> {
    let sample = espec_sample(model, phi, n, replications, seed, Centering::ReplicationMean)?;
    let r = replications as f64;
    let sq: Vec<f64> = sample.values.iter().map(|e| e * e).collect();
    let (mean_sq, se_sq) = mean_and_stderr(&sq);
    let field = SpectrumField::from_model(model);
    let analytic = clt_covariance(phi, phi, &field, &FrequencyGrid::default(), 512)?;
    Ok(CltRow {
        pair: pair.to_string(),
        analytic,
        empirical: mean_sq * r / (r - 1.0),
        stderr: se_sq,
    })
}

/// `(1/n) tr{U_n(φ/2π) Σ_n}` with `Σ_n[a,b] ≈ c((a+b)/2n, a-b)`. A cross-check
/// for small `n` only.
pub fn expected_fn_trace(model: &TvARModel, phi: &TestFunction, n: usize) -> Result<f64> {
    if n == 0 || n > 256 {
        return Err(Error::invalid("trace cross-check is limited to 1 <= n <= 256"));
    }
    let u = build_un(&phi.scaled(1.0 / (2.0 * PI)), n)?;
    let grid = FrequencyGrid::default();
    let mut acc = 0.0;
    for a in 1..=n {
        for b in 1..=n {
            let w = u[(b - 1, a - 1)].re;
            if w == 0.0 {
                continue;
            }
            let c = model.tv_covariance((a + b) as f64 / (2 * n) as f64, a as i64 - b as i64, &grid)?;
            acc += w * c;
        }
    }
    Ok(acc / n as f64)
}
