//! Sieve estimators for tvAR models: alternating WLS/PAVA for a monotone
//! variance curve, and a Fourier-coefficient tvAR(1) fit.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{conditional_likelihood, residual, SpectrumField};
use crate::process::{check_stability, Curve, MonotoneStepCurve, VALIDATION_GRID};
use crate::spectral::{FrequencyGrid, TestFunction};

pub use crate::isotonic::BoundsMode;

/// Default number of sieve knots, `⌈n^{1/3} (log n)^{-2/3}⌉`.
pub fn default_knots(n: usize) -> usize {
    let nf = n.max(2) as f64;
    (nf.cbrt() * nf.ln().powf(-2.0 / 3.0)).ceil().max(1.0) as usize
}

/// Default bound parameter, `(log n)^{-1/5}`, kept inside `(0, 1)`.
pub fn default_eps(n: usize) -> f64 {
    (n.max(3) as f64).ln().powf(-0.2).min(0.99)
}

/// Settings for [`fit_monotone_tvar`]. Unset `k_n` and `eps` follow the
/// defaults for the series length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub p: usize,
    #[serde(default)]
    pub k_n: Option<usize>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default)]
    pub stability_delta: f64,
    #[serde(default)]
    pub bounds: BoundsMode,
}

fn default_max_iter() -> usize {
    100
}

fn default_rel_tol() -> f64 {
    1e-8
}

impl FitConfig {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            k_n: None,
            eps: None,
            max_iter: default_max_iter(),
            rel_tol: default_rel_tol(),
            stability_delta: 0.0,
            bounds: BoundsMode::Clip,
        }
    }

    /// Config with `k_n` and `eps` fixed to the defaults for length `n`.
    pub fn for_length(n: usize, p: usize) -> Self {
        Self {
            k_n: Some(default_knots(n)),
            eps: Some(default_eps(n)),
            ..Self::new(p)
        }
    }

    /// `(k_n, eps)` for a series of length `n`, after validation.
    pub fn resolve(&self, n: usize) -> Result<(usize, f64)> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol must be positive"));
        }
        if !(self.stability_delta >= 0.0) {
            return Err(Error::invalid("stability_delta must be >= 0"));
        }
        let k = self.k_n.unwrap_or_else(|| default_knots(n));
        let eps = self.eps.unwrap_or_else(|| default_eps(n));
        if k == 0 {
            return Err(Error::invalid("k_n must be at least 1"));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::invalid(format!("eps must lie in (0, 1), got {eps}")));
        }
        Ok((k, eps))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha_hat: Vec<f64>,
    pub sigma2_hat: MonotoneStepCurve,
    /// `L̃_n` at the start and after each full iteration.
    pub objective_trace: Vec<f64>,
    /// `L̃_n` after every half-step (WLS, then PAVA).
    pub half_step_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Whether `alpha_hat` passes the stability check with the configured margin.
    pub stable: bool,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// Minimizer of `Σ_{t>p} (x_t + Σ_j α_j x_{t-j})² / σ²(t/n)`.
pub fn wls_ar(series: &[f64], sigma2: &Curve, p: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= p {
        return Err(Error::invalid(format!("WLS needs n > p, got n = {n}, p = {p}")));
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    let nf = n as f64;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for t in p..n {
        let s2 = sigma2.eval((t + 1) as f64 / nf);
        if !(s2 > 0.0 && s2.is_finite()) {
            return Err(Error::invalid(format!("variance must be positive, got {s2}")));
        }
        let w = 1.0 / s2;
        for i in 0..p {
            let xi = series[t - i - 1];
            rhs[i] -= w * series[t] * xi;
            for j in 0..=i {
                gram[(i, j)] += w * xi * series[t - j - 1];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
    }
    let scale = gram.diagonal().max();
    let chol = gram.clone().cholesky().ok_or_else(|| {
        Error::DegenerateData("lagged regressors have a singular weighted Gram matrix".into())
    })?;
    let min_pivot = chol.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
    if !(scale > 0.0) || min_pivot <= 1e-12 * scale {
        return Err(Error::DegenerateData(
            "lagged regressors have a near-singular weighted Gram matrix".into(),
        ));
    }
    Ok(chol.solve(&rhs).iter().copied().collect())
}

fn squared_residuals(series: &[f64], alpha: &[f64]) -> Vec<f64> {
    (alpha.len()..series.len())
        .map(|t| residual(series, alpha, t).powi(2))
        .collect()
}

/// Alternating minimization of `L̃_n` over `α ∈ R^p` and monotone step
/// variance curves on `k_n` knots.
pub fn fit_monotone_tvar(series: &[f64], cfg: &FitConfig) -> Result<FitResult> {
    let n = series.len();
    let p = cfg.p;
    if n <= p {
        return Err(Error::invalid(format!("fit needs n > p, got n = {n}, p = {p}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    let (k, eps) = cfg.resolve(n)?;
    let pava = |sq: &[f64]| crate::isotonic::sieve_pava(sq, n, p, k, eps, cfg.bounds);
    let objective = |alpha: &[f64], s: &MonotoneStepCurve| {
        conditional_likelihood(series, alpha, &Curve::MonotoneStep(s.clone()))
    };

    let mut alpha = vec![0.0; p];
    let mut sigma2 = pava(&squared_residuals(series, &alpha))?;
    let start = objective(&alpha, &sigma2)?;
    let mut trace = vec![start];
    let mut half = vec![start];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        alpha = wls_ar(series, &Curve::MonotoneStep(sigma2.clone()), p)?;
        half.push(objective(&alpha, &sigma2)?);
        sigma2 = pava(&squared_residuals(series, &alpha))?;
        let cur = objective(&alpha, &sigma2)?;
        half.push(cur);
        let prev = *trace.last().expect("trace is never empty");
        trace.push(cur);
        if (prev - cur) <= cfg.rel_tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let stable = check_stability(&alpha, cfg.stability_delta)?;
    Ok(FitResult {
        alpha_hat: alpha,
        sigma2_hat: sigma2,
        objective_trace: trace,
        half_step_trace: half,
        iterations,
        converged,
        stable,
    })
}

/// Result of [`fit_fourier_tvar1`].
#[derive(Debug, Clone, Serialize)]
pub struct FourierFit {
    /// `α(u) = a0 + Σ_j a_j cos 2πju + b_j sin 2πju`.
    pub alpha: Curve,
    /// Coefficients ordered `(a0, a_1, b_1, …, a_k, b_k)`.
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub objective: f64,
    pub iterations: usize,
}

/// Basis `(1, cos 2πu, sin 2πu, …)` of order `k` at `u`.
fn fourier_basis(u: f64, k: usize, out: &mut [f64]) {
    out[0] = 1.0;
    for j in 1..=k {
        let w = 2.0 * PI * j as f64 * u;
        out[2 * j - 1] = w.cos();
        out[2 * j] = w.sin();
    }
}

fn theta_to_curve(theta: &[f64]) -> Curve {
    let k = (theta.len() - 1) / 2;
    Curve::Fourier {
        a0: theta[0],
        a: (1..=k).map(|j| theta[2 * j - 1]).collect(),
        b: (1..=k).map(|j| theta[2 * j]).collect(),
    }
}

/// Precomputed pieces of the tvAR(1) contrast `L_n = ½ log(σ²/2π) + Q(α)/(2σ²)`.
struct FourierProblem<'a> {
    x: &'a [f64],
    k: usize,
    eps: f64,
    /// basis at t/n, row-major `n × (2k+1)`
    basis: Vec<f64>,
    /// basis at the feasibility-check points
    check: Vec<f64>,
}

impl<'a> FourierProblem<'a> {
    fn new(x: &'a [f64], k: usize, eps: f64) -> Self {
        let n = x.len();
        let d = 2 * k + 1;
        let mut basis = vec![0.0; n * d];
        for t in 0..n {
            fourier_basis((t + 1) as f64 / n as f64, k, &mut basis[t * d..(t + 1) * d]);
        }
        let mut check = basis.clone();
        let mut row = vec![0.0; d];
        for i in 0..=VALIDATION_GRID {
            fourier_basis(i as f64 / VALIDATION_GRID as f64, k, &mut row);
            check.extend_from_slice(&row);
        }
        Self {
            x,
            k,
            eps,
            basis,
            check,
        }
    }

    fn dim(&self) -> usize {
        2 * self.k + 1
    }

    fn alpha_at(&self, rows: &[f64], i: usize, theta: &[f64]) -> f64 {
        let d = self.dim();
        rows[i * d..(i + 1) * d].iter().zip(theta).map(|(b, c)| b * c).sum()
    }

    fn feasible(&self, theta: &[f64]) -> bool {
        let rows = self.check.len() / self.dim();
        (0..rows).all(|i| self.alpha_at(&self.check, i, theta).abs() < 1.0)
    }

    /// `Q = (1/n) Σ_t [x_t² (1 + α_t²) + 2 α_t x_t x_{t+1}]` with `x_{n+1} = 0`.
    fn q(&self, theta: &[f64]) -> f64 {
        let n = self.x.len();
        let mut acc = 0.0;
        for t in 0..n {
            let a = self.alpha_at(&self.basis, t, theta);
            let next = if t + 1 < n { self.x[t + 1] } else { 0.0 };
            acc += self.x[t].powi(2) * (1.0 + a * a) + 2.0 * a * self.x[t] * next;
        }
        acc / n as f64
    }

    fn profile(&self, q: f64) -> (f64, f64) {
        let s2 = q.clamp(self.eps * self.eps, 1.0 / (self.eps * self.eps));
        (s2, 0.5 * (s2 / (2.0 * PI)).ln() + q / (2.0 * s2))
    }

    /// Unconstrained minimizer of `Q`.
    fn normal_equations(&self) -> Option<Vec<f64>> {
        let n = self.x.len();
        let d = self.dim();
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut r = DVector::<f64>::zeros(d);
        for t in 0..n {
            let row = &self.basis[t * d..(t + 1) * d];
            let x2 = self.x[t].powi(2);
            let c = if t + 1 < n { self.x[t] * self.x[t + 1] } else { 0.0 };
            for i in 0..d {
                r[i] -= c * row[i];
                for j in 0..d {
                    h[(i, j)] += x2 * row[i] * row[j];
                }
            }
        }
        h.cholesky().map(|c| c.solve(&r).iter().copied().collect())
    }
}

/// Profiled contrast of the tvAR(1) sieve at coefficients `theta`, or `None`
/// when `sup |α| ≥ 1`. Returns `(L_n, σ²)`.
pub fn fourier_tvar1_objective(series: &[f64], theta: &[f64], eps: f64) -> Option<(f64, f64)> {
    let k = (theta.len().max(1) - 1) / 2;
    let prob = FourierProblem::new(series, k, eps);
    if !prob.feasible(theta) {
        return None;
    }
    let (s2, l) = prob.profile(prob.q(theta));
    Some((l, s2))
}

/// Minimizes the contrast over `α` of Fourier order `k` and constant
/// `σ² ∈ [ε², 1/ε²]`, subject to `sup_u |α(u)| < 1`.
pub fn fit_fourier_tvar1(series: &[f64], k: usize, eps: f64) -> Result<FourierFit> {
    let n = series.len();
    if n < 8 * (k + 1) {
        return Err(Error::invalid(format!(
            "Fourier order {k} needs n >= {}, got {n}",
            8 * (k + 1)
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    let ss: f64 = series.iter().map(|v| v * v).sum();
    if !(ss > 0.0) || !ss.is_finite() {
        return Err(Error::DegenerateData("series has no variation".into()));
    }
    let prob = FourierProblem::new(series, k, eps);
    let d = prob.dim();

    let lag1: f64 = series.windows(2).map(|w| w[0] * w[1]).sum();
    let mut start = vec![0.0; d];
    start[0] = -lag1 / ss;
    if !prob.feasible(&start) {
        start[0] = 0.0;
    }
    if !prob.feasible(&start) {
        return Err(Error::InfeasibleStart("no feasible starting coefficients".into()));
    }
    let finish = |theta: Vec<f64>, iterations: usize| {
        let (s2, l) = prob.profile(prob.q(&theta));
        FourierFit {
            alpha: theta_to_curve(&theta),
            theta,
            sigma2: s2,
            objective: l,
            iterations,
        }
    };

    // The profiled contrast is increasing in Q, so the feasible minimizer of
    // Q is the answer whenever it exists.
    let exact = prob.normal_equations();
    if let Some(theta) = &exact {
        if prob.feasible(theta) {
            return Ok(finish(theta.clone(), 0));
        }
    }

    // Move toward the unconstrained minimizer until the boundary, then refine
    // by coordinate descent with shrinking steps.
    let mut theta = start;
    if let Some(target) = exact {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let cand: Vec<f64> = theta.iter().zip(&target).map(|(a, b)| a + mid * (b - a)).collect();
            if prob.feasible(&cand) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let cand: Vec<f64> = theta.iter().zip(&target).map(|(a, b)| a + lo * (b - a)).collect();
        if prob.q(&cand) < prob.q(&theta) {
            theta = cand;
        }
    }
    let mut q = prob.q(&theta);
    let mut step = 0.1;
    let mut iterations = 0;
    while step > 1e-10 && iterations < 10_000 {
        iterations += 1;
        let before = q;
        for i in 0..d {
            for dir in [1.0, -1.0] {
                let mut cand = theta.clone();
                cand[i] += dir * step;
                if !prob.feasible(&cand) {
                    continue;
                }
                let qc = prob.q(&cand);
                if qc < q {
                    theta = cand;
                    q = qc;
                    break;
                }
            }
        }
        let (_, l_before) = prob.profile(before);
        let (_, l_after) = prob.profile(q);
        if l_before - l_after <= 1e-8 * l_before.abs() {
            step *= 0.5;
        }
    }
    Ok(finish(theta, iterations))
}

/// `ρ₂(1/g, 1/f)`. Exact in `λ` by Parseval when both fields are AR-backed,
/// midpoint quadrature on `grid` otherwise; midpoint rule with `u_grid` nodes in `u`.
pub fn rho2_inverse_error(
    g: &SpectrumField,
    f: &SpectrumField,
    grid: &FrequencyGrid,
    u_grid: usize,
) -> Result<f64> {
    if u_grid == 0 {
        return Err(Error::invalid("u grid must have at least one node"));
    }
    let uf = u_grid as f64;
    let diff: TestFunction = g.inverse().difference(&f.inverse());
    let mut acc = 0.0;
    if diff.has_closed_form_lags() {
        for i in 0..u_grid {
            let lags = diff.closed_form_lags((i as f64 + 0.5) / uf).expect("checked above");
            acc += lags[0] * lags[0] + 2.0 * lags[1..].iter().map(|c| c * c).sum::<f64>();
        }
        acc /= 2.0 * PI;
    } else {
        for i in 0..u_grid {
            let u = (i as f64 + 0.5) / uf;
            for l in grid.nodes() {
                let (gv, fv) = (g.eval(u, l), f.eval(u, l));
                if !(gv > 0.0 && fv > 0.0) {
                    return Err(Error::invalid("spectral fields must be positive"));
                }
                acc += (1.0 / gv - 1.0 / fv).powi(2);
            }
        }
        acc *= grid.weight();
    }
    Ok((acc / uf).sqrt())
}

/// `ρ₂(1/a, 1/b)` for variance curves viewed as fields constant in `λ`.
pub fn rho2_variance_error(a: &Curve, b: &Curve, u_grid: usize) -> Result<f64> {
    if u_grid == 0 {
        return Err(Error::invalid("u grid must have at least one node"));
    }
    let uf = u_grid as f64;
    let mut acc = 0.0;
    for i in 0..u_grid {
        let u = (i as f64 + 0.5) / uf;
        let (x, y) = (a.eval(u), b.eval(u));
        if !(x > 0.0 && y > 0.0) {
            return Err(Error::invalid("variance curves must be positive"));
        }
        acc += (1.0 / x - 1.0 / y).powi(2);
    }
    Ok((2.0 * PI * acc / uf).sqrt())
}
