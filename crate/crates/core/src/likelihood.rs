//! Whittle-type contrast, Kullback-Leibler functional and conditional likelihood.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::process::{check_stability, transfer_sq, Curve, TvARModel, VALIDATION_GRID};
use crate::spectral::{periodogram, FrequencyGrid, PrePeriodogram, TestFunction};

/// Default `u` resolution of the rescaled-time integrals.
pub const DEFAULT_U_GRID: usize = 4096;

/// `g(u, λ) = σ²(u)/(2π) |1 + Σ_j α_j(u) e^{iλj}|^{-2}` without a stability requirement.
#[derive(Debug, Clone)]
pub struct ArSpectrum {
    alpha: Vec<Curve>,
    sigma2: Curve,
}

impl ArSpectrum {
    pub fn new(alpha: Vec<Curve>, sigma2: Curve) -> Result<Self> {
        for i in 1..=VALIDATION_GRID {
            let s = sigma2.eval(i as f64 / VALIDATION_GRID as f64);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("variance curve must be positive, got {s}")));
            }
        }
        Ok(Self { alpha, sigma2 })
    }

    pub fn alpha(&self) -> &[Curve] {
        &self.alpha
    }

    pub fn sigma2(&self) -> &Curve {
        &self.sigma2
    }

    pub fn coefficients_at(&self, u: f64) -> Vec<f64> {
        self.alpha.iter().map(|c| c.eval(u)).collect()
    }

    pub fn eval(&self, u: f64, lambda: f64) -> f64 {
        self.sigma2.eval(u) / (2.0 * PI * transfer_sq(&self.coefficients_at(u), lambda))
    }
}

type Field = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A positive spectral field `g(u, λ)`.
#[derive(Clone)]
pub enum SpectrumField {
    Ar(ArSpectrum),
    /// Arbitrary field with optional known bounds `(m_low, m_high)`.
    Generic { f: Field, bounds: Option<(f64, f64)> },
}

impl fmt::Debug for SpectrumField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumField::Ar(a) => f.debug_tuple("Ar").field(a).finish(),
            SpectrumField::Generic { bounds, .. } => {
                f.debug_struct("Generic").field("bounds", bounds).finish_non_exhaustive()
            }
        }
    }
}

impl SpectrumField {
    pub fn ar(alpha: Vec<Curve>, sigma2: Curve) -> Result<Self> {
        Ok(SpectrumField::Ar(ArSpectrum::new(alpha, sigma2)?))
    }

    pub fn from_model(model: &TvARModel) -> Self {
        SpectrumField::Ar(ArSpectrum {
            alpha: model.alpha().to_vec(),
            sigma2: model.sigma2().clone(),
        })
    }

    /// `g ≡ c`, represented as white noise with `σ² = 2πc`.
    pub fn constant(c: f64) -> Result<Self> {
        Self::ar(Vec::new(), Curve::constant(2.0 * PI * c))
    }

    pub fn generic(
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        bounds: Option<(f64, f64)>,
    ) -> Self {
        SpectrumField::Generic {
            f: Arc::new(f),
            bounds,
        }
    }

    pub fn eval(&self, u: f64, lambda: f64) -> f64 {
        match self {
            SpectrumField::Ar(a) => a.eval(u, lambda),
            SpectrumField::Generic { f, .. } => f(u, lambda),
        }
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            SpectrumField::Ar(_) => None,
            SpectrumField::Generic { bounds, .. } => *bounds,
        }
    }

    /// `1/g` as a test function, with closed-form lags when AR-backed.
    pub fn inverse(&self) -> TestFunction {
        match self {
            SpectrumField::Ar(a) => TestFunction::ar_inverse(a.alpha.clone(), a.sigma2.clone()),
            SpectrumField::Generic { f, .. } => {
                let f = f.clone();
                TestFunction::from_field(move |u, l| 1.0 / f(u, l))
            }
        }
    }

    /// `∫ log g(u, λ) dλ`: closed form for stable AR fields, quadrature otherwise.
    pub fn log_integral(&self, u: f64, grid: &FrequencyGrid) -> Result<f64> {
        if let SpectrumField::Ar(a) = self {
            if check_stability(&a.coefficients_at(u), 0.0)? {
                return Ok(2.0 * PI * (a.sigma2.eval(u) / (2.0 * PI)).ln());
            }
        }
        let mut acc = 0.0;
        for l in grid.nodes() {
            acc += positive(self.eval(u, l), u, l)?.ln();
        }
        Ok(acc * grid.weight())
    }
}

fn positive(v: f64, u: f64, l: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(format!(
            "spectral field must be positive and finite, got {v} at (u={u}, λ={l})"
        )))
    }
}

/// `L_n(g) = (1/n) Σ_t (1/4π) ∫ {log g(t/n, λ) + J(t/n, λ)/g(t/n, λ)} dλ`.
///
/// AR-backed fields use the exact lag sum for `∫ J/g` and Kolmogorov's formula
/// for `∫ log g`; generic fields use quadrature on `grid`.
pub fn whittle_contrast(pp: &PrePeriodogram, g: &SpectrumField, grid: &FrequencyGrid) -> Result<f64> {
    let a = match g {
        SpectrumField::Ar(a) => a,
        SpectrumField::Generic { .. } => return whittle_contrast_quadrature(pp, g, grid),
    };
    let n = pp.len();
    let nf = n as f64;
    let inv = g.inverse();
    let total: f64 = (1..=n)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let u = t as f64 / nf;
            let s2 = a.sigma2.eval(u);
            if !(s2 > 0.0 && s2.is_finite()) {
                return Err(Error::invalid(format!("variance must be positive, got {s2} at u={u}")));
            }
            let c = inv.closed_form_lags(u).expect("AR inverse has closed-form lags");
            let kmax = pp.max_lag(t).min(c.len() - 1);
            let mut jg = pp.lag_product(t, 0) * c[0];
            for (k, ck) in c.iter().enumerate().take(kmax + 1).skip(1) {
                jg += 2.0 * pp.lag_product(t, k as i64) * ck;
            }
            Ok(g.log_integral(u, grid)? + jg / (2.0 * PI))
        })
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum();
    Ok(total / (4.0 * PI * nf))
}

/// [`whittle_contrast`] by midpoint quadrature in `λ` for any field.
pub fn whittle_contrast_quadrature(
    pp: &PrePeriodogram,
    g: &SpectrumField,
    grid: &FrequencyGrid,
) -> Result<f64> {
    let n = pp.len();
    let nf = n as f64;
    let total: f64 = (1..=n)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let u = t as f64 / nf;
            let j = pp.eval_grid(t, grid);
            let mut acc = 0.0;
            for (l, jv) in grid.nodes().zip(&j) {
                let gv = positive(g.eval(u, l), u, l)?;
                acc += gv.ln() + jv / gv;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum();
    Ok(total * grid.weight() / (4.0 * PI * nf))
}

/// Stationary Whittle likelihood `(1/4π) ∫ {log g(λ) + I_n(λ)/g(λ)} dλ`.
pub fn classical_whittle(series: &[f64], g: &dyn Fn(f64) -> f64, grid: &FrequencyGrid) -> Result<f64> {
    let per = periodogram(series, grid)?;
    let mut acc = 0.0;
    for (l, i) in grid.nodes().zip(&per) {
        let gv = positive(g(l), 0.0, l)?;
        acc += gv.ln() + i / gv;
    }
    Ok(acc * grid.weight() / (4.0 * PI))
}

/// Values of the asymptotic contrast for a pair `(g, f)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KlReport {
    /// `L(g) = (1/4π) ∫∫ {log g + f/g}`.
    pub l_g: f64,
    /// `L(f)`.
    pub l_f: f64,
    /// `D(g, f) = (1/4π) ∫∫ {log(g/f) + f/g - 1}`.
    pub divergence: f64,
}

/// Midpoint-rule evaluation of `L(g)`, `L(f)` and their difference.
pub fn asymptotic_kl(
    g: &SpectrumField,
    f: &SpectrumField,
    grid: &FrequencyGrid,
    u_grid: usize,
) -> Result<KlReport> {
    if u_grid == 0 {
        return Err(Error::invalid("u grid must have at least one node"));
    }
    let uf = u_grid as f64;
    let rows: Vec<(f64, f64, f64)> = (0..u_grid)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64, f64)> {
            let u = (i as f64 + 0.5) / uf;
            let (mut lg, mut lf, mut d) = (0.0, 0.0, 0.0);
            for l in grid.nodes() {
                let gv = positive(g.eval(u, l), u, l)?;
                let fv = positive(f.eval(u, l), u, l)?;
                let r = fv / gv;
                lg += gv.ln() + r;
                lf += fv.ln() + 1.0;
                d += r - 1.0 - r.ln();
            }
            Ok((lg, lf, d))
        })
        .collect::<Result<_>>()?;
    let scale = grid.weight() / (4.0 * PI * uf);
    let sum = |k: fn(&(f64, f64, f64)) -> f64| rows.iter().map(k).sum::<f64>() * scale;
    Ok(KlReport {
        l_g: sum(|r| r.0),
        l_f: sum(|r| r.1),
        divergence: sum(|r| r.2),
    })
}

/// `L̃_n = (1/n) Σ_{t>p} {log σ²(t/n) + e_t²/σ²(t/n)}` with `e_t = x_t + Σ_j α_j x_{t-j}`.
pub fn conditional_likelihood(series: &[f64], alpha: &[f64], sigma2: &Curve) -> Result<f64> {
    let n = series.len();
    let p = alpha.len();
    if n <= p {
        return Err(Error::invalid(format!(
            "conditional likelihood needs n > p, got n = {n}, p = {p}"
        )));
    }
    let nf = n as f64;
    let mut acc = 0.0;
    for t in p..n {
        let s2 = sigma2.eval((t + 1) as f64 / nf);
        if !(s2 > 0.0 && s2.is_finite()) {
            return Err(Error::invalid(format!("variance must be positive, got {s2}")));
        }
        let e = residual(series, alpha, t);
        acc += s2.ln() + e * e / s2;
    }
    Ok(acc / nf)
}

/// `e_t = x_t + Σ_j α_j x_{t-j}` for 0-based `t ≥ p`.
pub fn residual(series: &[f64], alpha: &[f64], t: usize) -> f64 {
    series[t]
        + alpha
            .iter()
            .enumerate()
            .map(|(j, a)| a * series[t - j - 1])
            .sum::<f64>()
}

/// `R_log(g) = (1/4π) ∫ [(1/n) Σ_t log g(t/n, λ) - ∫ log g(u, λ) du] dλ`.
pub fn r_log(g: &SpectrumField, n: usize, grid: &FrequencyGrid, u_grid: usize) -> Result<f64> {
    if n == 0 || u_grid == 0 {
        return Err(Error::invalid("r_log needs n >= 1 and a nonempty u grid"));
    }
    let nf = n as f64;
    let uf = u_grid as f64;
    let avg_t: f64 = (1..=n)
        .into_par_iter()
        .map(|t| g.log_integral(t as f64 / nf, grid))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / nf;
    let avg_u: f64 = (0..u_grid)
        .into_par_iter()
        .map(|i| g.log_integral((i as f64 + 0.5) / uf, grid))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / uf;
    Ok((avg_t - avg_u) / (4.0 * PI))
}

/// Quadrature value of `∫ log |1 + Σ_j α_j e^{iλj}|² dλ`, zero for stable `α`.
pub fn kolmogorov_check(alpha: &[f64], grid: &FrequencyGrid) -> Result<f64> {
    if !check_stability(alpha, 0.0)? {
        return Err(Error::invalid(format!("coefficients {alpha:?} are not stable")));
    }
    if alpha.is_empty() {
        return Ok(0.0);
    }
    Ok(grid.nodes().map(|l| transfer_sq(alpha, l).ln()).sum::<f64>() * grid.weight())
}

/// Both sides of the divergence sandwich for a pair of fields.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SandwichReport {
    pub divergence: f64,
    pub rho2_sq: f64,
    pub rho1: f64,
    /// `max(sup 1/g, sup 1/f)`.
    pub m_star: f64,
    /// `max(sup f, sup g)`.
    pub omega: f64,
    /// `ρ₂²/(8π M*²)`.
    pub lower: f64,
    /// `Ω² ρ₂²/(4π)`.
    pub upper: f64,
    /// `(Ω/2π) max(Ω ρ₂², ρ₁)`.
    pub upper_l1: f64,
}

impl SandwichReport {
    pub fn holds(&self) -> bool {
        let slack = 1e-12 * self.divergence.abs().max(1e-300);
        self.lower <= self.divergence + slack
            && self.divergence <= self.upper + slack
            && self.divergence <= self.upper_l1 + slack
    }
}

/// Computes `D(g, f)` and the bounds in terms of `ρ₂(1/g, 1/f)` on a common grid.
pub fn kl_sandwich(
    g: &SpectrumField,
    f: &SpectrumField,
    grid: &FrequencyGrid,
    u_grid: usize,
) -> Result<SandwichReport> {
    if u_grid == 0 {
        return Err(Error::invalid("u grid must have at least one node"));
    }
    let uf = u_grid as f64;
    let w = grid.weight() / uf;
    #[derive(Default, Clone, Copy)]
    struct Acc {
        d: f64,
        r2: f64,
        r1: f64,
        inv_max: f64,
        f_max: f64,
    }
    let parts: Vec<Acc> = (0..u_grid)
        .into_par_iter()
        .map(|i| -> Result<Acc> {
            let u = (i as f64 + 0.5) / uf;
            let mut a = Acc::default();
            for l in grid.nodes() {
                let gv = positive(g.eval(u, l), u, l)?;
                let fv = positive(f.eval(u, l), u, l)?;
                let r = fv / gv;
                a.d += r - 1.0 - r.ln();
                let diff = 1.0 / gv - 1.0 / fv;
                a.r2 += diff * diff;
                a.r1 += diff.abs();
                a.inv_max = a.inv_max.max(1.0 / gv).max(1.0 / fv);
                a.f_max = a.f_max.max(gv).max(fv);
            }
            Ok(a)
        })
        .collect::<Result<_>>()?;
    let mut t = Acc::default();
    for p in &parts {
        t.d += p.d;
        t.r2 += p.r2;
        t.r1 += p.r1;
        t.inv_max = t.inv_max.max(p.inv_max);
        t.f_max = t.f_max.max(p.f_max);
    }
    let divergence = t.d * w / (4.0 * PI);
    let rho2_sq = t.r2 * w;
    let rho1 = t.r1 * w;
    let (m_star, omega) = (t.inv_max, t.f_max);
    Ok(SandwichReport {
        divergence,
        rho2_sq,
        rho1,
        m_star,
        omega,
        lower: rho2_sq / (8.0 * PI * m_star * m_star),
        upper: omega * omega * rho2_sq / (4.0 * PI),
        upper_l1: omega / (2.0 * PI) * (omega * rho2_sq).max(rho1),
    })
}

/// `|½(L̃_n - log 2π) - L_n|` for constant `α` and variance curve `σ²`.
pub fn conditional_gap(series: &[f64], alpha: &[f64], sigma2: &Curve, grid: &FrequencyGrid) -> Result<f64> {
    let pp = PrePeriodogram::new(series)?;
    let g = SpectrumField::ar(alpha.iter().map(|&a| Curve::constant(a)).collect(), sigma2.clone())?;
    let ln = whittle_contrast(&pp, &g, grid)?;
    let lc = conditional_likelihood(series, alpha, sigma2)?;
    Ok((0.5 * (lc - (2.0 * PI).ln()) - ln).abs())
}
