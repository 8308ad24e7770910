//! Pre-periodogram, empirical spectral functional and test-function norms.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::process::{transfer_sq, Curve, TvARModel};

/// Default number of frequency nodes.
pub const DEFAULT_GRID_SIZE: usize = 1024;

/// Largest `n` for which [`build_un`] allocates a dense matrix.
pub const MAX_DENSE_N: usize = 4096;

/// Default `u` resolution for total variation and sup computations.
pub const DEFAULT_U_RESOLUTION: usize = 2048;

/// Midpoint nodes `λ_m = -π + 2π(m + 1/2)/M`, each with weight `2π/M`.
#[derive(Clone)]
pub struct FrequencyGrid {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FrequencyGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrequencyGrid").field("size", &self.size).finish()
    }
}

impl PartialEq for FrequencyGrid {
    fn eq(&self, other: &Self) -> bool {
        self.size == other.size
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self::new(DEFAULT_GRID_SIZE).expect("default grid size is valid")
    }
}

impl FrequencyGrid {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 || size % 2 != 0 {
            return Err(Error::invalid(format!(
                "frequency grid size must be even and >= 2, got {size}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weight(&self) -> f64 {
        2.0 * PI / self.size as f64
    }

    pub fn node(&self, m: usize) -> f64 {
        -PI + 2.0 * PI * (m as f64 + 0.5) / self.size as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).map(|m| self.node(m))
    }

    /// `Σ_k c_k e^{-iλ_m k}` at every node, for coefficients given as `(k, c_k)`.
    pub fn synthesize(&self, coeffs: impl IntoIterator<Item = (i64, f64)>) -> Vec<Complex64> {
        let m = self.size as i64;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        // e^{-iλ_m k} = e^{iπk(1 - 1/M)} e^{-2πi mk/M}
        let shift = PI * (1.0 - 1.0 / self.size as f64);
        for (k, c) in coeffs {
            let idx = k.rem_euclid(m) as usize;
            buf[idx] += Complex64::from_polar(c, shift * k as f64);
        }
        self.forward.process(&mut buf);
        buf
    }

    /// `∫ g(λ) e^{iλj} dλ` by the midpoint rule for `|j| < M/2`, from node values of `g`.
    /// Entry `j` of the result holds lag `j` for `j ≥ 0`; lag `-j` is at `M - j`.
    pub fn analyze(&self, values: &[f64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.size);
        let mut buf: Vec<Complex64> = values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        self.inverse.process(&mut buf);
        // e^{iλ_m j} = e^{-iπj(1 - 1/M)} e^{2πi mj/M}
        let shift = PI * (1.0 - 1.0 / self.size as f64);
        let w = self.weight();
        let m = self.size as i64;
        for (idx, c) in buf.iter_mut().enumerate() {
            let j = if (idx as i64) < m / 2 { idx as i64 } else { idx as i64 - m };
            *c *= Complex64::from_polar(w, -shift * j as f64);
        }
        buf
    }
}

/// The lag products `P_t(k) = X_a X_b` with `a = ⌊t + 1/2 + k/2⌋`, `b = ⌊t + 1/2 - k/2⌋`.
#[derive(Debug, Clone)]
pub struct PrePeriodogram {
    x: Vec<f64>,
    max_lag: Vec<usize>,
}

/// Indices `(a, b)` (1-based) paired at time `t` and lag `k`.
pub fn lag_pair(t: usize, k: i64) -> (i64, i64) {
    let two_t1 = 2 * t as i64 + 1;
    ((two_t1 + k).div_euclid(2), (two_t1 - k).div_euclid(2))
}

fn admissible(t: usize, k: i64, n: usize) -> bool {
    let (a, b) = lag_pair(t, k);
    a >= 1 && b >= 1 && a <= n as i64 && b <= n as i64
}

impl PrePeriodogram {
    pub fn new(x: &[f64]) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::invalid("pre-periodogram needs at least one observation"));
        }
        // a grows and b shrinks with k, so admissibility is monotone in k ≥ 0
        let max_lag = (1..=n)
            .map(|t| {
                let (mut lo, mut hi) = (0i64, 2 * n as i64);
                while lo < hi {
                    let mid = (lo + hi + 1) / 2;
                    if admissible(t, mid, n) {
                        lo = mid;
                    } else {
                        hi = mid - 1;
                    }
                }
                lo as usize
            })
            .collect();
        Ok(Self {
            x: x.to_vec(),
            max_lag,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn series(&self) -> &[f64] {
        &self.x
    }

    /// Largest admissible `|k|` at time `t` (1-based).
    pub fn max_lag(&self, t: usize) -> usize {
        self.max_lag[t - 1]
    }

    /// `P_t(k)`, zero outside the admissible range.
    pub fn lag_product(&self, t: usize, k: i64) -> f64 {
        if k.unsigned_abs() as usize > self.max_lag(t) {
            return 0.0;
        }
        let (a, b) = lag_pair(t, k);
        self.x[a as usize - 1] * self.x[b as usize - 1]
    }

    /// `J(t/n, λ) = (1/2π) Σ_k P_t(k) e^{-iλk}`.
    pub fn eval(&self, t: usize, lambda: f64) -> f64 {
        let mut acc = self.lag_product(t, 0);
        for k in 1..=self.max_lag(t) as i64 {
            acc += 2.0 * self.lag_product(t, k) * (lambda * k as f64).cos();
        }
        acc / (2.0 * PI)
    }

    /// `J(t/n, ·)` at every node of `grid`.
    pub fn eval_grid(&self, t: usize, grid: &FrequencyGrid) -> Vec<f64> {
        let kmax = self.max_lag(t) as i64;
        let coeffs: Vec<_> = (-kmax..=kmax).map(|k| (k, self.lag_product(t, k))).collect();
        let scale = coeffs.iter().map(|(_, c)| c.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        let vals = grid.synthesize(coeffs);
        vals.into_iter()
            .map(|c| {
                debug_assert!(c.im.abs() <= 1e-10 * scale);
                c.re / (2.0 * PI)
            })
            .collect()
    }

    /// `∫ J(t/n, λ) dλ`, which is `x_t²`.
    pub fn integral(&self, t: usize) -> f64 {
        self.lag_product(t, 0)
    }
}

pub fn preperiodogram(series: &[f64]) -> Result<PrePeriodogram> {
    PrePeriodogram::new(series)
}

/// `I_n(λ) = (1/2πn) |Σ_t x_t e^{-iλt}|²` on `grid`.
pub fn periodogram(series: &[f64], grid: &FrequencyGrid) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::invalid("periodogram needs at least one observation"));
    }
    let n = series.len() as f64;
    let d = grid.synthesize(series.iter().enumerate().map(|(i, x)| (i as i64 + 1, *x)));
    Ok(d.into_iter().map(|c| c.norm_sqr() / (2.0 * PI * n)).collect())
}

type FieldFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type LagFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// A real test function `φ(u, λ)` on `[0, 1] × [-π, π]`.
///
/// Functions built from lags carry closed-form coefficients `φ̂(u, j)` for
/// `0 ≤ j ≤ max_lag`; these are real and even in `j` (φ even in λ). Functions
/// built from a field only have the quadrature accessor.
#[derive(Clone)]
pub struct TestFunction {
    field: FieldFn,
    lags: Option<(usize, LagFn)>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("max_lag", &self.max_lag())
            .finish_non_exhaustive()
    }
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        Self::from_lags(0, move |_, out| out[0] = 2.0 * PI * c)
    }

    pub fn from_field(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            field: Arc::new(f),
            lags: None,
        }
    }

    /// Builds `φ(u, λ) = (1/2π)[φ̂(u,0) + 2 Σ_{j≥1} φ̂(u,j) cos jλ]` from a
    /// closure filling `φ̂(u, 0..=max_lag)`.
    pub fn from_lags(max_lag: usize, lags: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        let lags: LagFn = Arc::new(lags);
        let lf = lags.clone();
        let field = move |u: f64, l: f64| {
            let mut buf = vec![0.0; max_lag + 1];
            lf(u, &mut buf);
            let mut acc = buf[0];
            for (j, c) in buf.iter().enumerate().skip(1) {
                acc += 2.0 * c * (l * j as f64).cos();
            }
            acc / (2.0 * PI)
        };
        Self {
            field: Arc::new(field),
            lags: Some((max_lag, lags)),
        }
    }

    /// `1/g` for the AR spectrum `g = σ²/(2π) |1 + Σ α_j e^{iλj}|^{-2}`:
    /// `φ̂(u, l) = (4π²/σ²) Σ_j α_j α_{j+l}` with `α_0 = 1`.
    pub fn ar_inverse(alpha: Vec<Curve>, sigma2: Curve) -> Self {
        let p = alpha.len();
        Self::from_lags(p, move |u, out| {
            let mut a = Vec::with_capacity(p + 1);
            a.push(1.0);
            a.extend(alpha.iter().map(|c| c.eval(u)));
            let scale = 4.0 * PI * PI / sigma2.eval(u);
            for (l, o) in out.iter_mut().enumerate() {
                *o = scale * (0..=p - l).map(|j| a[j] * a[j + l]).sum::<f64>();
            }
        })
    }

    pub fn inverse_spectrum(model: &TvARModel) -> Self {
        Self::ar_inverse(model.alpha().to_vec(), model.sigma2().clone())
    }

    pub fn scaled(&self, c: f64) -> Self {
        let field = self.field.clone();
        match &self.lags {
            Some((j, lags)) => {
                let lags = lags.clone();
                Self {
                    field: Arc::new(move |u, l| c * field(u, l)),
                    lags: Some((
                        *j,
                        Arc::new(move |u, out: &mut [f64]| {
                            lags(u, out);
                            out.iter_mut().for_each(|o| *o *= c);
                        }),
                    )),
                }
            }
            None => Self::from_field(move |u, l| c * field(u, l)),
        }
    }

    /// `self - other`.
    pub fn difference(&self, other: &TestFunction) -> Self {
        let (fa, fb) = (self.field.clone(), other.field.clone());
        let field: FieldFn = Arc::new(move |u, l| fa(u, l) - fb(u, l));
        match (&self.lags, &other.lags) {
            (Some((ja, la)), Some((jb, lb))) => {
                let (ja, jb) = (*ja, *jb);
                let (la, lb) = (la.clone(), lb.clone());
                let j = ja.max(jb);
                let lags: LagFn = Arc::new(move |u, out: &mut [f64]| {
                    let mut tmp = vec![0.0; jb + 1];
                    out.iter_mut().for_each(|o| *o = 0.0);
                    la(u, &mut out[..=ja]);
                    lb(u, &mut tmp);
                    for (o, t) in out.iter_mut().zip(&tmp) {
                        *o -= t;
                    }
                });
                Self {
                    field,
                    lags: Some((j, lags)),
                }
            }
            _ => Self { field, lags: None },
        }
    }

    pub fn eval(&self, u: f64, lambda: f64) -> f64 {
        (self.field)(u, lambda)
    }

    /// Declared lag support, `None` when only the quadrature accessor exists.
    pub fn max_lag(&self) -> Option<usize> {
        self.lags.as_ref().map(|(j, _)| *j)
    }

    pub fn has_closed_form_lags(&self) -> bool {
        self.lags.is_some()
    }

    /// Closed-form `φ̂(u, 0..=max_lag)`, if available.
    pub fn closed_form_lags(&self, u: f64) -> Option<Vec<f64>> {
        self.lags.as_ref().map(|(j, f)| {
            let mut out = vec![0.0; j + 1];
            f(u, &mut out);
            out
        })
    }

    /// Lag coefficients `φ̂(u, j)` for `-L ≤ j ≤ L`, indexed by `j + L`.
    /// Closed-form when available, otherwise midpoint quadrature on `grid`
    /// (which requires `L < M/2`).
    pub fn lag_window(&self, u: f64, l: usize, grid: &FrequencyGrid) -> Result<Vec<Complex64>> {
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * l + 1];
        if let Some(c) = self.closed_form_lags(u) {
            for (j, v) in c.iter().enumerate().take(l + 1) {
                out[l + j] = Complex64::new(*v, 0.0);
                out[l - j] = Complex64::new(*v, 0.0);
            }
            return Ok(out);
        }
        if 2 * l >= grid.size() {
            return Err(Error::invalid(format!(
                "quadrature lags up to {l} need a grid larger than {}",
                grid.size()
            )));
        }
        let vals: Vec<f64> = grid.nodes().map(|lam| self.eval(u, lam)).collect();
        let spec = grid.analyze(&vals);
        let m = grid.size();
        for j in 0..=l {
            out[l + j] = spec[j];
            out[l - j] = spec[(m - j) % m];
        }
        Ok(out)
    }
}

/// How [`functional_fn`] evaluates `F_n(φ)`.
#[derive(Debug, Clone)]
pub enum FnPath {
    /// Exact lag sum; needs closed-form lags.
    Lag,
    /// Midpoint quadrature of `∫ φ J dλ`.
    Quadrature { grid: Option<FrequencyGrid> },
    /// Dense quadratic form `(1/n) xᵀ U_n(φ/2π) x`.
    Matrix,
}

/// `F_n(φ) = (1/n) Σ_t ∫ φ(t/n, λ) J(t/n, λ) dλ`.
pub fn functional_fn(pp: &PrePeriodogram, phi: &TestFunction, path: &FnPath) -> Result<f64> {
    let n = pp.len();
    let nf = n as f64;
    match path {
        FnPath::Lag => {
            if !phi.has_closed_form_lags() {
                return Err(Error::invalid(
                    "lag path needs a test function with finite lag support",
                ));
            }
            let total: f64 = (1..=n)
                .into_par_iter()
                .map(|t| {
                    let c = phi.closed_form_lags(t as f64 / nf).expect("checked above");
                    let kmax = pp.max_lag(t).min(c.len() - 1);
                    let mut acc = pp.lag_product(t, 0) * c[0];
                    for (k, ck) in c.iter().enumerate().take(kmax + 1).skip(1) {
                        acc += 2.0 * pp.lag_product(t, k as i64) * ck;
                    }
                    acc
                })
                .sum();
            Ok(total / (2.0 * PI * nf))
        }
        FnPath::Quadrature { grid } => {
            let grid = grid.as_ref().ok_or_else(|| {
                Error::invalid("quadrature path needs an explicit frequency grid")
            })?;
            let total: f64 = (1..=n)
                .into_par_iter()
                .map(|t| {
                    let u = t as f64 / nf;
                    let j = pp.eval_grid(t, grid);
                    grid.nodes().zip(&j).map(|(l, jv)| phi.eval(u, l) * jv).sum::<f64>()
                })
                .sum();
            Ok(total * grid.weight() / nf)
        }
        FnPath::Matrix => {
            let u = build_un(&phi.scaled(1.0 / (2.0 * PI)), n)?;
            let x = pp.series();
            let mut q = 0.0;
            for a in 0..n {
                for b in 0..n {
                    q += x[a] * x[b] * u[(a, b)].re;
                }
            }
            Ok(q / nf)
        }
    }
}

/// `F(φ) = ∫_0^1 ∫ φ(u, λ) f(u, λ) dλ du` by a midpoint rule in both variables.
pub fn functional_f(
    phi: &TestFunction,
    f: &(dyn Fn(f64, f64) -> f64 + Sync),
    grid: &FrequencyGrid,
    u_grid_size: usize,
) -> f64 {
    let uf = u_grid_size as f64;
    let total: f64 = (0..u_grid_size)
        .into_par_iter()
        .map(|i| {
            let u = (i as f64 + 0.5) / uf;
            grid.nodes().map(|l| phi.eval(u, l) * f(u, l)).sum::<f64>()
        })
        .sum();
    total * grid.weight() / uf
}

/// `U_n(φ)_{jk} = φ̂(⌊(j+k)/2⌋/n, j - k)` for `1 ≤ j, k ≤ n`.
pub fn build_un(phi: &TestFunction, n: usize) -> Result<DMatrix<Complex64>> {
    if n == 0 {
        return Err(Error::invalid("matrix dimension must be at least 1"));
    }
    if n > MAX_DENSE_N {
        return Err(Error::Resource(format!(
            "dense U_n limited to n <= {MAX_DENSE_N}, got {n}"
        )));
    }
    let l = phi.max_lag().map_or(n - 1, |j| j.min(n - 1));
    let grid = if phi.has_closed_form_lags() {
        FrequencyGrid::default()
    } else {
        FrequencyGrid::new((2 * l + 2).next_power_of_two().max(DEFAULT_GRID_SIZE))?
    };
    // windows[s-1] holds lags at u = s/n for s = 1..n
    let windows: Vec<Vec<Complex64>> = (1..=n)
        .into_par_iter()
        .map(|s| phi.lag_window(s as f64 / n as f64, l, &grid))
        .collect::<Result<_>>()?;
    let mut u = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for j in 1..=n {
        for k in 1..=n {
            let d = j as i64 - k as i64;
            if d.unsigned_abs() as usize > l {
                continue;
            }
            let s = (j + k) / 2;
            u[(j - 1, k - 1)] = windows[s - 1][(d + l as i64) as usize];
        }
    }
    Ok(u)
}

/// Norms of a test function.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormReport {
    pub rho2: f64,
    pub rho2_n: f64,
    pub rho_inf: f64,
    pub v_tilde: f64,
    pub v_sigma: f64,
}

/// Computes `ρ₂`, `ρ_{2,n}`, `ρ_∞`, `ṽ` and `v_Σ`.
///
/// Sup and total variation in `u` are taken over the merged grid of
/// `{(i - 1/2)/R, i/R}` for `R = u_resolution` and `{t/n}`. Functions
/// without closed-form lags need `truncation`, the largest lag kept.
pub fn norms(
    phi: &TestFunction,
    n: usize,
    u_resolution: usize,
    truncation: Option<usize>,
) -> Result<NormReport> {
    if n == 0 || u_resolution == 0 {
        return Err(Error::invalid("norms need n >= 1 and u_resolution >= 1"));
    }
    let l = match (phi.max_lag(), truncation) {
        (Some(j), t) => t.map_or(j, |t| t.min(j)),
        (None, Some(t)) => t,
        (None, None) => {
            return Err(Error::invalid(
                "test function has no finite lag support; pass a truncation bound",
            ))
        }
    };
    let grid = if phi.has_closed_form_lags() {
        FrequencyGrid::default()
    } else {
        FrequencyGrid::new((2 * l + 2).next_power_of_two().max(DEFAULT_GRID_SIZE))?
    };
    let r = u_resolution as f64;
    let nf = n as f64;

    let mid: Vec<f64> = (0..u_resolution).map(|i| (i as f64 + 0.5) / r).collect();
    let times: Vec<f64> = (1..=n).map(|t| t as f64 / nf).collect();
    let mut merged: Vec<f64> = mid
        .iter()
        .copied()
        .chain((1..=u_resolution).map(|i| i as f64 / r))
        .chain(times.iter().copied())
        .collect();
    merged.sort_by(f64::total_cmp);
    merged.dedup();

    let window = |u: f64| phi.lag_window(u, l, &grid);
    let sq_sum = |w: &[Complex64]| w.iter().map(|c| c.norm_sqr()).sum::<f64>();

    let rho2_sq = if phi.has_closed_form_lags() {
        // Parseval: ∫ |φ(u,·)|² dλ = (1/2π) Σ_j |φ̂(u,j)|²
        let s: f64 = mid
            .par_iter()
            .map(|&u| window(u).map(|w| sq_sum(&w)))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .sum();
        s / (2.0 * PI * r)
    } else {
        let s: f64 = mid
            .par_iter()
            .map(|&u| grid.nodes().map(|lam| phi.eval(u, lam).powi(2)).sum::<f64>())
            .sum();
        s * grid.weight() / r
    };
    let rho2_n_sq = if phi.has_closed_form_lags() {
        let s: f64 = times
            .par_iter()
            .map(|&u| window(u).map(|w| sq_sum(&w)))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .sum();
        s / (2.0 * PI * nf)
    } else {
        let s: f64 = times
            .par_iter()
            .map(|&u| grid.nodes().map(|lam| phi.eval(u, lam).powi(2)).sum::<f64>())
            .sum();
        s * grid.weight() / nf
    };

    let windows: Vec<Vec<Complex64>> = merged.par_iter().map(|&u| window(u)).collect::<Result<_>>()?;
    let width = 2 * l + 1;
    let mut sup = vec![0.0f64; width];
    let mut tv = vec![0.0f64; width];
    for (i, w) in windows.iter().enumerate() {
        for j in 0..width {
            sup[j] = sup[j].max(w[j].norm());
            if i > 0 {
                tv[j] += (w[j] - windows[i - 1][j]).norm();
            }
        }
    }
    Ok(NormReport {
        rho2: rho2_sq.sqrt(),
        rho2_n: rho2_n_sq.sqrt(),
        rho_inf: sup.iter().sum(),
        v_tilde: tv.iter().copied().fold(0.0, f64::max),
        v_sigma: tv.iter().sum(),
    })
}

/// `|1 + Σ_j α_j e^{iλj}|^{-2} σ²/(2π)` as a field closure.
pub fn ar_spectrum_field(alpha: Vec<Curve>, sigma2: Curve) -> impl Fn(f64, f64) -> f64 + Send + Sync {
    move |u, l| {
        let a: Vec<f64> = alpha.iter().map(|c| c.eval(u)).collect();
        sigma2.eval(u) / (2.0 * PI * transfer_sq(&a, l))
    }
}
