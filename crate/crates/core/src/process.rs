//! Time-varying autoregressive models.
//!
//! A tvAR(p) process on rescaled time `u = t/n ∈ (0, 1]` is
//!
//! ```text
//! X_t + Σ_{j=1}^p α_j(t/n) X_{t-j} = σ(t/n) ε_t,   ε_t iid N(0, 1)
//! ```
//!
//! **Note the sign**: the coefficients sit on the left-hand side, so the
//! simulation recursion is `X_t = -Σ_j α_j X_{t-j} + σ ε_t`. A stationary AR(1)
//! with positive lag-one correlation therefore has a *negative* `α_1`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{step_index, stream_rng};
use crate::spectral::FrequencyGrid;

/// Number of uniformly spaced `u` points on which model invariants are checked.
pub const VALIDATION_GRID: usize = 512;

/// Default number of warm-up steps for [`simulate_tvar`].
pub const DEFAULT_BURN_IN: usize = 1000;

/// A user-supplied curve, not serializable.
#[derive(Clone)]
pub struct CustomCurve(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl fmt::Debug for CustomCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomCurve(..)")
    }
}

/// A real-valued curve on rescaled time `(0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Curve {
    Constant {
        value: f64,
    },
    /// `a0 + Σ_j a_j cos(2πju) + b_j sin(2πju)`.
    Fourier {
        a0: f64,
        #[serde(default)]
        a: Vec<f64>,
        #[serde(default)]
        b: Vec<f64>,
    },
    MonotoneStep(MonotoneStepCurve),
    /// Step interpolation of `values` on the grid `((j-1)/k, j/k]`.
    Sampled {
        values: Vec<f64>,
    },
    #[serde(skip)]
    Custom(CustomCurve),
}

impl Curve {
    pub fn constant(value: f64) -> Self {
        Curve::Constant { value }
    }

    pub fn fourier(a0: f64, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::invalid(format!(
                "fourier curve needs matching cosine/sine orders, got {} and {}",
                a.len(),
                b.len()
            )));
        }
        Ok(Curve::Fourier { a0, a, b })
    }

    pub fn sampled(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("sampled curve needs at least one value"));
        }
        Ok(Curve::Sampled { values })
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Curve::Custom(CustomCurve(Arc::new(f)))
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Curve::Constant { value } => *value,
            Curve::Fourier { a0, a, b } => {
                let mut acc = *a0;
                for (j, (aj, bj)) in a.iter().zip(b).enumerate() {
                    let w = 2.0 * PI * (j + 1) as f64 * u;
                    acc += aj * w.cos() + bj * w.sin();
                }
                acc
            }
            Curve::MonotoneStep(c) => c.eval(u),
            Curve::Sampled { values } => values[step_index(u, values.len())],
            Curve::Custom(c) => (c.0)(u),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Curve::Constant { .. } => true,
            Curve::Fourier { a, b, .. } => a.iter().chain(b).all(|c| *c == 0.0),
            Curve::MonotoneStep(c) => c.values().windows(2).all(|w| w[0] == w[1]),
            Curve::Sampled { values } => values.windows(2).all(|w| w[0] == w[1]),
            Curve::Custom(_) => false,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let ok = match self {
            Curve::Constant { value } => value.is_finite(),
            Curve::Fourier { a0, a, b } => {
                a0.is_finite() && a.iter().chain(b).all(|c| c.is_finite())
            }
            Curve::MonotoneStep(c) => c.values().iter().all(|v| v.is_finite()),
            Curve::Sampled { values } => values.iter().all(|v| v.is_finite()),
            Curve::Custom(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("curve has non-finite parameters"))
        }
    }
}

/// A bounded nondecreasing step function, constant on `((j-1)/k, j/k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMonotoneStep", into = "RawMonotoneStep")]
pub struct MonotoneStepCurve {
    values: Vec<f64>,
    eps: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMonotoneStep {
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
}

impl TryFrom<RawMonotoneStep> for MonotoneStepCurve {
    type Error = Error;
    fn try_from(raw: RawMonotoneStep) -> Result<Self> {
        MonotoneStepCurve::new(raw.values, raw.eps)
    }
}

impl From<MonotoneStepCurve> for RawMonotoneStep {
    fn from(c: MonotoneStepCurve) -> Self {
        RawMonotoneStep {
            values: c.values,
            eps: c.eps,
        }
    }
}

impl MonotoneStepCurve {
    /// Knot values `a_1 ≤ … ≤ a_k`. With `eps = Some(ε)` the values must lie in
    /// `[ε², 1/ε²]`; with `None` they only need to be strictly positive.
    pub fn new(values: Vec<f64>, eps: Option<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("monotone step curve needs at least one knot"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("monotone step curve has non-finite values"));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::ModelInvariant(
                "monotone step curve values must be nondecreasing".into(),
            ));
        }
        match eps {
            Some(e) => {
                if !(e > 0.0 && e < 1.0) {
                    return Err(Error::invalid(format!("eps must lie in (0, 1), got {e}")));
                }
                let (lo, hi) = (e * e, 1.0 / (e * e));
                if values[0] < lo || values[values.len() - 1] > hi {
                    return Err(Error::ModelInvariant(format!(
                        "monotone step values must lie in [{lo}, {hi}]"
                    )));
                }
            }
            None => {
                if values[0] <= 0.0 {
                    return Err(Error::ModelInvariant(
                        "monotone step values must be strictly positive".into(),
                    ));
                }
            }
        }
        Ok(Self { values, eps })
    }

    pub fn knots(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eps(&self) -> Option<f64> {
        self.eps
    }

    /// `(ε², 1/ε²)`, or `(0, ∞)` when unbounded.
    pub fn bounds(&self) -> (f64, f64) {
        match self.eps {
            Some(e) => (e * e, 1.0 / (e * e)),
            None => (0.0, f64::INFINITY),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.values[step_index(u, self.values.len())]
    }

    /// `∫_0^1 s²(u) du`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Schur-Cohn stability test: true iff every root of `1 + Σ_j α_j z^j` has
/// modulus greater than `1 + delta`.
pub fn check_stability(coeffs: &[f64], delta: f64) -> Result<bool> {
    if coeffs.iter().any(|c| !c.is_finite()) || !delta.is_finite() || delta < 0.0 {
        return Err(Error::invalid(
            "stability check needs finite coefficients and delta >= 0",
        ));
    }
    // Roots of 1 + Σ α_j ((1+δ) z)^j are the original roots divided by 1+δ.
    let scale = 1.0 + delta;
    let mut a: Vec<f64> = coeffs
        .iter()
        .enumerate()
        .map(|(j, c)| c * scale.powi(j as i32 + 1))
        .collect();
    // Step-down recursion on reflection coefficients.
    while let Some(&k) = a.last() {
        if k.abs() >= 1.0 {
            return Ok(false);
        }
        let m = a.len();
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..m - 1)
            .map(|j| (a[j] - k * a[m - 2 - j]) / denom)
            .collect();
        a = next;
    }
    Ok(true)
}

/// A tvAR(p) model with validated coefficient and variance curves.
#[derive(Debug, Clone)]
pub struct TvARModel {
    alpha: Vec<Curve>,
    sigma2: Curve,
    delta: f64,
}

impl TvARModel {
    pub fn new(alpha: Vec<Curve>, sigma2: Curve, delta: f64) -> Result<Self> {
        for c in alpha.iter().chain(std::iter::once(&sigma2)) {
            c.check_finite()?;
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be finite and >= 0, got {delta}")));
        }
        let model = Self {
            alpha,
            sigma2,
            delta,
        };
        for i in 1..=VALIDATION_GRID {
            let u = i as f64 / VALIDATION_GRID as f64;
            let s2 = model.sigma2.eval(u);
            if !(s2 > 0.0 && s2.is_finite()) {
                return Err(Error::ModelInvariant(format!(
                    "innovation variance must be positive and finite, got {s2} at u={u}"
                )));
            }
            let coeffs = model.coefficients_at(u);
            if !check_stability(&coeffs, delta)? {
                return Err(Error::ModelInvariant(format!(
                    "AR coefficients {coeffs:?} at u={u} have a root inside |z| <= 1 + {delta}"
                )));
            }
        }
        Ok(model)
    }

    /// Constant-coefficient model.
    pub fn stationary(alpha: &[f64], sigma2: f64) -> Result<Self> {
        Self::new(
            alpha.iter().map(|&a| Curve::constant(a)).collect(),
            Curve::constant(sigma2),
            0.0,
        )
    }

    pub fn white_noise(sigma2: f64) -> Result<Self> {
        Self::stationary(&[], sigma2)
    }

    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[Curve] {
        &self.alpha
    }

    pub fn sigma2(&self) -> &Curve {
        &self.sigma2
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn coefficients_at(&self, u: f64) -> Vec<f64> {
        self.alpha.iter().map(|c| c.eval(u)).collect()
    }

    pub fn is_time_invariant(&self) -> bool {
        self.sigma2.is_constant() && self.alpha.iter().all(Curve::is_constant)
    }

    /// `f(u, λ) = σ²(u)/(2π) · |1 + Σ_j α_j(u) e^{iλj}|^{-2}`.
    pub fn spectral_density(&self, u: f64, lambda: f64) -> Result<f64> {
        check_u(u)?;
        if !lambda.is_finite() {
            return Err(Error::invalid("frequency must be finite"));
        }
        Ok(self.sigma2.eval(u) / (2.0 * PI * transfer_sq(&self.coefficients_at(u), lambda)))
    }

    /// `c(u, k) = ∫ f(u, λ) e^{iλk} dλ` by midpoint quadrature on `grid`.
    pub fn tv_covariance(&self, u: f64, k: i64, grid: &FrequencyGrid) -> Result<f64> {
        check_u(u)?;
        let coeffs = self.coefficients_at(u);
        let s2 = self.sigma2.eval(u);
        // f is even in λ so the sine part integrates to zero on the symmetric grid.
        let sum: f64 = grid
            .nodes()
            .map(|l| s2 / (2.0 * PI * transfer_sq(&coeffs, l)) * (l * k as f64).cos())
            .sum();
        Ok(sum * grid.weight())
    }
}

fn check_u(u: f64) -> Result<()> {
    if u > 0.0 && u <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("rescaled time must lie in (0, 1], got {u}")))
    }
}

/// `|1 + Σ_j α_j e^{iλj}|²`.
pub fn transfer_sq(coeffs: &[f64], lambda: f64) -> f64 {
    let (mut re, mut im) = (1.0, 0.0);
    for (j, a) in coeffs.iter().enumerate() {
        let w = lambda * (j + 1) as f64;
        re += a * w.cos();
        im += a * w.sin();
    }
    re * re + im * im
}

/// Serializable model description: `{p, alpha, sigma2, delta, burn_in}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub p: usize,
    pub alpha: Vec<Curve>,
    pub sigma2: Curve,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl ModelSpec {
    pub fn to_model(&self) -> Result<TvARModel> {
        if self.p != self.alpha.len() {
            return Err(Error::invalid(format!(
                "model declares p = {} but lists {} coefficient curves",
                self.p,
                self.alpha.len()
            )));
        }
        TvARModel::new(self.alpha.clone(), self.sigma2.clone(), self.delta)
    }

    pub fn from_model(model: &TvARModel, burn_in: usize) -> Self {
        Self {
            p: model.order(),
            alpha: model.alpha.clone(),
            sigma2: model.sigma2.clone(),
            delta: model.delta,
            burn_in,
        }
    }
}

/// A finite observed or simulated path `x_1..x_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("time series must contain at least one value"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("time series value {} is not finite", i + 1)));
        }
        Ok(Self {
            values,
            seed: None,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One value per line, optional `x` header.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut values = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let s = line.trim();
            if s.is_empty() || (i == 0 && s == "x") {
                continue;
            }
            let v: f64 = s
                .parse()
                .map_err(|_| Error::invalid(format!("line {}: cannot parse {s:?}", i + 1)))?;
            values.push(v);
        }
        Self::new(values)
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "x")?;
        for v in &self.values {
            writeln!(writer, "{v:e}")?;
        }
        Ok(())
    }
}

/// Simulates `x_1..x_n` from `model`. The recursion is warmed up for `burn_in`
/// steps with the coefficients frozen at `u = 1/n`. Output is a pure function
/// of `(model, n, seed, burn_in)`.
pub fn simulate_tvar(model: &TvARModel, n: usize, seed: u64, burn_in: usize) -> Result<TimeSeries> {
    let mut rng = stream_rng(seed, 0);
    let mut ts = simulate_with_rng(model, n, burn_in, &mut rng)?;
    ts.seed = Some(seed);
    Ok(ts)
}

pub fn simulate_with_rng<R: Rng + ?Sized>(
    model: &TvARModel,
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<TimeSeries> {
    if n == 0 {
        return Err(Error::invalid("series length must be at least 1"));
    }
    let p = model.order();
    let nf = n as f64;
    let start_coeffs = model.coefficients_at(1.0 / nf);
    let start_sd = model.sigma2.eval(1.0 / nf).sqrt();

    // history[..p] holds the last p values, most recent first
    let mut history = vec![0.0; p];
    let step = |coeffs: &[f64], sd: f64, history: &mut Vec<f64>, rng: &mut R| -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        let ar: f64 = coeffs.iter().zip(history.iter()).map(|(a, x)| a * x).sum();
        let x = -ar + sd * eps;
        if p > 0 {
            history.rotate_right(1);
            history[0] = x;
        }
        x
    };
    for _ in 0..burn_in {
        step(&start_coeffs, start_sd, &mut history, rng);
    }
    let mut values = Vec::with_capacity(n);
    for t in 1..=n {
        let u = t as f64 / nf;
        let coeffs = model.coefficients_at(u);
        let sd = model.sigma2.eval(u).sqrt();
        values.push(step(&coeffs, sd, &mut history, rng));
    }
    TimeSeries::new(values)
}
