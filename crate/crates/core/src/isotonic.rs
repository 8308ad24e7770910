//! Isotonic regression on cumulative sum diagrams.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::MonotoneStepCurve;

/// Points `(0, 0), (ξ_1, η_1), …, (ξ_m, η_m)` with strictly increasing `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CSDiagram {
    xi: Vec<f64>,
    eta: Vec<f64>,
}

impl CSDiagram {
    /// Builds the diagram from the points after the origin.
    pub fn new(xi: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        if xi.is_empty() {
            return Err(Error::invalid("diagram needs at least one point after the origin"));
        }
        if xi.len() != eta.len() {
            return Err(Error::invalid("diagram abscissae and ordinates differ in length"));
        }
        if xi.iter().chain(&eta).any(|v| !v.is_finite()) {
            return Err(Error::invalid("diagram has non-finite coordinates"));
        }
        let mut prev = 0.0;
        for &x in &xi {
            if x <= prev {
                return Err(Error::invalid("diagram abscissae must be strictly increasing from 0"));
            }
            prev = x;
        }
        Ok(Self { xi, eta })
    }

    /// Cumulative sums of `values` weighted by `weights`.
    pub fn from_values(values: &[f64], weights: &[f64]) -> Result<Self> {
        check_inputs(values, weights)?;
        let (mut x, mut y) = (0.0, 0.0);
        let mut xi = Vec::with_capacity(values.len());
        let mut eta = Vec::with_capacity(values.len());
        for (v, w) in values.iter().zip(weights) {
            x += w;
            y += w * v;
            xi.push(x);
            eta.push(y);
        }
        Self::new(xi, eta)
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Abscissa of point `i`, with `i = 0` the origin.
    pub fn xi(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.xi[i - 1]
        }
    }

    pub fn eta(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.eta[i - 1]
        }
    }
}

/// Nondecreasing fitted values with the `[start, end)` index range of each block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicFit {
    pub values: Vec<f64>,
    pub blocks: Vec<(usize, usize)>,
}

impl IsotonicFit {
    fn from_blocks(blocks: Vec<(usize, usize, f64)>) -> Self {
        let mut values = Vec::new();
        let mut ranges = Vec::with_capacity(blocks.len());
        for (s, e, v) in blocks {
            values.extend(std::iter::repeat_n(v, e - s));
            ranges.push((s, e));
        }
        Self {
            values,
            blocks: ranges,
        }
    }
}

fn check_inputs(values: &[f64], weights: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid("isotonic regression needs at least one value"));
    }
    if values.len() != weights.len() {
        return Err(Error::invalid(format!(
            "values and weights differ in length: {} vs {}",
            values.len(),
            weights.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("isotonic values must be finite"));
    }
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::invalid("isotonic weights must be positive and finite"));
    }
    Ok(())
}

/// Right slopes of the greatest convex minorant, one per diagram segment.
pub fn gcm_slopes(diagram: &CSDiagram) -> Result<IsotonicFit> {
    let m = diagram.len();
    if m == 0 {
        return Err(Error::invalid("diagram needs at least one point after the origin"));
    }
    let slope = |a: usize, b: usize| {
        (diagram.eta(b) - diagram.eta(a)) / (diagram.xi(b) - diagram.xi(a))
    };
    // lower hull vertices as indices into 0..=m
    let mut hull: Vec<usize> = vec![0];
    for i in 1..=m {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if slope(a, b) >= slope(b, i) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let blocks = hull
        .windows(2)
        .map(|w| (w[0], w[1], slope(w[0], w[1])))
        .collect();
    Ok(IsotonicFit::from_blocks(blocks))
}

/// Weighted isotonic regression by pooling adjacent violators.
///
/// This minimizes `Σ_t w_t (log y_t + x_t / y_t)` as well as the weighted
/// squared error over nondecreasing `y`.
pub fn pava_monotone(values: &[f64], weights: &[f64]) -> Result<IsotonicFit> {
    check_inputs(values, weights)?;
    if let Some(v) = values.iter().find(|v| **v < 0.0) {
        return Err(Error::invalid(format!("isotonic values must be nonnegative, got {v}")));
    }
    Ok(pava_unchecked(values, weights))
}

fn pava_unchecked(values: &[f64], weights: &[f64]) -> IsotonicFit {
    // (start, end, weighted sum, total weight)
    let mut stack: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(values.len());
    for (i, (v, w)) in values.iter().zip(weights).enumerate() {
        let mut cur = (i, i + 1, v * w, *w);
        while let Some(&(s, _, sum, wt)) = stack.last() {
            if sum / wt > cur.2 / cur.3 {
                stack.pop();
                cur = (s, cur.1, sum + cur.2, wt + cur.3);
            } else {
                break;
            }
        }
        stack.push(cur);
    }
    IsotonicFit::from_blocks(stack.into_iter().map(|(s, e, sum, w)| (s, e, sum / w)).collect())
}

/// How the bound `[ε², 1/ε²]` enters the variance step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsMode {
    /// Clip the unconstrained fit into the bounds.
    #[default]
    Clip,
    /// Restrict the minorant's slopes to the bounds, keeping its endpoint.
    /// Not an exact minimizer, so alternating fits need not descend.
    ConstrainedSlope,
    /// No bounds; only all-zero blocks are lifted to `ε²`.
    Unbounded,
}

/// Sieve abscissa `t(j)` for knot `j`: the last time point with `t/n ≤ j/k`.
pub fn sieve_abscissa(n: usize, j: usize, k: usize) -> usize {
    n * j / k
}

/// First knot with at least one residual: `⌈k(p+1)/n⌉`.
pub fn first_knot(n: usize, p: usize, k: usize) -> usize {
    (k * (p + 1)).div_ceil(n)
}

/// Monotone step fit of `sq_residuals = (e²_{p+1}, …, e²_n)` on the grid
/// `((j-1)/k, j/k]`, `j = 1..k`.
pub fn sieve_pava(
    sq_residuals: &[f64],
    n: usize,
    p: usize,
    k: usize,
    eps: f64,
    mode: BoundsMode,
) -> Result<MonotoneStepCurve> {
    if n <= p {
        return Err(Error::invalid(format!("sieve needs n > p, got n = {n}, p = {p}")));
    }
    if sq_residuals.len() != n - p {
        return Err(Error::invalid(format!(
            "expected {} squared residuals, got {}",
            n - p,
            sq_residuals.len()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("sieve needs k_n >= 1"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    if let Some(v) = sq_residuals.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("squared residuals must be finite and >= 0, got {v}")));
    }
    let j0 = first_knot(n, p, k);
    if j0 > k {
        return Err(Error::invalid("no sieve knot covers the residual range"));
    }
    let (lo, hi) = (eps * eps, 1.0 / (eps * eps));

    // One diagram point per knot with a nonempty block; knots with empty
    // blocks inherit the next block's slope.
    let mut cum = 0.0;
    let mut xi = Vec::new();
    let mut eta = Vec::new();
    let mut owner = vec![0usize; k + 1];
    let mut zero_block = Vec::new();
    let mut t_prev = p;
    let mut pending = Vec::new();
    for j in j0..=k {
        let t = sieve_abscissa(n, j, k);
        pending.push(j);
        if t <= t_prev {
            continue;
        }
        let block = &sq_residuals[t_prev - p..t - p];
        cum += block.iter().sum::<f64>();
        xi.push((t - p) as f64 / (n - p) as f64);
        eta.push(cum / (n - p) as f64);
        zero_block.push(block.iter().all(|v| *v == 0.0));
        for q in pending.drain(..) {
            owner[q] = xi.len() - 1;
        }
        t_prev = t;
    }
    let diagram = CSDiagram::new(xi, eta)?;
    let fit = gcm_slopes(&diagram)?;
    let mut seg = fit.values.clone();
    for (s, z) in seg.iter_mut().zip(&zero_block) {
        if *z && *s <= 0.0 {
            *s = lo;
        }
    }
    // pooled zero blocks keep their floor; re-pool so the lift stays monotone
    let mut running = f64::NEG_INFINITY;
    for s in seg.iter_mut() {
        running = running.max(*s);
        *s = running;
    }
    let seg = match mode {
        BoundsMode::Clip => seg.iter().map(|s| s.clamp(lo, hi)).collect(),
        BoundsMode::Unbounded => seg,
        BoundsMode::ConstrainedSlope => constrained_slopes(&diagram, lo, hi)
            .map(|mut c| {
                for (v, z) in c.iter_mut().zip(&zero_block) {
                    if *z && *v <= 0.0 {
                        *v = lo;
                    }
                }
                c
            })
            .unwrap_or_else(|| seg.iter().map(|s| s.clamp(lo, hi)).collect()),
    };
    let first = seg[owner[j0]];
    let mut values = vec![first; k];
    for j in j0..=k {
        values[j - 1] = seg[owner[j]];
    }
    let eps = match mode {
        BoundsMode::Unbounded => None,
        _ => Some(eps),
    };
    MonotoneStepCurve::new(values, eps)
}

/// Average slopes of `h(ξ) = max(G(ξ), lo·ξ, T - hi·(1 - ξ))` over each
/// segment, where `G` is the greatest convex minorant and `T` its endpoint.
/// `None` when `T/ξ_m` lies outside `[lo, hi]`.
fn constrained_slopes(diagram: &CSDiagram, lo: f64, hi: f64) -> Option<Vec<f64>> {
    let m = diagram.len();
    let (xm, t) = (diagram.xi(m), diagram.eta(m));
    if !(lo * xm <= t && t <= hi * xm) {
        return None;
    }
    let gcm = gcm_slopes(diagram).ok()?;
    let mut g = vec![0.0; m + 1];
    for i in 1..=m {
        g[i] = g[i - 1] + gcm.values[i - 1] * (diagram.xi(i) - diagram.xi(i - 1));
    }
    let h: Vec<f64> = (0..=m)
        .map(|i| {
            let x = diagram.xi(i);
            g[i].max(lo * x).max(t - hi * (xm - x))
        })
        .collect();
    Some(
        (1..=m)
            .map(|i| ((h[i] - h[i - 1]) / (diagram.xi(i) - diagram.xi(i - 1))).clamp(lo, hi))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Best partition into contiguous blocks with nondecreasing pooled means.
    pub(crate) fn partition_oracle(x: &[f64], w: &[f64]) -> Vec<f64> {
        let m = x.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << (m - 1)) {
            let mut fit = Vec::with_capacity(m);
            let mut start = 0;
            for i in 0..m {
                if i == m - 1 || mask & (1 << i) != 0 {
                    let sw: f64 = w[start..=i].iter().sum();
                    let sx: f64 = (start..=i).map(|s| x[s] * w[s]).sum();
                    fit.extend(std::iter::repeat_n(sx / sw, i + 1 - start));
                    start = i + 1;
                }
            }
            if fit.windows(2).any(|p| p[0] > p[1] + 1e-15) {
                continue;
            }
            let sse: f64 = (0..m).map(|i| w[i] * (x[i] - fit[i]).powi(2)).sum();
            if best.as_ref().is_none_or(|(b, _)| sse < *b) {
                best = Some((sse, fit));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn small_examples() {
        let ones = [1.0; 4];
        assert_eq!(pava_monotone(&[3.0, 1.0, 2.0], &ones[..3]).unwrap().values, vec![2.0; 3]);
        assert_eq!(pava_monotone(&[5.0, 3.0], &ones[..2]).unwrap().values, vec![4.0; 2]);
        assert_eq!(
            pava_monotone(&[1.0, 2.0, 0.5, 4.0], &ones).unwrap().values,
            vec![1.0, 1.25, 1.25, 4.0]
        );
        assert_eq!(
            partition_oracle(&[1.0, 2.0, 0.5, 4.0], &ones),
            vec![1.0, 1.25, 1.25, 4.0]
        );
        let mono = [0.1, 0.2, 0.2, 3.0];
        assert_eq!(pava_monotone(&mono, &ones).unwrap().values, mono.to_vec());
    }

    #[test]
    fn invalid_inputs() {
        assert!(pava_monotone(&[], &[]).is_err());
        assert!(pava_monotone(&[1.0], &[0.0]).is_err());
        assert!(pava_monotone(&[-1.0], &[1.0]).is_err());
        assert!(pava_monotone(&[1.0, 2.0], &[1.0]).is_err());
        assert!(CSDiagram::new(vec![], vec![]).is_err());
        assert!(CSDiagram::new(vec![0.5, 0.5], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn convex_diagram_keeps_raw_slopes() {
        let d = CSDiagram::new(vec![0.2, 0.5, 1.0], vec![0.1, 0.4, 1.5]).unwrap();
        let fit = gcm_slopes(&d).unwrap();
        let raw = [0.5, 1.0, 2.2];
        for (a, b) in fit.values.iter().zip(raw) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(fit.blocks.len(), 3);
    }

    #[test]
    fn gcm_matches_pava() {
        let x = [2.0, 0.3, 1.1, 4.0, 0.0, 2.2, 2.5, 1.9];
        let w = [0.5, 1.0, 2.0, 0.25, 1.0, 3.0, 1.0, 0.7];
        let d = CSDiagram::from_values(&x, &w).unwrap();
        let a = gcm_slopes(&d).unwrap();
        let b = pava_monotone(&x, &w).unwrap();
        for (p, q) in a.values.iter().zip(&b.values) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(a.blocks, b.blocks);
    }

    #[test]
    fn sieve_fine_grid_equals_pava() {
        let x = [0.4, 1.5, 0.2, 0.9, 3.0, 2.0, 2.5, 0.1, 4.0, 5.0];
        let n = x.len();
        let sieve = sieve_pava(&x, n, 0, n, 0.01, BoundsMode::Clip).unwrap();
        let full = pava_monotone(&x, &[1.0; 10]).unwrap();
        for (a, b) in sieve.values().iter().zip(&full.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sieve_constant_and_bounds() {
        let c2 = 1.7;
        let s = sieve_pava(&[c2; 99], 100, 1, 7, 0.2, BoundsMode::Clip).unwrap();
        for v in s.values() {
            assert!((v - c2).abs() < 1e-12);
        }
        let wild = [0.0, 100.0, 0.001, 50.0, 0.0, 0.0, 80.0, 1e-6];
        for mode in [BoundsMode::Clip, BoundsMode::ConstrainedSlope] {
            let s = sieve_pava(&wild, 8, 0, 4, 0.5, mode).unwrap();
            assert!(s.values().iter().all(|v| (0.25..=4.0).contains(v)));
            assert!(s.values().windows(2).all(|w| w[0] <= w[1]));
        }
        assert!(sieve_pava(&[1.0], 1, 0, 1, 1.5, BoundsMode::Clip).is_err());
        assert!(sieve_pava(&[1.0; 3], 4, 1, 0, 0.5, BoundsMode::Clip).is_err());
    }

    #[test]
    fn leading_knots_take_first_value() {
        // n = 10, p = 3, k = 5: knot 1 covers t ≤ 2, knot 2 covers t ∈ {3, 4}
        let res = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let s = sieve_pava(&res, 10, 3, 5, 0.1, BoundsMode::Unbounded).unwrap();
        assert_eq!(first_knot(10, 3, 5), 2);
        assert_eq!(s.values()[0], s.values()[1]);
        assert_eq!(s.values()[1], 1.0);
        assert_eq!(s.values()[2], 2.5);
    }

    #[test]
    fn all_zero_blocks_are_floored() {
        let res = [0.0, 0.0, 0.0, 0.0, 1.0, 2.0];
        let s = sieve_pava(&res, 6, 0, 3, 0.5, BoundsMode::Unbounded).unwrap();
        for (v, e) in s.values().iter().zip([0.25, 0.25, 1.5]) {
            assert!((v - e).abs() < 1e-14);
        }
        assert!(sieve_pava(&[0.0; 6], 6, 0, 3, 0.5, BoundsMode::Clip).is_ok());
    }

    #[test]
    fn empty_blocks_when_knots_exceed_length() {
        let res = [1.0, 3.0, 2.0];
        let s = sieve_pava(&res, 3, 0, 7, 0.1, BoundsMode::Unbounded).unwrap();
        assert_eq!(s.knots(), 7);
        assert!(s.values().windows(2).all(|w| w[0] <= w[1]));
        // t = 1 at u = 1/3 sits in knot 3 of 7
        assert_eq!(s.eval(1.0 / 3.0), 1.0);
        assert_eq!(s.eval(1.0), 2.5);
    }

    #[test]
    fn constrained_slope_preserves_integral() {
        let res = [0.01, 0.02, 0.5, 0.6, 1.0, 1.2, 9.0, 12.0];
        let (n, k, eps) = (8, 4, 0.5);
        let s = sieve_pava(&res, n, 0, k, eps, BoundsMode::ConstrainedSlope).unwrap();
        let mean = res.iter().sum::<f64>() / n as f64;
        assert!((s.integral() - mean).abs() < 1e-12, "{} vs {mean}", s.integral());
        assert!(s.values().iter().all(|v| (0.25..=4.0).contains(v)));
        // clipping loses the integral on the same input
        let c = sieve_pava(&res, n, 0, k, eps, BoundsMode::Clip).unwrap();
        assert!((c.integral() - mean).abs() > 1e-3);
    }

    #[test]
    fn constrained_slope_falls_back_when_mean_out_of_range() {
        let res = [10.0; 8];
        let a = sieve_pava(&res, 8, 0, 4, 0.5, BoundsMode::ConstrainedSlope).unwrap();
        let b = sieve_pava(&res, 8, 0, 4, 0.5, BoundsMode::Clip).unwrap();
        assert_eq!(a, b);
    }
}
