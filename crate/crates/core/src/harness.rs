//! Reproducible experiment drivers and their CSV/JSON reports.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_monotone_tvar, rho2_inverse_error, rho2_variance_error, FitConfig};
use crate::likelihood::{conditional_gap, SpectrumField, DEFAULT_U_GRID};
use crate::numeric::{median, ols_slope, stream_rng};
use crate::process::{simulate_with_rng, Curve, ModelSpec, TvARModel};
use crate::spectral::FrequencyGrid;

/// Minimum share of successful replications per `n`.
pub const MIN_SUCCESS_RATE: f64 = 0.8;

/// RNG stream for replication `rep` at position `n_index` of an `n` list.
pub fn replication_stream(n_index: usize, rep: usize) -> u64 {
    ((n_index as u64) << 32) | rep as u64
}

/// `p = 1`, `α ≡ 0.5`, `σ²(u) = 1 + 1(u > 0.5)`.
pub fn default_rate_model() -> ModelSpec {
    ModelSpec {
        p: 1,
        alpha: vec![Curve::constant(0.5)],
        sigma2: Curve::MonotoneStep(
            crate::process::MonotoneStepCurve::new(vec![1.0, 2.0], None)
                .expect("valid default variance"),
        ),
        delta: 0.0,
        burn_in: crate::process::DEFAULT_BURN_IN,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateStudySpec {
    pub model: ModelSpec,
    pub n_list: Vec<usize>,
    pub replications: usize,
    /// Template; unset `k_n` and `eps` follow the defaults for each `n`.
    pub fit: FitConfig,
    pub seed: u64,
}

impl RateStudySpec {
    pub fn default_with(n_list: Vec<usize>, replications: usize, seed: u64) -> Self {
        Self {
            model: default_rate_model(),
            n_list,
            replications,
            fit: FitConfig::new(1),
            seed,
        }
    }

    fn validate(&self) -> Result<TvARModel> {
        if self.n_list.len() < 3 || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n list must be strictly increasing with at least 3 values"));
        }
        if self.replications < 10 {
            return Err(Error::invalid("rate study needs at least 10 replications"));
        }
        if self.fit.p != self.model.p {
            return Err(Error::invalid("fit order must match the model order"));
        }
        self.model.to_model()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub k_n: usize,
    pub eps: f64,
    pub successes: usize,
    pub failures: usize,
    pub median_spectrum_error: f64,
    pub median_variance_error: f64,
    pub median_alpha_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log median ρ₂(1/f̂, 1/f)` on `log n`.
    pub spectrum_slope: f64,
    /// Same for `ρ₂(1/σ̂², 1/σ₀²)`.
    pub variance_slope: f64,
}

impl RateReport {
    pub fn medians_decrease(&self) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].median_spectrum_error < w[0].median_spectrum_error
                && w[1].median_variance_error < w[0].median_variance_error
        })
    }
}

struct RepOutcome {
    spectrum: f64,
    variance: f64,
    alpha: f64,
}

pub fn rate_study(spec: &RateStudySpec) -> Result<RateReport> {
    let model = spec.validate()?;
    let truth = SpectrumField::from_model(&model);
    let grid = FrequencyGrid::default();
    let mut rows = Vec::with_capacity(spec.n_list.len());
    for (ni, &n) in spec.n_list.iter().enumerate() {
        let (k_n, eps) = spec.fit.resolve(n)?;
        let cfg = FitConfig {
            k_n: Some(k_n),
            eps: Some(eps),
            ..spec.fit.clone()
        };
        let outcomes: Vec<Result<RepOutcome>> = (0..spec.replications)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(spec.seed, replication_stream(ni, r));
                let x = simulate_with_rng(&model, n, spec.model.burn_in, &mut rng)?;
                let fit = fit_monotone_tvar(x.values(), &cfg)?;
                let s2 = Curve::MonotoneStep(fit.sigma2_hat.clone());
                let est = SpectrumField::ar(
                    fit.alpha_hat.iter().map(|&a| Curve::constant(a)).collect(),
                    s2.clone(),
                )?;
                let alpha_true = model.coefficients_at(0.5);
                Ok(RepOutcome {
                    spectrum: rho2_inverse_error(&est, &truth, &grid, DEFAULT_U_GRID)?,
                    variance: rho2_variance_error(&s2, model.sigma2(), DEFAULT_U_GRID)?,
                    alpha: fit
                        .alpha_hat
                        .iter()
                        .zip(&alpha_true)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt(),
                })
            })
            .collect();
        let ok: Vec<&RepOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        let failures = outcomes.len() - ok.len();
        if (ok.len() as f64) < MIN_SUCCESS_RATE * spec.replications as f64 {
            let first = outcomes.into_iter().find_map(|o| o.err());
            return Err(first.unwrap_or_else(|| Error::invalid("too many failed replications")));
        }
        let med = |f: fn(&RepOutcome) -> f64| median(&ok.iter().map(|o| f(o)).collect::<Vec<_>>());
        rows.push(RateRow {
            n,
            k_n,
            eps,
            successes: ok.len(),
            failures,
            median_spectrum_error: med(|o| o.spectrum),
            median_variance_error: med(|o| o.variance),
            median_alpha_error: med(|o| o.alpha),
        });
    }
    let logn: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let slope = |f: fn(&RateRow) -> f64| {
        ols_slope(&logn, &rows.iter().map(|r| f(r).ln()).collect::<Vec<_>>())
    };
    Ok(RateReport {
        spectrum_slope: slope(|r| r.median_spectrum_error),
        variance_slope: slope(|r| r.median_variance_error),
        rows,
    })
}

/// A candidate `(α, σ²)` at which the two contrasts are compared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub alpha: Vec<f64>,
    pub sigma2: Curve,
}

/// The truth plus three fixed alternatives of the same order.
pub fn default_candidates(model: &TvARModel) -> Result<Vec<Candidate>> {
    if !model.alpha().iter().all(Curve::is_constant) {
        return Err(Error::invalid("candidate comparison needs constant AR coefficients"));
    }
    let p = model.order();
    let truth = model.coefficients_at(0.5);
    let shrunk: Vec<f64> = truth.iter().map(|a| 0.5 * a).collect();
    Ok(vec![
        Candidate {
            alpha: truth.clone(),
            sigma2: model.sigma2().clone(),
        },
        Candidate {
            alpha: truth,
            sigma2: Curve::constant(1.0),
        },
        Candidate {
            alpha: vec![0.0; p],
            sigma2: model.sigma2().clone(),
        },
        Candidate {
            alpha: shrunk,
            sigma2: Curve::sampled(vec![0.5, 1.0, 1.5, 3.0])?,
        },
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub n: usize,
    pub median_max_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
}

impl EquivalenceReport {
    /// Median gap at the largest `n` is below half of that at the smallest.
    pub fn decays(&self) -> bool {
        let (first, last) = (&self.rows[0], &self.rows[self.rows.len() - 1]);
        last.median_max_gap < 0.5 * first.median_max_gap
    }
}

/// Median over replications of `max_c |½(L̃_n - log 2π) - L_n|` over candidates `c`.
pub fn equivalence_decay(
    model: &TvARModel,
    candidates: &[Candidate],
    n_list: &[usize],
    replications: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("n list must be nonempty and strictly increasing"));
    }
    if replications == 0 || candidates.is_empty() {
        return Err(Error::invalid("need at least one replication and one candidate"));
    }
    let grid = FrequencyGrid::default();
    let mut rows = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        let gaps: Vec<f64> = (0..replications)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut rng = stream_rng(seed, replication_stream(ni, r));
                let x = simulate_with_rng(model, n, crate::process::DEFAULT_BURN_IN, &mut rng)?;
                let mut worst = 0.0f64;
                for c in candidates {
                    worst = worst.max(conditional_gap(x.values(), &c.alpha, &c.sigma2, &grid)?);
                }
                Ok(worst)
            })
            .collect::<Result<_>>()?;
        rows.push(EquivalenceRow {
            n,
            median_max_gap: median(&gaps),
        });
    }
    Ok(EquivalenceReport { rows })
}

/// Writes rows as CSV with a header.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_csv`].
pub fn read_csv<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(reader);
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

pub fn write_json<T: Serialize, W: Write>(value: &T, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, value)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned, R: Read>(reader: R) -> Result<T> {
    Ok(serde_json::from_reader(reader)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::espec::TailRow;

    #[test]
    fn spec_validation() {
        let mut spec = RateStudySpec::default_with(vec![64, 128], 10, 1);
        assert!(rate_study(&spec).is_err());
        spec.n_list = vec![64, 128, 256];
        spec.replications = 5;
        assert!(rate_study(&spec).is_err());
    }

    #[test]
    fn small_rate_study_is_deterministic() {
        let spec = RateStudySpec::default_with(vec![128, 256, 512], 10, 7);
        let a = rate_study(&spec).unwrap();
        let b = rate_study(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.rows.iter().all(|r| r.failures == 0));
        assert!(a.spectrum_slope.is_finite());
    }

    #[test]
    fn equivalence_small() {
        let model = default_rate_model().to_model().unwrap();
        let c = default_candidates(&model).unwrap();
        let r = equivalence_decay(&model, &c, &[128, 512], 8, 3).unwrap();
        assert!(r.decays());
        assert_eq!(r, equivalence_decay(&model, &c, &[128, 512], 8, 3).unwrap());
    }

    #[test]
    fn constant_candidate_gap_is_boundary_sized() {
        // constant σ² leaves only the O(1/n) boundary terms
        let model = TvARModel::stationary(&[0.5], 1.5).unwrap();
        let cand = [Candidate {
            alpha: vec![0.5],
            sigma2: Curve::constant(1.5),
        }];
        let r = equivalence_decay(&model, &cand, &[256, 1024], 10, 4).unwrap();
        for row in &r.rows {
            assert!(row.median_max_gap * row.n as f64 <= 10.0, "{row:?}");
        }
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![
            RateRow {
                n: 256,
                k_n: 3,
                eps: 0.7096,
                successes: 10,
                failures: 0,
                median_spectrum_error: 0.1234567890123,
                median_variance_error: 1e-17,
                median_alpha_error: 0.3,
            },
            RateRow {
                n: 512,
                k_n: 3,
                eps: 1.0 / 3.0,
                successes: 9,
                failures: 1,
                median_spectrum_error: f64::MIN_POSITIVE,
                median_variance_error: 2.5,
                median_alpha_error: 0.1,
            },
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let back: Vec<RateRow> = read_csv(&buf[..]).unwrap();
        assert_eq!(back, rows);

        let tail = vec![TailRow {
            eta: 0.5,
            exceedances: 3,
            empirical: 3e-5,
            upper_confidence: 1.0 / 7.0,
            bernstein_bound: 1.9,
            exponential_bound: 5.2,
        }];
        let mut buf = Vec::new();
        write_csv(&tail, &mut buf).unwrap();
        assert_eq!(read_csv::<TailRow, _>(&buf[..]).unwrap(), tail);

        let p = vec![EquivalenceRow {
            n: 2048,
            median_max_gap: 0.000123,
        }];
        let mut buf = Vec::new();
        write_csv(&p, &mut buf).unwrap();
        assert_eq!(read_csv::<EquivalenceRow, _>(&buf[..]).unwrap(), p);
    }

    #[test]
    fn json_round_trip() {
        let spec = RateStudySpec::default_with(vec![256, 512, 1024], 12, 99);
        let mut buf = Vec::new();
        write_json(&spec, &mut buf).unwrap();
        let back: RateStudySpec = read_json(&buf[..]).unwrap();
        assert_eq!(back.n_list, spec.n_list);
        assert_eq!(back.fit, spec.fit);
        assert_eq!(back.model.to_model().unwrap().sigma2().eval(0.75), 2.0);
    }
}
