//! Achievable information rates from symbol posteriors, and an exact
//! trellis reference on truncated-memory channel surrogates.

pub mod fba;
pub mod truncated;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::equalizer::SicSchedule;
use crate::error::{Error, Result};

pub use fba::{fba_air, fba_air_frames, fba_posteriors, simulate_truncated, FbaFrame, FbaResult};
pub use truncated::{fit_truncated_model, FitReport, TruncatedModel};

/// Smallest posterior probability entering a logarithm.
pub const POSTERIOR_FLOOR: f64 = 1e-12;

/// Monte-Carlo rate estimate in bits per channel use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Rate clamped below at zero.
    pub rate: f64,
    pub unclamped: f64,
    pub std_error: f64,
    pub n: usize,
    /// Number of true-symbol posteriors that hit [`POSTERIOR_FLOOR`].
    pub floor_hits: usize,
}

impl RateEstimate {
    /// `log2 M + mean(terms)` where each term is `log2 q(x_k | y)`.
    pub fn from_log_terms(terms: &[f64], order: usize, floor_hits: usize) -> Self {
        let n = terms.len();
        let (mean, se) = mean_and_std_error(terms);
        let unclamped = (order as f64).log2() + mean;
        Self {
            rate: unclamped.max(0.0),
            unclamped,
            std_error: se,
            n,
            floor_hits,
        }
    }
}

pub(crate) fn mean_and_std_error(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (0.0, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn check_posteriors(posteriors: ArrayView2<f64>, order: usize) -> Result<()> {
    if posteriors.ncols() != order {
        return Err(Error::InvalidInput(format!(
            "posteriors have {} columns for an alphabet of order {order}",
            posteriors.ncols()
        )));
    }
    for row in posteriors.rows() {
        let sum: f64 = row.sum();
        if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput("posterior row is not a probability vector".into()));
        }
    }
    Ok(())
}

/// `log2 q(x_k | y)` for each symbol, floored at [`POSTERIOR_FLOOR`].
pub fn log_terms(labels: &[usize], posteriors: ArrayView2<f64>) -> (Vec<f64>, usize) {
    let mut hits = 0;
    let terms = labels
        .iter()
        .zip(posteriors.rows())
        .map(|(&x, row)| {
            let p = row[x];
            if p < POSTERIOR_FLOOR {
                hits += 1;
            }
            p.max(POSTERIOR_FLOOR).log2()
        })
        .collect();
    (terms, hits)
}

/// Mismatched-decoding rate `log2 M - (1/n) sum_k -log2 q(x_k | y)`.
pub fn air_from_posteriors(labels: &[usize], posteriors: ArrayView2<f64>, order: usize) -> Result<RateEstimate> {
    if labels.len() != posteriors.nrows() {
        return Err(Error::InvalidInput("labels and posteriors differ in length".into()));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no symbols to evaluate".into()));
    }
    if labels.iter().any(|&l| l >= order) {
        return Err(Error::InvalidInput("label outside the alphabet".into()));
    }
    check_posteriors(posteriors, order)?;
    let (terms, hits) = log_terms(labels, posteriors);
    Ok(RateEstimate::from_log_terms(&terms, order, hits))
}

/// `R_b = I_S * R_sym` in bit/s.
pub fn net_bit_rate(air_bpcu: f64, symbol_rate: f64) -> f64 {
    air_bpcu * symbol_rate
}

/// Per-stage rates and their aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AirResult {
    pub per_stage: Vec<RateEstimate>,
    /// Mean of the per-stage rates, `I_S`.
    pub aggregate: f64,
    pub net_rate_bps: f64,
    /// Standard error of `aggregate`.
    pub mc_std_error: f64,
    pub n_eval: usize,
}

impl AirResult {
    pub fn from_stage_terms(stage_terms: &[(Vec<f64>, usize)], order: usize, symbol_rate: f64) -> Self {
        let per_stage: Vec<RateEstimate> = stage_terms
            .iter()
            .filter(|(t, _)| !t.is_empty())
            .map(|(t, hits)| RateEstimate::from_log_terms(t, order, *hits))
            .collect();
        let s = per_stage.len().max(1) as f64;
        let aggregate = per_stage.iter().map(|r| r.rate).sum::<f64>() / s;
        let var: f64 = per_stage
            .iter()
            .map(|r| if r.std_error.is_finite() { r.std_error * r.std_error } else { 0.0 })
            .sum();
        Self {
            aggregate,
            net_rate_bps: net_bit_rate(aggregate, symbol_rate),
            mc_std_error: var.sqrt() / s,
            n_eval: per_stage.iter().map(|r| r.n).sum(),
            per_stage,
        }
    }
}

/// Splits per-frame posteriors by SIC stage and estimates every stage rate.
pub fn stage_rates(
    labels: &[Vec<usize>],
    posteriors: &[ndarray::Array2<f64>],
    schedule: &SicSchedule,
    order: usize,
    symbol_rate: f64,
) -> Result<AirResult> {
    if labels.len() != posteriors.len() {
        return Err(Error::InvalidInput("frame count mismatch".into()));
    }
    let mut stage_terms = vec![(Vec::new(), 0usize); schedule.stages()];
    for (lab, post) in labels.iter().zip(posteriors) {
        if lab.len() != post.nrows() {
            return Err(Error::InvalidInput("labels and posteriors differ in length".into()));
        }
        check_posteriors(post.view(), order)?;
        for (k, &x) in lab.iter().enumerate() {
            let p = post[(k, x)];
            let entry = &mut stage_terms[schedule.stage_of(k)];
            if p < POSTERIOR_FLOOR {
                entry.1 += 1;
            }
            entry.0.push(p.max(POSTERIOR_FLOOR).log2());
        }
    }
    Ok(AirResult::from_stage_terms(&stage_terms, order, symbol_rate))
}
