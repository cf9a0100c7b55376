//! Exact forward-backward detection on a [`TruncatedModel`] trellis.
//!
//! The state before symbol `k` holds `x_{k-1} .. x_{k-nu}` with `x_{k-1}` as
//! the least significant base-`M` digit. The initial state is unknown and
//! uniformly distributed. Recursions are normalized each step and the
//! normalizers are accumulated in the log domain.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::truncated::TruncatedModel;
use super::{mean_and_std_error, AirResult, RateEstimate, POSTERIOR_FLOOR};
use crate::equalizer::SicSchedule;
use crate::error::{Error, Result};
use crate::repro::split_seed;

/// Largest trellis the detector accepts.
pub const MAX_STATES: u64 = 100_000;

/// Upper bound on stored forward messages (`states x frame length`).
const MAX_STORED_MESSAGES: usize = 1 << 25;

struct Trellis {
    order: usize,
    states: usize,
    /// Noise-free output indexed by `state * order + symbol`.
    means: Vec<f64>,
    inv_two_var: f64,
    log_norm: f64,
}

impl Trellis {
    fn new(model: &TruncatedModel) -> Result<Self> {
        let states = model.states().unwrap_or(u64::MAX);
        if states > MAX_STATES {
            return Err(Error::StateOverflow {
                states,
                limit: MAX_STATES,
            });
        }
        let order = model.alphabet.order();
        let states = states as usize;
        let nu = model.memory();
        let mut window = vec![0; nu + 1];
        let mut means = Vec::with_capacity(states * order);
        for s in 0..states {
            let mut rest = s;
            for slot in window.iter_mut().skip(1) {
                *slot = rest % order;
                rest /= order;
            }
            for x in 0..order {
                window[0] = x;
                means.push(model.mean_output(&window));
            }
        }
        Ok(Self {
            order,
            states,
            means,
            inv_two_var: 0.5 / model.noise_variance,
            log_norm: -0.5 * (2.0 * std::f64::consts::PI * model.noise_variance).ln(),
        })
    }

    fn next(&self, s: usize, x: usize) -> usize {
        if self.states == 1 {
            0
        } else {
            (s * self.order) % self.states + x
        }
    }

    /// Fills `e` with branch likelihoods `exp(lm - max)` for the allowed
    /// symbols (zero elsewhere) and returns `max`.
    fn branch_weights(&self, y: f64, pinned: Option<usize>, e: &mut [f64]) -> f64 {
        let allowed = |x: usize| pinned.is_none_or(|p| p == x);
        let mut max = f64::NEG_INFINITY;
        for (i, (&mu, slot)) in self.means.iter().zip(e.iter_mut()).enumerate() {
            let lm = if allowed(i % self.order) {
                -(y - mu) * (y - mu) * self.inv_two_var
            } else {
                f64::NEG_INFINITY
            };
            *slot = lm;
            max = max.max(lm);
        }
        for v in e.iter_mut() {
            *v = (*v - max).exp();
        }
        max
    }
}

/// Symbol posteriors given `received`, with `pinned[k] = Some(x)` forcing
/// symbol `k` to `x`.
///
/// Returns the `n x M` posteriors and `ln q(y, x_pinned)`, the log density of
/// the observations jointly with the pinned symbols under a uniform prior.
pub fn fba_posteriors(model: &TruncatedModel, received: &[f64], pinned: &[Option<usize>]) -> Result<(Array2<f64>, f64)> {
    let t = Trellis::new(model)?;
    let n = received.len();
    if pinned.len() != n {
        return Err(Error::InvalidInput("pinned mask length differs from the frame".into()));
    }
    if pinned.iter().flatten().any(|&x| x >= t.order) {
        return Err(Error::InvalidInput("pinned symbol outside the alphabet".into()));
    }
    if received.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidInput("non-finite observation".into()));
    }
    if n.saturating_mul(t.states) > MAX_STORED_MESSAGES {
        return Err(Error::InvalidInput(format!(
            "frame of {n} symbols is too long for a {}-state trellis; split it into frames",
            t.states
        )));
    }
    let (m, ns) = (t.order, t.states);
    let prior = 1.0 / m as f64;
    let mut e = vec![0.0; ns * m];

    let mut alphas = vec![0.0; (n + 1) * ns];
    alphas[..ns].fill(1.0 / ns as f64);
    let mut log_evidence = 0.0;
    for k in 0..n {
        let max = t.branch_weights(received[k], pinned[k], &mut e);
        let w = if pinned[k].is_some() { 1.0 } else { prior };
        let (prev, next) = alphas[k * ns..(k + 2) * ns].split_at_mut(ns);
        for s in 0..ns {
            let a = prev[s];
            if a == 0.0 {
                continue;
            }
            for x in 0..m {
                next[t.next(s, x)] += a * e[s * m + x] * w;
            }
        }
        let z: f64 = next.iter().sum();
        if !(z > 0.0) {
            return Err(Error::InvalidInput(format!("observation {k} has zero likelihood")));
        }
        next.iter_mut().for_each(|v| *v /= z);
        log_evidence += z.ln() + max + t.log_norm;
    }

    let mut post = Array2::zeros((n, m));
    let mut beta = vec![1.0; ns];
    let mut beta_prev = vec![0.0; ns];
    for k in (0..n).rev() {
        t.branch_weights(received[k], pinned[k], &mut e);
        let alpha = &alphas[k * ns..(k + 1) * ns];
        let mut row = vec![0.0; m];
        for s in 0..ns {
            let mut acc = 0.0;
            for x in 0..m {
                let v = e[s * m + x] * beta[t.next(s, x)];
                acc += v;
                row[x] += alpha[s] * v;
            }
            beta_prev[s] = acc;
        }
        let total: f64 = row.iter().sum();
        for (x, v) in row.iter().enumerate() {
            post[(k, x)] = v / total;
        }
        let z: f64 = beta_prev.iter().sum();
        beta_prev.iter_mut().for_each(|v| *v /= z);
        std::mem::swap(&mut beta, &mut beta_prev);
    }
    Ok((post, log_evidence))
}

/// One realization of the truncated channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FbaFrame {
    /// `initial[i]` is `x_{-1-i}`, the symbols preceding the frame.
    pub initial: Vec<usize>,
    pub symbols: Vec<usize>,
    pub received: Vec<f64>,
}

pub fn simulate_truncated<R: Rng + ?Sized>(model: &TruncatedModel, n: usize, rng: &mut R) -> FbaFrame {
    let m = model.alphabet.order();
    let nu = model.memory();
    let initial: Vec<usize> = (0..nu).map(|_| rng.random_range(0..m)).collect();
    let symbols: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    let sigma = model.noise_variance.sqrt();
    let mut window = vec![0; nu + 1];
    let received = (0..n)
        .map(|k| {
            for (j, slot) in window.iter_mut().enumerate() {
                *slot = if j <= k { symbols[k - j] } else { initial[j - k - 1] };
            }
            let noise: f64 = rng.sample(StandardNormal);
            model.mean_output(&window) + sigma * noise
        })
        .collect();
    FbaFrame {
        initial,
        symbols,
        received,
    }
}

/// Per-stage `log2 q(x_k | y, lower stages)` terms and the block rate of one
/// frame.
pub struct FrameRates {
    pub stage_terms: Vec<Vec<f64>>,
    pub floor_hits: Vec<usize>,
    /// `ln q(y)` and `ln q(y | x)`.
    pub log_evidence: f64,
    pub log_likelihood: f64,
}

impl FrameRates {
    /// `(1/n) [log2 q(y | x) - log2 q(y)]`.
    pub fn block_rate(&self, n: usize) -> f64 {
        (self.log_likelihood - self.log_evidence) / (n as f64 * std::f64::consts::LN_2)
    }
}

pub fn frame_rates(model: &TruncatedModel, frame: &FbaFrame, schedule: &SicSchedule) -> Result<FrameRates> {
    let n = frame.symbols.len();
    let stages = schedule.stages();
    let mut stage_terms = vec![Vec::new(); stages];
    let mut floor_hits = vec![0; stages];
    let mut log_evidence = 0.0;
    for stage in 0..stages.min(n) {
        let pinned: Vec<Option<usize>> = (0..n)
            .map(|k| (schedule.stage_of(k) < stage).then_some(frame.symbols[k]))
            .collect();
        let (post, lev) = fba_posteriors(model, &frame.received, &pinned)?;
        if stage == 0 {
            log_evidence = lev;
        }
        for k in schedule.members(stage, n) {
            let p = post[(k, frame.symbols[k])];
            if p < POSTERIOR_FLOOR {
                floor_hits[stage] += 1;
            }
            stage_terms[stage].push(p.max(POSTERIOR_FLOOR).log2());
        }
    }
    let all: Vec<Option<usize>> = frame.symbols.iter().map(|&x| Some(x)).collect();
    let (_, log_likelihood) = fba_posteriors(model, &frame.received, &all)?;
    Ok(FrameRates {
        stage_terms,
        floor_hits,
        log_evidence,
        log_likelihood,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbaResult {
    /// Symbol-wise stage rates; `net_rate_bps` is per unit symbol rate.
    pub air: AirResult,
    /// Joint-detection rate, estimated per frame.
    pub jdd: RateEstimate,
}

/// Simulates `frames` independent frames of `frame_len` symbols and
/// evaluates the `stages`-stage rates and the joint-detection rate.
pub fn fba_air_frames(
    model: &TruncatedModel,
    stages: usize,
    frame_len: usize,
    frames: usize,
    seed: u64,
) -> Result<FbaResult> {
    let schedule = SicSchedule::new(stages)?;
    let order = model.alphabet.order();
    if frame_len == 0 || frames == 0 {
        return Err(Error::InvalidInput("need at least one symbol".into()));
    }
    Trellis::new(model)?;
    let results: Vec<FrameRates> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, f as u64));
            let frame = simulate_truncated(model, frame_len, &mut rng);
            frame_rates(model, &frame, &schedule)
        })
        .collect::<Result<_>>()?;
    let mut stage_terms: Vec<(Vec<f64>, usize)> = vec![(Vec::new(), 0); stages];
    let mut block = Vec::with_capacity(frames);
    for r in &results {
        for (s, (terms, hits)) in r.stage_terms.iter().zip(&r.floor_hits).enumerate() {
            stage_terms[s].0.extend(terms);
            stage_terms[s].1 += hits;
        }
        block.push(r.block_rate(frame_len));
    }
    let (mean, se) = mean_and_std_error(&block);
    Ok(FbaResult {
        air: AirResult::from_stage_terms(&stage_terms, order, 1.0),
        jdd: RateEstimate {
            rate: mean.max(0.0),
            unclamped: mean,
            std_error: se,
            n: frames * frame_len,
            floor_hits: 0,
        },
    })
}

/// [`fba_air_frames`] over `n` symbols, split into the fewest frames that
/// fit the message store.
pub fn fba_air(model: &TruncatedModel, stages: usize, n: usize, seed: u64) -> Result<FbaResult> {
    let states = Trellis::new(model)?.states;
    let cap = (MAX_STORED_MESSAGES / states).max(1);
    let frames = n.div_ceil(cap).max(1);
    fba_air_frames(model, stages, n.div_ceil(frames), frames, seed)
}
