//! Finite-memory surrogate `y_k = |sum_m h_m x_{k-m} + c|^2 + n_k` of the
//! link, on which exact trellis detection is tractable.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::field_at_symbol_instants;
use crate::config::LinkConfig;
use crate::error::{Error, Result};
use crate::transmitter::{build_alphabet, Constellation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedModel {
    /// `h_0 .. h_nu`; `h_0` multiplies the current symbol.
    pub taps: Vec<Complex64>,
    pub offset: Complex64,
    pub noise_variance: f64,
    pub alphabet: Constellation,
}

impl TruncatedModel {
    pub fn new(taps: Vec<Complex64>, offset: Complex64, noise_variance: f64, alphabet: Constellation) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidInput("truncated model needs at least one tap".into()));
        }
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidInput("noise variance must be positive".into()));
        }
        if taps.iter().chain([&offset]).any(|t| !(t.re.is_finite() && t.im.is_finite())) {
            return Err(Error::InvalidInput("non-finite tap".into()));
        }
        Ok(Self {
            taps,
            offset,
            noise_variance,
            alphabet,
        })
    }

    /// Channel memory `nu` in symbols.
    pub fn memory(&self) -> usize {
        self.taps.len() - 1
    }

    /// `M^nu`, or `None` on overflow.
    pub fn states(&self) -> Option<u64> {
        (self.alphabet.order() as u64).checked_pow(self.memory() as u32)
    }

    /// Noise-free output for `window = [x_k, x_{k-1}, .., x_{k-nu}]` (alphabet indices).
    pub fn mean_output(&self, window: &[usize]) -> f64 {
        let mut field = self.offset;
        for (h, &x) in self.taps.iter().zip(window) {
            field += h * self.alphabet.level(x);
        }
        field.norm_sqr()
    }
}

/// Quality of a least-squares tap fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Residual field energy relative to the fitted field energy.
    pub relative_residual: f64,
    /// True if ridge regularization was needed.
    pub regularized: bool,
    /// Symbols by which the model output lags the field instant.
    pub delay: usize,
}

/// Solves the symmetric positive-definite system `a x = b` in place via Cholesky.
fn cholesky_solve(a: &[f64], p: usize, rhs: &mut [Vec<f64>]) -> Option<()> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= 1e-13 * a[i * p + i].abs().max(f64::MIN_POSITIVE) {
                    return None;
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    for b in rhs.iter_mut() {
        for i in 0..p {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * p + k] * b[k];
            }
            b[i] = s / l[i * p + i];
        }
        for i in (0..p).rev() {
            let mut s = b[i];
            for k in i + 1..p {
                s -= l[k * p + i] * b[k];
            }
            b[i] = s / l[i * p + i];
        }
    }
    Some(())
}

/// Least-squares fit of `field_j ~ sum_m h_m x_{j+d-m} + c` with `nu + 1`
/// taps centred on the current symbol (`d = nu / 2`).
///
/// `samples` pairs each transmitted level with the field at its symbol
/// instant; the returned model carries `scale` (square root of the
/// responsivity) so its output is a photocurrent.
pub fn fit_truncated_model(
    samples: &[(f64, Complex64)],
    memory: usize,
    alphabet: Constellation,
    scale: f64,
    noise_variance: f64,
) -> Result<(TruncatedModel, FitReport)> {
    let n = samples.len();
    let p = memory + 2;
    if n < 4 * p {
        return Err(Error::InvalidInput(format!("{n} samples are too few to fit {p} coefficients")));
    }
    let d = memory / 2;
    let levels: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let regressors = |j: usize, r: &mut [f64]| {
        for m in 0..=memory {
            r[m] = levels[j + d - m];
        }
        r[memory + 1] = 1.0;
    };
    let rows = memory - d..n - d;
    let mut a = vec![0.0; p * p];
    let mut b = vec![vec![0.0; p]; 2];
    let mut r = vec![0.0; p];
    for j in rows.clone() {
        regressors(j, &mut r);
        let f = samples[j].1;
        for i in 0..p {
            for k in 0..p {
                a[i * p + k] += r[i] * r[k];
            }
            b[0][i] += r[i] * f.re;
            b[1][i] += r[i] * f.im;
        }
    }
    let mut solution = b.clone();
    let mut regularized = false;
    if cholesky_solve(&a, p, &mut solution).is_none() {
        regularized = true;
        let ridge = 1e-9 * (0..p).map(|i| a[i * p + i]).sum::<f64>() / p as f64;
        for i in 0..p {
            a[i * p + i] += ridge.max(f64::MIN_POSITIVE);
        }
        solution = b;
        cholesky_solve(&a, p, &mut solution)
            .ok_or_else(|| Error::InvalidInput("tap fit is singular".into()))?;
    }
    let coef: Vec<Complex64> = (0..p).map(|i| Complex64::new(solution[0][i], solution[1][i])).collect();

    let (mut resid, mut energy) = (0.0, 0.0);
    for j in rows {
        regressors(j, &mut r);
        let model: Complex64 = r.iter().zip(&coef).map(|(x, h)| h * x).sum();
        resid += (samples[j].1 - model).norm_sqr();
        energy += model.norm_sqr();
    }
    let taps = coef[..=memory].iter().map(|h| h * scale).collect();
    let offset = coef[memory + 1] * scale;
    let model = TruncatedModel::new(taps, offset, noise_variance, alphabet)?;
    Ok((
        model,
        FitReport {
            relative_residual: resid / energy.max(f64::MIN_POSITIVE),
            regularized,
            delay: d,
        },
    ))
}

impl TruncatedModel {
    /// Fits a surrogate to the noise-free field of `config` over `n_symbols`
    /// random symbols, with the receiver noise variance at 2 samples/symbol.
    pub fn from_link(config: &LinkConfig, memory: usize, n_symbols: usize, seed: u64) -> Result<(Self, FitReport)> {
        use rand::SeedableRng;
        let alphabet = build_alphabet(config.order)?;
        let guard = config.guard_symbols();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let symbols = crate::transmitter::draw_symbols(config.order, n_symbols + 2 * guard, &mut rng);
        let samples = field_at_symbol_instants(&symbols, config)?;
        let sigma2 = crate::channel::rx_noise_variance(&config.frontend, config.symbol_rate_baud * config.sps_rx as f64);
        fit_truncated_model(
            &samples,
            memory,
            alphabet,
            config.frontend.responsivity_a_per_w.sqrt(),
            sigma2,
        )
    }
}
