//! Sampled waveforms and the spectral toolkit shared by the DSP chain.
//!
//! Transforms use the `exp(-j 2 pi k n / N)` forward kernel without scaling;
//! the inverse carries the `1/N`. All convolutions in the crate are circular,
//! so frames are treated as one period of a periodic signal.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical meaning of the sample values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    /// Optical field envelope in sqrt(W).
    OpticalField,
    /// Photocurrent in A.
    ElectricalCurrent,
    Dimensionless,
}

/// Uniformly sampled complex baseband signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<Complex64>,
    sample_rate: f64,
    unit: Unit,
}

impl Waveform {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, unit: Unit) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("waveform has no samples".into()));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            unit,
        })
    }

    pub fn from_real(samples: &[f64], sample_rate: f64, unit: Unit) -> Result<Self> {
        Self::new(
            samples.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            sample_rate,
            unit,
        )
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        self.energy() / self.samples.len() as f64
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.re).collect()
    }

    pub(crate) fn with_samples(&self, samples: Vec<Complex64>, unit: Unit) -> Self {
        debug_assert!(!samples.is_empty());
        Self {
            samples,
            sample_rate: self.sample_rate,
            unit,
        }
    }

    pub(crate) fn require_unit(&self, op: &'static str, expected: Unit) -> Result<()> {
        if self.unit == expected {
            Ok(())
        } else {
            Err(Error::UnitMismatch {
                op,
                expected,
                got: self.unit,
            })
        }
    }
}

/// Sign convention of the forward transform kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convention {
    /// `X[k] = sum_n x[n] exp(-j 2 pi k n / N)`.
    NegativeExponent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub bin_spacing: f64,
    /// Sample rate of the time-domain waveform.
    pub sample_rate: f64,
    pub convention: Convention,
    /// Unit of the time-domain waveform this spectrum came from.
    pub unit: Unit,
}

impl Spectrum {
    /// Frequency in Hz of every bin, negative frequencies in the upper half.
    pub fn frequencies(&self) -> Vec<f64> {
        bin_frequencies(self.bins.len(), self.sample_rate)
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

pub(crate) fn fft_in_place(buf: &mut [Complex64]) {
    forward_plan(buf.len()).process(buf);
}

/// Inverse transform including the `1/N` factor.
pub(crate) fn ifft_in_place(buf: &mut [Complex64]) {
    inverse_plan(buf.len()).process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// FFT bin frequencies for `n` samples at `sample_rate`.
///
/// Bins `k >= ceil(n/2)` map to `(k - n) * df`; for even `n` the Nyquist bin
/// is reported as `-fs/2`.
pub fn bin_frequencies(n: usize, sample_rate: f64) -> Vec<f64> {
    let df = sample_rate / n as f64;
    let half = n.div_ceil(2);
    (0..n)
        .map(|k| {
            if k < half {
                k as f64 * df
            } else {
                (k as f64 - n as f64) * df
            }
        })
        .collect()
}

pub fn fft(w: &Waveform) -> Spectrum {
    let mut bins = w.samples.clone();
    fft_in_place(&mut bins);
    Spectrum {
        bin_spacing: w.sample_rate / bins.len() as f64,
        sample_rate: w.sample_rate,
        bins,
        convention: Convention::NegativeExponent,
        unit: w.unit,
    }
}

pub fn ifft(s: &Spectrum) -> Result<Waveform> {
    let mut samples = s.bins.clone();
    if samples.is_empty() {
        return Err(Error::InvalidInput("spectrum has no bins".into()));
    }
    ifft_in_place(&mut samples);
    Waveform::new(samples, s.sample_rate, s.unit)
}

/// Multiplies the spectrum of `w` by `h(f)` evaluated on the FFT grid.
pub fn apply_filter<H>(w: &Waveform, h: H) -> Waveform
where
    H: Fn(f64) -> Complex64,
{
    let mut buf = w.samples.clone();
    fft_in_place(&mut buf);
    for (bin, f) in buf.iter_mut().zip(bin_frequencies(w.len(), w.sample_rate)) {
        *bin *= h(f);
    }
    ifft_in_place(&mut buf);
    w.with_samples(buf, w.unit)
}

/// Relative tolerance used by [`resample`] when approximating the rate ratio.
pub const DEFAULT_RATIO_TOLERANCE: f64 = 1e-9;
const MAX_RATIO_DENOMINATOR: u64 = 1 << 20;

/// Best rational approximation `p/q` of `x > 0` with `q <= max_den` by
/// continued fractions, if one lies within `rel_tol`.
pub(crate) fn rational_approximation(x: f64, max_den: u64, rel_tol: f64) -> Option<(u64, u64)> {
    if !(x.is_finite() && x > 0.0) {
        return None;
    }
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut rem = x;
    for _ in 0..64 {
        let a = rem.floor();
        if a > u32::MAX as f64 {
            break;
        }
        let a = a as u64;
        let p2 = a.checked_mul(p1)?.checked_add(p0)?;
        let q2 = a.checked_mul(q1)?.checked_add(q0)?;
        if q2 > max_den {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        if ((p1 as f64 / q1 as f64) - x).abs() <= rel_tol * x {
            return Some((p1, q1));
        }
        let frac = rem - a as f64;
        if frac <= 0.0 {
            break;
        }
        rem = 1.0 / frac;
    }
    None
}

/// Band-limited resampling by spectral truncation or zero padding.
///
/// When decimating, spectral content beyond the new Nyquist frequency is
/// discarded, which acts as an ideal anti-aliasing filter. `target_rate ==
/// sample_rate` returns the input unchanged.
pub fn resample(w: &Waveform, target_rate: f64) -> Result<Waveform> {
    resample_with_tolerance(w, target_rate, DEFAULT_RATIO_TOLERANCE)
}

pub fn resample_with_tolerance(w: &Waveform, target_rate: f64, tolerance: f64) -> Result<Waveform> {
    if !(target_rate.is_finite() && target_rate > 0.0) {
        return Err(Error::InvalidInput(format!(
            "target rate must be positive, got {target_rate}"
        )));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let ratio = target_rate / w.sample_rate;
    let (p, q) = rational_approximation(ratio, MAX_RATIO_DENOMINATOR, tolerance).ok_or(
        Error::IncommensurateRates {
            source_rate: w.sample_rate,
            target_rate,
            tolerance,
        },
    )?;
    let n_in = w.len();
    let n_out = ((n_in as f64 * p as f64 / q as f64).round() as usize).max(1);
    if n_out == n_in {
        return Waveform::new(w.samples.clone(), target_rate, w.unit);
    }

    let mut spec = w.samples.clone();
    fft_in_place(&mut spec);
    let mut out = vec![Complex64::new(0.0, 0.0); n_out];
    let m = n_in.min(n_out);
    let n_pos = m.div_ceil(2);
    let n_neg = m - n_pos - usize::from(m.is_multiple_of(2));
    out[..n_pos].copy_from_slice(&spec[..n_pos]);
    for j in 1..=n_neg {
        out[n_out - j] = spec[n_in - j];
    }
    if m.is_multiple_of(2) {
        let nyq = m / 2;
        if n_out < n_in {
            out[nyq] = spec[nyq] + spec[n_in - nyq];
        } else {
            let half = spec[nyq] * 0.5;
            out[nyq] = half;
            out[n_out - nyq] = half;
        }
    }
    // The inverse normalizes by n_out; rescale so amplitudes are preserved.
    ifft_in_place(&mut out);
    let gain = n_out as f64 / n_in as f64;
    for v in out.iter_mut() {
        *v *= gain;
    }
    Waveform::new(out, target_rate, w.unit)
}
