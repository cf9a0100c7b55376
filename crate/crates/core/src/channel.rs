//! Fiber dispersion, photodetection, thermal noise and the receiver front end.
//!
//! The received current is `h_rx * (|x * h|^2 + n)`: noise enters before the
//! receiver filter, and the filtered current is resampled to the receiver rate.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::LinkConfig;
use crate::error::{Error, Result};
use crate::signal::{apply_filter, resample, Unit, Waveform};
use crate::transmitter::{build_alphabet, diff_precode, modulate, PulseShape};

const PS2: f64 = 1e-24;
const PS3: f64 = 1e-36;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberParams {
    pub length_km: f64,
    pub beta2_ps2_per_km: f64,
    pub beta3_ps3_per_km: f64,
}

impl FiberParams {
    /// 10 km of SSMF in the O-band.
    pub fn o_band_ssmf() -> Self {
        Self {
            length_km: 10.0,
            beta2_ps2_per_km: -2.0,
            beta3_ps3_per_km: 0.07,
        }
    }

    pub fn back_to_back() -> Self {
        Self {
            length_km: 0.0,
            ..Self::o_band_ssmf()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_km >= 0.0 && self.length_km.is_finite()) {
            return Err(Error::Config(format!(
                "fiber length must be >= 0 km, got {}",
                self.length_km
            )));
        }
        if !(self.beta2_ps2_per_km.is_finite() && self.beta3_ps3_per_km.is_finite()) {
            return Err(Error::Config("dispersion coefficients must be finite".into()));
        }
        Ok(())
    }

    /// `exp(j (b2 w^2 / 2 + b3 w^3 / 6) L)` at baseband frequency `f` in Hz.
    pub fn transfer(&self, f: f64) -> Complex64 {
        let w = 2.0 * PI * f;
        let b2 = self.beta2_ps2_per_km * PS2;
        let b3 = self.beta3_ps3_per_km * PS3;
        let phase = (b2 * w * w / 2.0 + b3 * w * w * w / 6.0) * self.length_km;
        Complex64::from_polar(1.0, phase)
    }

    /// Spread of group delay over the band `[-bandwidth/2, bandwidth/2]`, in s.
    pub fn delay_spread(&self, bandwidth: f64) -> f64 {
        let b2 = self.beta2_ps2_per_km * PS2 * self.length_km;
        let b3 = self.beta3_ps3_per_km * PS3 * self.length_km;
        let wmax = PI * bandwidth;
        let tau = |w: f64| b2 * w + b3 * w * w / 2.0;
        let pts = [tau(-wmax), tau(0.0), tau(wmax)];
        let hi = pts.iter().cloned().fold(f64::MIN, f64::max);
        let lo = pts.iter().cloned().fold(f64::MAX, f64::min);
        hi - lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontendParams {
    pub responsivity_a_per_w: f64,
    /// `4 k_B T F_n / R_L`.
    pub thermal_const_a2s: f64,
    /// Reference bandwidth for quoting the thermal noise variance.
    pub noise_bandwidth_hz: f64,
    pub rx_cutoff_hz: f64,
    pub rx_filter_order: usize,
    pub rop_dbm: f64,
    pub noise_enabled: bool,
}

impl FrontendParams {
    /// p-i-n receiver at the thermal noise limit with a 95 GHz front end.
    pub fn pin_thermal() -> Self {
        Self {
            responsivity_a_per_w: 0.9,
            thermal_const_a2s: 3e-22,
            noise_bandwidth_hz: 100e9,
            rx_cutoff_hz: 95e9,
            rx_filter_order: 5,
            rop_dbm: -15.0,
            noise_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("responsivity_a_per_w", self.responsivity_a_per_w),
            ("thermal_const_a2s", self.thermal_const_a2s),
            ("noise_bandwidth_hz", self.noise_bandwidth_hz),
            ("rx_cutoff_hz", self.rx_cutoff_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.rop_dbm.is_finite() {
            return Err(Error::Config("rop_dbm must be finite".into()));
        }
        if self.rx_filter_order == 0 || self.rx_filter_order > 10 {
            return Err(Error::Config("rx_filter_order must lie in 1..=10".into()));
        }
        Ok(())
    }

    /// Thermal noise variance within the reference bandwidth, in A².
    pub fn thermal_variance(&self) -> f64 {
        self.thermal_const_a2s * self.noise_bandwidth_hz
    }

    pub fn rx_filter(&self) -> BesselFilter {
        BesselFilter::new(self.rx_filter_order, self.rx_cutoff_hz)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

/// All-pass chromatic dispersion. Accepts optical or dimensionless fields.
pub fn cd_filter(w: &Waveform, p: &FiberParams) -> Result<Waveform> {
    if w.unit() == Unit::ElectricalCurrent {
        return Err(Error::UnitMismatch {
            op: "cd_filter",
            expected: Unit::OpticalField,
            got: w.unit(),
        });
    }
    p.validate()?;
    if p.length_km == 0.0 {
        return Ok(w.clone());
    }
    Ok(apply_filter(w, |f| p.transfer(f)))
}

/// Scales the field so its mean power equals `rop_dbm`.
pub fn scale_to_rop(w: &Waveform, rop_dbm: f64) -> Result<Waveform> {
    if w.unit() == Unit::ElectricalCurrent {
        return Err(Error::UnitMismatch {
            op: "scale_to_rop",
            expected: Unit::OpticalField,
            got: w.unit(),
        });
    }
    let p = w.mean_power();
    if !(p > 0.0) {
        return Err(Error::InvalidInput("cannot scale a zero-power field".into()));
    }
    let g = (dbm_to_watts(rop_dbm) / p).sqrt();
    Ok(w.with_samples(
        w.samples().iter().map(|s| s * g).collect(),
        Unit::OpticalField,
    ))
}

/// Square-law detection: `R |E|^2`.
pub fn photodiode(w: &Waveform, responsivity: f64) -> Result<Waveform> {
    w.require_unit("photodiode", Unit::OpticalField)?;
    Ok(w.with_samples(
        w.samples()
            .iter()
            .map(|s| Complex64::new(responsivity * s.norm_sqr(), 0.0))
            .collect(),
        Unit::ElectricalCurrent,
    ))
}

/// Per-sample variance of white noise with two-sided PSD `thermal_const / 2`.
pub fn noise_variance_per_sample(f: &FrontendParams, sample_rate: f64) -> f64 {
    f.thermal_const_a2s / 2.0 * sample_rate
}

/// Adds real white Gaussian noise, flat at `thermal_const / 2` across the
/// simulation band.
pub fn add_thermal_noise(w: &Waveform, f: &FrontendParams, seed: u64) -> Result<Waveform> {
    w.require_unit("add_thermal_noise", Unit::ElectricalCurrent)?;
    let sigma = noise_variance_per_sample(f, w.sample_rate()).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = w
        .samples()
        .iter()
        .map(|s| {
            let n: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(s.re + sigma * n, s.im)
        })
        .collect();
    Ok(w.with_samples(samples, Unit::ElectricalCurrent))
}

/// Bessel low-pass with its DC group delay removed.
#[derive(Clone, Debug, PartialEq)]
pub struct BesselFilter {
    /// Reverse Bessel polynomial coefficients, constant term first.
    coeffs: Vec<f64>,
    /// Scale from Hz to the normalized frequency of the prototype.
    omega0: f64,
    delay: f64,
}

impl BesselFilter {
    pub fn new(order: usize, cutoff_3db_hz: f64) -> Self {
        let coeffs = reverse_bessel(order);
        let w3 = normalized_cutoff(&coeffs);
        let omega0 = 2.0 * PI * cutoff_3db_hz / w3;
        // Group delay at DC of the prototype is a1 / a0.
        let delay = coeffs[1] / coeffs[0] / omega0;
        Self {
            coeffs,
            omega0,
            delay,
        }
    }

    fn prototype(coeffs: &[f64], s: Complex64) -> Complex64 {
        let den = coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &a| acc * s + a);
        coeffs[0] / den
    }

    /// Response at `f` Hz including the delay compensation.
    pub fn response(&self, f: f64) -> Complex64 {
        let s = Complex64::new(0.0, 2.0 * PI * f / self.omega0);
        Self::prototype(&self.coeffs, s) * Complex64::from_polar(1.0, 2.0 * PI * f * self.delay)
    }

    pub fn power_gain(&self, f: f64) -> f64 {
        self.response(f).norm_sqr()
    }

    /// Removed bulk delay in s.
    pub fn group_delay(&self) -> f64 {
        self.delay
    }
}

fn reverse_bessel(order: usize) -> Vec<f64> {
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    (0..=order)
        .map(|k| fact(2 * order - k) / (2f64.powi((order - k) as i32) * fact(k) * fact(order - k)))
        .collect()
}

fn normalized_cutoff(coeffs: &[f64]) -> f64 {
    let gain = |w: f64| BesselFilter::prototype(coeffs, Complex64::new(0.0, w)).norm_sqr();
    let (mut lo, mut hi) = (1e-6, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gain(mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Receiver filter followed by resampling to `output_rate`.
pub fn rx_frontend(w: &Waveform, f: &FrontendParams, output_rate: f64) -> Result<Waveform> {
    w.require_unit("rx_frontend", Unit::ElectricalCurrent)?;
    if output_rate > w.sample_rate() {
        return Err(Error::Config(format!(
            "receiver output rate {output_rate} Hz exceeds simulation rate {} Hz",
            w.sample_rate()
        )));
    }
    let filter = f.rx_filter();
    let filtered = apply_filter(w, |freq| filter.response(freq));
    let real = filtered.with_samples(
        filtered
            .samples()
            .iter()
            .map(|s| Complex64::new(s.re, 0.0))
            .collect(),
        Unit::ElectricalCurrent,
    );
    resample(&real, output_rate)
}

/// Variance of the filtered thermal noise at the receiver output, in A².
pub fn rx_noise_variance(f: &FrontendParams, output_rate: f64) -> f64 {
    let filter = f.rx_filter();
    // Integrate |H|^2 over the output band (resampling truncates beyond it).
    let steps = 20_000;
    let half = output_rate / 2.0;
    let df = 2.0 * half / steps as f64;
    let integral: f64 = (0..steps)
        .map(|i| filter.power_gain(-half + (i as f64 + 0.5) * df) * df)
        .sum();
    f.thermal_const_a2s / 2.0 * integral
}

/// One received 2-SPS symbol slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    /// Information symbol index (before any precoding).
    pub symbol_index: usize,
    pub true_level: f64,
    /// Sample at the symbol centre.
    pub sample_even: f64,
    /// Sample half a symbol later.
    pub sample_odd: f64,
}

/// Payload of one simulated frame with guard symbols stripped.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkFrame {
    pub records: Vec<LinkRecord>,
    /// Transmitted alphabet indices after precoding.
    pub transmitted: Vec<usize>,
}

impl LinkFrame {
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.symbol_index).collect()
    }
}

fn transmit_field(symbols: &[usize], config: &LinkConfig) -> Result<(Waveform, Vec<usize>)> {
    let alphabet = build_alphabet(config.order)?;
    if let Some(&bad) = symbols.iter().find(|&&s| s >= config.order) {
        return Err(Error::InvalidInput(format!("symbol index {bad} out of range")));
    }
    let tx = if config.diff_precode {
        diff_precode(symbols, &alphabet)?
    } else {
        symbols.to_vec()
    };
    let pulse = PulseShape::new(config.rolloff, config.sps_sim)?;
    let x = modulate(&alphabet.to_levels(&tx), &pulse, config.symbol_rate_baud, config.offset)?;
    let x = cd_filter(&x, &config.fiber)?;
    let x = scale_to_rop(&x, config.frontend.rop_dbm)?;
    Ok((x, tx))
}

/// Runs one frame through the full link.
///
/// `symbols` covers the whole frame including both guards; the payload is
/// `guard..symbols.len() - guard`.
pub fn simulate_link(symbols: &[usize], config: &LinkConfig, seed: u64) -> Result<LinkFrame> {
    config.validate()?;
    let guard = config.guard_symbols();
    if symbols.len() <= 2 * guard {
        return Err(Error::InvalidInput(format!(
            "frame of {} symbols leaves no payload after {guard} guard symbols per side",
            symbols.len()
        )));
    }
    let (field, tx) = transmit_field(symbols, config)?;
    let mut current = photodiode(&field, config.frontend.responsivity_a_per_w)?;
    if config.frontend.noise_enabled {
        current = add_thermal_noise(&current, &config.frontend, seed)?;
    }
    let rx_rate = config.symbol_rate_baud * config.sps_rx as f64;
    let y = rx_frontend(&current, &config.frontend, rx_rate)?;
    let alphabet = build_alphabet(config.order)?;
    let sps = config.sps_rx;
    let payload = guard..symbols.len() - guard;
    let records = payload
        .clone()
        .map(|k| LinkRecord {
            symbol_index: symbols[k],
            true_level: alphabet.level(symbols[k]),
            sample_even: y.samples()[sps * k].re,
            sample_odd: y.samples()[sps * k + sps / 2].re,
        })
        .collect();
    Ok(LinkFrame {
        records,
        transmitted: tx[payload].to_vec(),
    })
}

/// Noise-free pre-photodiode field at the symbol instants of the payload,
/// paired with the transmitted level.
pub fn field_at_symbol_instants(symbols: &[usize], config: &LinkConfig) -> Result<Vec<(f64, Complex64)>> {
    config.validate()?;
    let guard = config.guard_symbols();
    if symbols.len() <= 2 * guard {
        return Err(Error::InvalidInput("frame shorter than its guards".into()));
    }
    let (field, tx) = transmit_field(symbols, config)?;
    let alphabet = build_alphabet(config.order)?;
    Ok((guard..symbols.len() - guard)
        .map(|k| (alphabet.level(tx[k]), field.samples()[k * config.sps_sim]))
        .collect())
}
