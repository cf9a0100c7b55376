//! ASK alphabets, sign-differential precoding, and raised-cosine pulse shaping.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Unit, Waveform};

/// Real-valued amplitude alphabet normalized to `[-1, 1]`.
///
/// Symbol index `i` maps to `levels[i]` in ascending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    levels: Vec<f64>,
}

/// M-ASK with levels `{±1, ±3, …, ±(M-1)} / (M-1)`.
pub fn build_alphabet(order: usize) -> Result<Constellation> {
    if order < 2 || !order.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "ASK order must be even and at least 2, got {order}"
        )));
    }
    let scale = (order - 1) as f64;
    let levels = (0..order)
        .map(|i| (2.0 * i as f64 - scale) / scale)
        .collect();
    Ok(Constellation { levels })
}

impl Constellation {
    /// Validates an arbitrary equally spaced symmetric alphabet.
    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        let m = levels.len();
        if m < 2 {
            return Err(Error::InvalidInput("alphabet needs at least 2 levels".into()));
        }
        if levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("levels must be strictly increasing".into()));
        }
        let step = levels[1] - levels[0];
        let tol = 1e-12;
        for i in 0..m {
            if (levels[i] + levels[m - 1 - i]).abs() > tol {
                return Err(Error::InvalidInput("levels must be symmetric about 0".into()));
            }
            if i > 0 && ((levels[i] - levels[i - 1]) - step).abs() > tol {
                return Err(Error::InvalidInput("levels must be equally spaced".into()));
            }
        }
        if (levels[m - 1] - 1.0).abs() > tol {
            return Err(Error::InvalidInput("largest level must be 1".into()));
        }
        Ok(Self { levels })
    }

    pub fn order(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, index: usize) -> f64 {
        self.levels[index]
    }

    /// Index of `-level(index)`.
    pub fn negation(&self, index: usize) -> usize {
        self.order() - 1 - index
    }

    pub fn is_positive(&self, index: usize) -> bool {
        self.levels[index] > 0.0
    }

    pub fn to_levels(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.levels[i]).collect()
    }

    pub fn contains_zero(&self) -> bool {
        self.levels.contains(&0.0)
    }

    pub fn mean_energy(&self) -> f64 {
        self.levels.iter().map(|l| l * l).sum::<f64>() / self.order() as f64
    }
}

/// Uniform iid symbol indices.
pub fn draw_symbols<R: Rng + ?Sized>(order: usize, count: usize, rng: &mut R) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(0..order)).collect()
}

/// Sign-differential precoding.
///
/// Output magnitudes equal input magnitudes; the output sign is the previous
/// output sign times the input sign, starting from `+`.
pub fn diff_precode(indices: &[usize], alphabet: &Constellation) -> Result<Vec<usize>> {
    check_precodable(indices, alphabet)?;
    let mut positive = true;
    Ok(indices
        .iter()
        .map(|&i| {
            positive = positive == alphabet.is_positive(i);
            if positive == alphabet.is_positive(i) {
                i
            } else {
                alphabet.negation(i)
            }
        })
        .collect())
}

/// Inverse of [`diff_precode`].
pub fn diff_decode(indices: &[usize], alphabet: &Constellation) -> Result<Vec<usize>> {
    check_precodable(indices, alphabet)?;
    let mut prev_positive = true;
    Ok(indices
        .iter()
        .map(|&o| {
            let out_positive = alphabet.is_positive(o);
            let in_positive = out_positive == prev_positive;
            prev_positive = out_positive;
            if in_positive == out_positive {
                o
            } else {
                alphabet.negation(o)
            }
        })
        .collect())
}

fn check_precodable(indices: &[usize], alphabet: &Constellation) -> Result<()> {
    if alphabet.contains_zero() {
        return Err(Error::InvalidInput(
            "differential precoding needs an alphabet without a zero level".into(),
        ));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= alphabet.order()) {
        return Err(Error::InvalidInput(format!(
            "symbol index {bad} outside alphabet of order {}",
            alphabet.order()
        )));
    }
    Ok(())
}

/// Raised-cosine-spectrum pulse truncated to a finite span.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub rolloff: f64,
    /// Total support in symbols.
    pub span_symbols: usize,
    /// Length of the cosine taper at each edge, in symbols.
    pub taper_symbols: usize,
    pub sps: usize,
}

impl PulseShape {
    pub fn new(rolloff: f64, sps: usize) -> Result<Self> {
        let p = Self {
            rolloff,
            span_symbols: 32,
            taper_symbols: 2,
            sps,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::Config(format!(
                "roll-off must lie in [0, 1], got {}",
                self.rolloff
            )));
        }
        if self.sps == 0 || self.span_symbols == 0 || !self.span_symbols.is_multiple_of(2) {
            return Err(Error::Config(
                "pulse needs sps >= 1 and an even, nonzero span".into(),
            ));
        }
        if 2 * self.taper_symbols > self.span_symbols {
            return Err(Error::Config("taper longer than half the span".into()));
        }
        Ok(())
    }

    /// Untruncated raised-cosine impulse response at time `t` in symbol periods.
    pub fn impulse(&self, t: f64) -> f64 {
        let a = self.rolloff;
        let sinc = if t == 0.0 {
            1.0
        } else {
            (PI * t).sin() / (PI * t)
        };
        let denom = 1.0 - (2.0 * a * t).powi(2);
        if a > 0.0 && denom.abs() < 1e-10 {
            let edge = 1.0 / (2.0 * a);
            return PI / 4.0 * (PI * edge).sin() / (PI * edge);
        }
        sinc * (PI * a * t).cos() / denom
    }

    /// Raised-cosine spectrum at `f` in units of the symbol rate, normalized to 1 at DC.
    pub fn spectrum(&self, f: f64) -> f64 {
        let a = self.rolloff;
        let f = f.abs();
        let lo = (1.0 - a) / 2.0;
        let hi = (1.0 + a) / 2.0;
        if f <= lo {
            1.0
        } else if f > hi {
            0.0
        } else {
            0.5 * (1.0 + (PI / a * (f - lo)).cos())
        }
    }

    fn taper(&self, t: f64) -> f64 {
        let half = self.span_symbols as f64 / 2.0;
        let flat = half - self.taper_symbols as f64;
        let at = t.abs();
        if at <= flat {
            1.0
        } else if at >= half {
            0.0
        } else {
            0.5 * (1.0 + (PI * (at - flat) / self.taper_symbols as f64).cos())
        }
    }

    /// Samples of the windowed pulse, centered: tap `half_len()` sits at `t = 0`.
    pub fn taps(&self) -> Vec<f64> {
        let half = self.half_len() as isize;
        (-half..=half)
            .map(|j| {
                let t = j as f64 / self.sps as f64;
                self.impulse(t) * self.taper(t)
            })
            .collect()
    }

    pub fn half_len(&self) -> usize {
        self.span_symbols * self.sps / 2
    }
}

/// Number of payload and guard symbols of one simulated frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub payload_symbols: usize,
    /// Symbols on each side of the payload that never enter evaluation.
    pub guard_symbols: usize,
    pub seed: u64,
}

impl FrameSpec {
    pub fn total_symbols(&self) -> usize {
        self.payload_symbols + 2 * self.guard_symbols
    }

    pub fn validate(&self, channel_memory_symbols: usize) -> Result<()> {
        if self.payload_symbols == 0 {
            return Err(Error::Config("frame needs at least one payload symbol".into()));
        }
        if self.guard_symbols < 4 * channel_memory_symbols {
            return Err(Error::Config(format!(
                "guard of {} symbols is below 4x the channel memory of {} symbols",
                self.guard_symbols, channel_memory_symbols
            )));
        }
        Ok(())
    }
}

/// `sum_k symbols[k] g(t - k T) + offset` sampled at `pulse.sps` per symbol.
///
/// The convolution is circular over the frame; symbol `k` peaks at sample
/// `k * sps`.
pub fn modulate(symbols: &[f64], pulse: &PulseShape, symbol_rate: f64, offset: f64) -> Result<Waveform> {
    if symbols.is_empty() {
        return Err(Error::InvalidInput("no symbols to modulate".into()));
    }
    if !(offset >= 0.0 && offset.is_finite()) {
        return Err(Error::Config(format!("offset must be >= 0, got {offset}")));
    }
    pulse.validate()?;
    let sps = pulse.sps;
    let n = symbols.len() * sps;
    let taps = pulse.taps();
    let half = pulse.half_len() as isize;
    let mut out = vec![0.0f64; n];
    for (k, &x) in symbols.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let centre = (k * sps) as isize;
        for (j, &g) in taps.iter().enumerate() {
            let idx = (centre + j as isize - half).rem_euclid(n as isize) as usize;
            out[idx] += x * g;
        }
    }
    let samples = out.into_iter().map(|v| Complex64::new(v + offset, 0.0)).collect();
    Waveform::new(samples, symbol_rate * sps as f64, Unit::Dimensionless)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eight_ask_levels() {
        let a = build_alphabet(8).unwrap();
        let expect = [-7.0, -5.0, -3.0, -1.0, 1.0, 3.0, 5.0, 7.0].map(|v| v / 7.0);
        assert_eq!(a.levels(), &expect);
        assert_eq!(build_alphabet(2).unwrap().levels(), &[-1.0, 1.0]);
        let six = build_alphabet(6).unwrap();
        let expect6 = [-5.0, -3.0, -1.0, 1.0, 3.0, 5.0].map(|v| v / 5.0);
        for (a, b) in six.levels().iter().zip(expect6) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn odd_or_tiny_orders_rejected() {
        assert!(build_alphabet(0).is_err());
        assert!(build_alphabet(1).is_err());
        assert!(build_alphabet(7).is_err());
    }

    #[test]
    fn alphabet_is_normalized_and_zero_mean() {
        for m in [2, 4, 6, 8, 16] {
            let a = build_alphabet(m).unwrap();
            let mean: f64 = a.levels().iter().sum::<f64>() / m as f64;
            assert!(mean.abs() < 1e-15);
            assert_eq!(a.levels()[m - 1], 1.0);
            assert!(Constellation::from_levels(a.levels().to_vec()).is_ok());
        }
    }

    #[test]
    fn from_levels_rejects_asymmetric() {
        assert!(Constellation::from_levels(vec![-1.0, 0.5, 1.0]).is_err());
        assert!(Constellation::from_levels(vec![0.0, 1.0]).is_err());
    }

    fn signs(a: &Constellation, idx: &[usize]) -> Vec<bool> {
        idx.iter().map(|&i| a.is_positive(i)).collect()
    }

    #[test]
    fn precoding_sign_examples() {
        let a = build_alphabet(2).unwrap();
        let out = diff_precode(&[1, 1, 1], &a).unwrap();
        assert_eq!(signs(&a, &out), vec![true, true, true]);
        let out = diff_precode(&[0, 0], &a).unwrap();
        assert_eq!(signs(&a, &out), vec![false, true]);
    }

    #[test]
    fn precoding_keeps_magnitude_and_round_trips() {
        let a = build_alphabet(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = draw_symbols(8, 1000, &mut rng);
        let y = diff_precode(&x, &a).unwrap();
        for (&i, &o) in x.iter().zip(&y) {
            assert_eq!(a.level(i).abs(), a.level(o).abs());
        }
        assert_eq!(diff_decode(&y, &a).unwrap(), x);
    }

    #[test]
    fn precoding_rejects_zero_level() {
        let a = Constellation::from_levels(vec![-1.0, 0.0, 1.0]).unwrap();
        assert!(diff_precode(&[0, 1, 2], &a).is_err());
    }

    #[test]
    fn offset_only_waveform() {
        let p = PulseShape::new(0.15, 16).unwrap();
        let w = modulate(&[0.0; 8], &p, 1e9, 0.6).unwrap();
        assert!(w.samples().iter().all(|s| s.re == 0.6 && s.im == 0.0));
    }

    #[test]
    fn single_symbol_gives_pulse_with_zero_isi() {
        let p = PulseShape::new(0.15, 16).unwrap();
        let mut sym = vec![0.0; 64];
        sym[0] = 1.0;
        let w = modulate(&sym, &p, 1e9, 0.0).unwrap();
        let peak = w.samples()[0].re;
        assert!((peak - 1.0).abs() < 1e-12);
        for k in 1..64 {
            assert!(w.samples()[k * 16].re.abs() <= 1e-6 * peak);
        }
    }

    #[test]
    fn taps_are_symmetric_and_vanish_at_edges() {
        let p = PulseShape::new(0.15, 8).unwrap();
        let t = p.taps();
        assert_eq!(t.len(), 32 * 8 + 1);
        for j in 0..t.len() {
            assert!((t[j] - t[t.len() - 1 - j]).abs() < 1e-15);
        }
        assert_eq!(t[0], 0.0);
    }

    #[test]
    fn impulse_singular_point_is_continuous() {
        let p = PulseShape::new(0.25, 16).unwrap();
        let edge = 1.0 / (2.0 * 0.25);
        let lim = p.impulse(edge);
        assert!((p.impulse(edge + 1e-6) - lim).abs() < 1e-5);
    }

    #[test]
    fn guard_must_cover_memory() {
        let f = FrameSpec {
            payload_symbols: 10,
            guard_symbols: 7,
            seed: 0,
        };
        assert!(f.validate(2).is_err());
        assert!(f.validate(1).is_ok());
        assert_eq!(f.total_symbols(), 24);
    }
}
