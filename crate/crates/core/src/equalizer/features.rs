//! Input vectors for the per-stage networks.
//!
//! For a target symbol `k` and half-width `W` the raw feature vector is
//!
//! ```text
//! [ even(k-W), odd(k-W), ..., even(k+W), odd(k+W) ]   2 (2W + 1) samples
//! [ cond(k-W), ..., cond(k+W) ]                       2W + 1 slots
//! [ stage tag ]                                       1 slot
//! ```
//!
//! `cond(j)` holds the level of symbol `j` when its stage precedes the
//! target's stage and is zero otherwise (ASK levels are never zero). With
//! `W = 10` the vector has 64 entries.

use serde::{Deserialize, Serialize};

use crate::channel::LinkRecord;
use crate::error::{Error, Result};

/// Time-interleaved stage assignment: symbol `k` belongs to stage `k mod S`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SicSchedule {
    stages: usize,
}

impl SicSchedule {
    pub fn new(stages: usize) -> Result<Self> {
        if stages == 0 {
            return Err(Error::Config("SIC needs at least one stage".into()));
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Zero-based stage of payload index `k`.
    pub fn stage_of(&self, k: usize) -> usize {
        k % self.stages
    }

    /// Whether stage `stage` may condition on symbol `k`.
    pub fn conditions_on(&self, stage: usize, k: usize) -> bool {
        self.stage_of(k) < stage
    }

    pub fn members(&self, stage: usize, len: usize) -> impl Iterator<Item = usize> {
        (stage..len).step_by(self.stages)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub half_width: usize,
}

impl FeatureLayout {
    pub fn window_symbols(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn input_width(&self) -> usize {
        3 * self.window_symbols() + 1
    }

    /// Raw (unstandardized) feature vector for target `k`, written into `out`.
    ///
    /// `known` gives the level used for conditioned symbols (true levels while
    /// training, decisions at inference). Windows running past the records are
    /// reflected at the edges; the return value flags that case.
    pub fn featurize_into(
        &self,
        records: &[LinkRecord],
        known: &[f64],
        k: usize,
        schedule: &SicSchedule,
        stage: usize,
        out: &mut [f64],
    ) -> bool {
        debug_assert_eq!(out.len(), self.input_width());
        debug_assert_eq!(known.len(), records.len());
        let n = records.len() as isize;
        let w = self.half_width as isize;
        let cond_base = 2 * self.window_symbols();
        let mut padded = false;
        for (slot, d) in (-w..=w).enumerate() {
            let mut j = k as isize + d;
            if j < 0 || j >= n {
                padded = true;
                j = reflect(j, n);
            }
            let j = j as usize;
            let r = &records[j];
            out[2 * slot] = r.sample_even;
            out[2 * slot + 1] = r.sample_odd;
            out[cond_base + slot] = if j != k && schedule.conditions_on(stage, j) {
                known[j]
            } else {
                0.0
            };
        }
        out[self.input_width() - 1] = stage as f64;
        padded
    }

    pub fn featurize(
        &self,
        records: &[LinkRecord],
        known: &[f64],
        k: usize,
        schedule: &SicSchedule,
        stage: usize,
    ) -> Result<(Vec<f64>, bool)> {
        if k >= records.len() {
            return Err(Error::InvalidInput(format!(
                "target {k} outside a frame of {} records",
                records.len()
            )));
        }
        if known.len() != records.len() {
            return Err(Error::InvalidInput("conditioning levels misaligned with records".into()));
        }
        let mut out = vec![0.0; self.input_width()];
        let padded = self.featurize_into(records, known, k, schedule, stage, &mut out);
        Ok((out, padded))
    }
}

fn reflect(j: isize, n: isize) -> isize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = j.rem_euclid(period);
    if m < n {
        m
    } else {
        period - m
    }
}

/// Per-feature centering and scaling fitted on training features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Multiplier applied after centering; 1 for constant features.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[f64], width: usize) -> Self {
        let n = (rows.len() / width).max(1) as f64;
        let mut mean = vec![0.0; width];
        for row in rows.chunks_exact(width) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for row in rows.chunks_exact(width) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let std = (s / n).sqrt();
                if std > 0.0 && std > 1e-12 * m.abs() {
                    1.0 / std
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) * s;
        }
    }
}
