use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureLayout;
use super::mlp::{Adam, MlpParams};
use crate::error::{Error, Result};

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    /// Multiplier applied to the learning rate on a validation plateau.
    pub lr_decay: f64,
    /// Epochs without validation improvement before decaying.
    pub plateau_patience: usize,
    pub window_half_width: usize,
    pub hidden_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1024,
            epochs: 30,
            validation_fraction: 0.1,
            lr_decay: 0.5,
            plateau_patience: 1,
            window_half_width: 10,
            hidden_widths: vec![256, 256],
            seed: 7,
        }
    }
}

impl TrainSpec {
    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            half_width: self.window_half_width,
        }
    }

    pub fn widths(&self, classes: usize) -> Vec<usize> {
        let mut w = vec![self.layout().input_width()];
        w.extend(&self.hidden_widths);
        w.push(classes);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(0.0 < self.validation_fraction && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if !(0.0 < self.lr_decay && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Standardized features with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledSet {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::InvalidInput("feature rows and labels differ in count".into()));
        }
        if labels.iter().any(|&l| l >= classes) {
            return Err(Error::InvalidInput("label outside class range".into()));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn gather(&self, rows: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (
            self.features.select(Axis(0), rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_ce_bits: f64,
    pub validation_ce_bits: f64,
    pub best_epoch: usize,
    pub final_learning_rate: f64,
}

/// Mean cross-entropy in nats over `x`, evaluated in chunks.
pub fn cross_entropy(params: &MlpParams, x: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    let chunk = 4096;
    for (start, rows) in x.axis_chunks_iter(Axis(0), chunk).enumerate() {
        let post = params.forward_batch(rows);
        for (i, row) in post.axis_iter(Axis(0)).enumerate() {
            total -= row[labels[start * chunk + i]].max(1e-300).ln();
        }
    }
    total / labels.len().max(1) as f64
}

/// Mini-batch Adam on the cross-entropy, keeping the parameters with the
/// lowest validation loss. Deterministic for a given `spec.seed`.
pub fn mlp_train(data: &LabeledSet, spec: &TrainSpec) -> Result<(MlpParams, TrainReport)> {
    spec.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two training examples".into()));
    }
    let widths = {
        let mut w = vec![data.features.ncols()];
        w.extend(&spec.hidden_widths);
        w.push(data.classes);
        w
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = MlpParams::random(&widths, &mut rng)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * spec.validation_fraction).round() as usize).clamp(1, n - 1);
    let (val_rows, train_rows) = order.split_at(n_val);
    let mut train_rows = train_rows.to_vec();
    let (val_x, val_y) = data.gather(val_rows);

    let mut adam = Adam::new(&params);
    let mut lr = spec.learning_rate;
    let mut best = (f64::INFINITY, params.clone(), 0usize, f64::NAN);
    let mut stall = 0;
    let mut step = 0;
    for epoch in 0..spec.epochs {
        train_rows.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_rows.chunks(spec.batch_size) {
            let (x, y) = data.gather(batch);
            let (loss, grads) = params.loss_and_gradients(x.view(), &y);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    learning_rate: lr,
                    detail: format!("batch loss is {loss}"),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.update(&mut params, &grads, lr);
            step += 1;
        }
        let train_ce = epoch_loss / train_rows.len() as f64;
        let val_ce = cross_entropy(&params, val_x.view(), &val_y);
        if !val_ce.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step,
                learning_rate: lr,
                detail: format!("validation loss is {val_ce}"),
            });
        }
        if val_ce < best.0 {
            best = (val_ce, params.clone(), epoch, train_ce);
            stall = 0;
        } else {
            stall += 1;
            if stall >= spec.plateau_patience {
                lr *= spec.lr_decay;
                stall = 0;
            }
        }
    }
    let ln2 = std::f64::consts::LN_2;
    let (val_ce, params, best_epoch, train_ce) = best;
    Ok((
        params,
        TrainReport {
            train_ce_bits: train_ce / ln2,
            validation_ce_bits: val_ce / ln2,
            best_epoch,
            final_learning_rate: lr,
        },
    ))
}
