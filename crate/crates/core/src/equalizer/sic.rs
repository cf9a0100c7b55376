//! Multi-stage detection: stage `s` conditions on the symbols of stages `< s`.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::features::{FeatureLayout, SicSchedule, Standardizer};
use super::mlp::MlpParams;
use super::train::{mlp_train, LabeledSet, TrainReport, TrainSpec};
use crate::channel::LinkFrame;
use crate::error::{Error, Result};
use crate::repro::split_seed;
use crate::transmitter::build_alphabet;

/// Source of the lower-stage levels fed to later stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// True transmitted levels (training, and the multi-level-coding rate).
    Genie,
    /// Hard decisions of the earlier stages.
    Decision,
}

impl Conditioning {
    pub fn label(self) -> &'static str {
        match self {
            Conditioning::Genie => "genie",
            Conditioning::Decision => "decision",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageModel {
    pub params: MlpParams,
    pub standardizer: Standardizer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SicReceiver {
    pub order: usize,
    pub schedule: SicSchedule,
    pub layout: FeatureLayout,
    pub models: Vec<StageModel>,
}

/// Raw features, labels and `(frame, index)` positions of every stage member.
fn stage_rows(
    frames: &[LinkFrame],
    known: &[Vec<f64>],
    layout: &FeatureLayout,
    schedule: &SicSchedule,
    stage: usize,
) -> (Vec<f64>, Vec<usize>, Vec<(usize, usize)>) {
    let width = layout.input_width();
    let count: usize = frames
        .iter()
        .map(|f| schedule.members(stage, f.records.len()).count())
        .sum();
    let mut raw = vec![0.0; count * width];
    let mut labels = Vec::with_capacity(count);
    let mut positions = Vec::with_capacity(count);
    let mut rows = raw.chunks_exact_mut(width);
    for (fi, frame) in frames.iter().enumerate() {
        for k in schedule.members(stage, frame.records.len()) {
            let out = rows.next().expect("row count");
            layout.featurize_into(&frame.records, &known[fi], k, schedule, stage, out);
            labels.push(frame.records[k].symbol_index);
            positions.push((fi, k));
        }
    }
    (raw, labels, positions)
}

fn true_levels(frames: &[LinkFrame]) -> Vec<Vec<f64>> {
    frames
        .iter()
        .map(|f| f.records.iter().map(|r| r.true_level).collect())
        .collect()
}

/// Standardized features and labels for one stage, conditioned on true levels.
pub fn stage_dataset(
    frames: &[LinkFrame],
    layout: &FeatureLayout,
    schedule: &SicSchedule,
    stage: usize,
    order: usize,
    standardizer: Option<&Standardizer>,
) -> Result<(LabeledSet, Standardizer)> {
    let width = layout.input_width();
    let (mut raw, labels, _) = stage_rows(frames, &true_levels(frames), layout, schedule, stage);
    if labels.is_empty() {
        return Err(Error::InvalidInput(format!("stage {stage} has no symbols")));
    }
    let std = standardizer
        .cloned()
        .unwrap_or_else(|| Standardizer::fit(&raw, width));
    raw.chunks_exact_mut(width).for_each(|r| std.apply(r));
    let features = Array2::from_shape_vec((labels.len(), width), raw).expect("shape");
    Ok((LabeledSet::new(features, labels, order)?, std))
}

/// Trains one network per stage with genie conditioning.
pub fn train_sic(
    frames: &[LinkFrame],
    order: usize,
    schedule: SicSchedule,
    spec: &TrainSpec,
) -> Result<(SicReceiver, Vec<TrainReport>)> {
    build_alphabet(order)?;
    let layout = spec.layout();
    let mut models = Vec::with_capacity(schedule.stages());
    let mut reports = Vec::with_capacity(schedule.stages());
    for stage in 0..schedule.stages() {
        let (set, standardizer) = stage_dataset(frames, &layout, &schedule, stage, order, None)?;
        let stage_spec = TrainSpec {
            seed: split_seed(spec.seed, stage as u64),
            ..spec.clone()
        };
        let (params, report) = mlp_train(&set, &stage_spec)?;
        models.push(StageModel {
            params,
            standardizer,
        });
        reports.push(report);
    }
    Ok((
        SicReceiver {
            order,
            schedule,
            layout,
            models,
        },
        reports,
    ))
}

fn stage_posteriors(model: &StageModel, mut raw: Vec<f64>, width: usize) -> Array2<f64> {
    raw.chunks_exact_mut(width)
        .for_each(|r| model.standardizer.apply(r));
    let rows = raw.len() / width;
    let x = ArrayView2::from_shape((rows, width), &raw).expect("shape");
    let chunk = 4096;
    let mut out = Array2::zeros((rows, model.params.output_width()));
    for (i, block) in x.axis_chunks_iter(Axis(0), chunk).enumerate() {
        let post = model.params.forward_batch(block);
        out.slice_mut(ndarray::s![i * chunk..i * chunk + post.nrows(), ..])
            .assign(&post);
    }
    out
}

/// Posteriors for every payload symbol of every frame (`records x M` each).
pub fn sic_detect(
    frames: &[LinkFrame],
    receiver: &SicReceiver,
    mode: Conditioning,
) -> Result<Vec<Array2<f64>>> {
    let schedule = receiver.schedule;
    let alphabet = build_alphabet(receiver.order)?;
    if let Some(missing) = (0..schedule.stages()).find(|&s| s >= receiver.models.len()) {
        return Err(Error::MissingStageModel(missing));
    }
    let width = receiver.layout.input_width();
    for m in &receiver.models {
        if m.params.input_width() != width || m.params.output_width() != receiver.order {
            return Err(Error::InvalidInput("stage model shape does not match receiver".into()));
        }
    }
    let mut known = match mode {
        Conditioning::Genie => true_levels(frames),
        Conditioning::Decision => frames.iter().map(|f| vec![0.0; f.records.len()]).collect(),
    };
    let mut out: Vec<Array2<f64>> = frames
        .iter()
        .map(|f| Array2::zeros((f.records.len(), receiver.order)))
        .collect();
    for stage in 0..schedule.stages() {
        let (raw, _, positions) = stage_rows(frames, &known, &receiver.layout, &schedule, stage);
        if positions.is_empty() {
            continue;
        }
        let post = stage_posteriors(&receiver.models[stage], raw, width);
        for (row, &(fi, k)) in post.axis_iter(Axis(0)).zip(&positions) {
            out[fi].row_mut(k).assign(&row);
            if mode == Conditioning::Decision {
                known[fi][k] = alphabet.level(argmax(row.as_slice().expect("contiguous")));
            }
        }
    }
    Ok(out)
}

/// Symbol-wise detection with a single unconditioned network.
pub fn sdd_detect(frames: &[LinkFrame], model: &StageModel, layout: &FeatureLayout) -> Result<Vec<Array2<f64>>> {
    let schedule = SicSchedule::new(1)?;
    let known: Vec<Vec<f64>> = frames.iter().map(|f| vec![0.0; f.records.len()]).collect();
    let (raw, _, positions) = stage_rows(frames, &known, layout, &schedule, 0);
    let post = stage_posteriors(model, raw, layout.input_width());
    let mut out: Vec<Array2<f64>> = frames
        .iter()
        .map(|f| Array2::zeros((f.records.len(), model.params.output_width())))
        .collect();
    for (row, &(fi, k)) in post.axis_iter(Axis(0)).zip(&positions) {
        out[fi].row_mut(k).assign(&row);
    }
    Ok(out)
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}
