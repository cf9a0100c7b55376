//! Model checkpoints.
//!
//! Binary layout, all integers `u64` and all reals `f64`, little-endian:
//!
//! ```text
//! magic    b"IMDDMLP\0"
//! count    number of layer widths (L + 1)
//! widths   L + 1 values, input first
//! layer 1  weights (out x in, row-major), then biases (out)
//! ...
//! layer L
//! ```
//!
//! A JSON sidecar next to the binary carries the stage, the feature layout,
//! the standardization statistics, the training spec and the dataset hash.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::features::{FeatureLayout, SicSchedule, Standardizer};
use super::mlp::{DenseLayer, MlpParams};
use super::sic::{SicReceiver, StageModel};
use super::train::{TrainReport, TrainSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"IMDDMLP\0";

pub fn encode_params(p: &MlpParams) -> Vec<u8> {
    let widths = p.widths();
    let mut out = Vec::with_capacity(16 + 8 * (widths.len() + p.num_params()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(widths.len() as u64).to_le_bytes());
    for w in &widths {
        out.extend_from_slice(&(*w as u64).to_le_bytes());
    }
    for layer in p.layers() {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_params(buf: &[u8]) -> Result<MlpParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let count = r.u64()? as usize;
    if !(2..=64).contains(&count) {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let widths = (0..count)
        .map(|_| r.u64().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(count - 1);
    for w in widths.windows(2) {
        let (inputs, outputs) = (w[0], w[1]);
        let weights = r.f64s(inputs * outputs)?;
        let bias = r.f64s(outputs)?;
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec((outputs, inputs), weights)
                .map_err(|e| Error::Format(e.to_string()))?,
            bias: Array1::from(bias),
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    MlpParams::from_layers(layers)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub stage: usize,
    pub stages: usize,
    pub order: usize,
    pub layout: FeatureLayout,
    pub standardizer: Standardizer,
    pub train_spec: TrainSpec,
    pub dataset_hash: String,
    pub report: Option<TrainReport>,
}

fn stage_paths(dir: &Path, stage: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("stage{stage}.bin")),
        dir.join(format!("stage{stage}.json")),
    )
}

/// Writes one `stageN.bin` / `stageN.json` pair per stage into `dir`.
pub fn save_receiver(
    dir: &Path,
    receiver: &SicReceiver,
    spec: &TrainSpec,
    dataset_hash: &str,
    reports: &[TrainReport],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (stage, model) in receiver.models.iter().enumerate() {
        let (bin, json) = stage_paths(dir, stage);
        fs::write(&bin, encode_params(&model.params))?;
        let meta = CheckpointMeta {
            format: "imdd-mlp-v1".into(),
            stage,
            stages: receiver.schedule.stages(),
            order: receiver.order,
            layout: receiver.layout,
            standardizer: model.standardizer.clone(),
            train_spec: spec.clone(),
            dataset_hash: dataset_hash.to_string(),
            report: reports.get(stage).cloned(),
        };
        fs::write(&json, serde_json::to_string_pretty(&meta)?)?;
    }
    Ok(())
}

pub fn load_receiver(dir: &Path) -> Result<(SicReceiver, Vec<CheckpointMeta>)> {
    let (_, first) = stage_paths(dir, 0);
    let meta0: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&first).map_err(|e| {
        Error::Format(format!("cannot read {}: {e}", first.display()))
    })?)?;
    let mut models = Vec::new();
    let mut metas = Vec::new();
    for stage in 0..meta0.stages {
        let (bin, json) = stage_paths(dir, stage);
        if !bin.exists() || !json.exists() {
            return Err(Error::MissingStageModel(stage));
        }
        let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&json)?)?;
        let params = decode_params(&fs::read(&bin)?)?;
        models.push(StageModel {
            params,
            standardizer: meta.standardizer.clone(),
        });
        metas.push(meta);
    }
    Ok((
        SicReceiver {
            order: meta0.order,
            schedule: SicSchedule::new(meta0.stages)?,
            layout: meta0.layout,
            models,
        },
        metas,
    ))
}
