//! Frame generation and on-disk datasets.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic     b"IMDDSET1"
//! u64       header length in bytes
//! header    JSON: {"config": .., "split": .., "frame_lengths": [..]}
//! u64       record count
//! records   symbol_index, true_level, sample_even, sample_odd as f64
//! ```
//!
//! The CSV form starts with a `# config: <json>` line followed by a header row.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{simulate_link, LinkFrame, LinkRecord};
use crate::config::LinkConfig;
use crate::error::{Error, Result};
use crate::repro::{sha256_hex, stream_seed, Stream};
use crate::transmitter::draw_symbols;

const MAGIC: &[u8; 8] = b"IMDDSET1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn streams(self) -> (Stream, Stream) {
        match self {
            Split::Train => (Stream::TrainSymbols, Stream::TrainNoise),
            Split::Eval => (Stream::EvalSymbols, Stream::EvalNoise),
        }
    }
}

/// Simulates frame `index` of `split`; identical for identical inputs.
pub fn generate_frame(config: &LinkConfig, split: Split, index: usize) -> Result<LinkFrame> {
    let (sym, noise) = split.streams();
    let total = config.frame_spec(config.seed).total_symbols();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, sym, index as u64));
    let symbols = draw_symbols(config.order, total, &mut rng);
    simulate_link(&symbols, config, stream_seed(config.seed, noise, index as u64))
}

pub fn generate_frames(config: &LinkConfig, split: Split, count: usize) -> Result<Vec<LinkFrame>> {
    config.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| generate_frame(config, split, i))
        .collect()
}

/// In-memory dataset: a configuration and its frames.
///
/// Frames read back from disk carry no `transmitted` indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: LinkConfig,
    pub split: Split,
    pub frames: Vec<LinkFrame>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: LinkConfig,
    split: Split,
    frame_lengths: Vec<usize>,
}

impl Dataset {
    pub fn generate(config: &LinkConfig, split: Split) -> Result<Self> {
        let count = match split {
            Split::Train => config.frames.train_frames,
            Split::Eval => config.frames.eval_frames,
        };
        Ok(Self {
            config: config.clone(),
            split,
            frames: generate_frames(config, split, count)?,
        })
    }

    fn records(&self) -> impl Iterator<Item = &LinkRecord> {
        self.frames.iter().flat_map(|f| f.records.iter())
    }

    fn record_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 * self.records().count());
        for r in self.records() {
            for v in [r.symbol_index as f64, r.true_level, r.sample_even, r.sample_odd] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// SHA-256 over the record bytes.
    pub fn hash(&self) -> String {
        sha256_hex(&self.record_bytes())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            split: self.split,
            frame_lengths: self.frames.iter().map(|f| f.records.len()).collect(),
        })?;
        let records = self.record_bytes();
        let mut out = Vec::with_capacity(24 + header.len() + records.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&((records.len() / 32) as u64).to_le_bytes());
        out.extend_from_slice(&records);
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("dataset: {m}"));
        if buf.len() < 16 || &buf[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let u64_at = |pos: usize| -> Result<u64> {
            buf.get(pos..pos + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| bad("truncated"))
        };
        let hlen = u64_at(8)? as usize;
        let hend = 16usize.checked_add(hlen).filter(|&e| e <= buf.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&buf[16..hend])?;
        let count = u64_at(hend)? as usize;
        let body = &buf[hend + 8..];
        if count.checked_mul(32) != Some(body.len()) {
            return Err(bad("record count does not match payload size"));
        }
        if header.frame_lengths.iter().sum::<usize>() != count {
            return Err(bad("frame lengths do not add up to the record count"));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let order = header.config.order;
        let mut frames = Vec::with_capacity(header.frame_lengths.len());
        for &len in &header.frame_lengths {
            let mut records = Vec::with_capacity(len);
            for _ in 0..len {
                let mut next = || values.next().expect("length checked");
                records.push(record_from(next(), next(), next(), next(), order)?);
            }
            frames.push(LinkFrame {
                records,
                transmitted: Vec::new(),
            });
        }
        Ok(Self {
            config: header.config,
            split: header.split,
            frames,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Writes the records as CSV; frames are concatenated in order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "# config: {}", serde_json::to_string(&self.config)?)?;
        writeln!(w, "frame,symbol_index,true_level,sample_even,sample_odd")?;
        for (fi, f) in self.frames.iter().enumerate() {
            for r in &f.records {
                writeln!(
                    w,
                    "{fi},{},{:?},{:?},{:?}",
                    r.symbol_index, r.true_level, r.sample_even, r.sample_odd
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R, split: Split) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("dataset csv: {m}"));
        let mut lines = BufReader::new(input).lines();
        let first = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let json = first
            .strip_prefix("# config: ")
            .ok_or_else(|| bad("missing config line".into()))?;
        let config = LinkConfig::from_json(json)?;
        lines.next().ok_or_else(|| bad("missing header row".into()))??;
        let mut frames: Vec<LinkFrame> = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad(format!("line {}: expected 5 fields", n + 3)));
            }
            let num = |i: usize| -> Result<f64> {
                fields[i]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", n + 3)))
            };
            let fi: usize = fields[0].parse().map_err(|_| bad(format!("line {}: bad frame", n + 3)))?;
            if fi == frames.len() {
                frames.push(LinkFrame {
                    records: Vec::new(),
                    transmitted: Vec::new(),
                });
            } else if fi + 1 != frames.len() {
                return Err(bad(format!("line {}: frames out of order", n + 3)));
            }
            let rec = record_from(num(1)?, num(2)?, num(3)?, num(4)?, config.order)?;
            frames[fi].records.push(rec);
        }
        Ok(Self { config, split, frames })
    }
}

fn record_from(index: f64, level: f64, even: f64, odd: f64, order: usize) -> Result<LinkRecord> {
    if !(index >= 0.0 && index.fract() == 0.0 && (index as usize) < order) {
        return Err(Error::Format(format!("symbol index {index} outside the alphabet")));
    }
    Ok(LinkRecord {
        symbol_index: index as usize,
        true_level: level,
        sample_even: even,
        sample_odd: odd,
    })
}
