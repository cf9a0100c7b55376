//! Operating-point evaluation, parameter grids and the results table.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::air::{stage_rates, AirResult};
use crate::config::LinkConfig;
use crate::dataset::{Dataset, Split};
use crate::equalizer::checkpoint::save_receiver;
use crate::equalizer::{sic_detect, train_sic, Conditioning, SicReceiver, SicSchedule, TrainReport};
use crate::error::{Error, Result};
use crate::repro::split_seed;

pub const CSV_HEADER: &str = "M,c,R_sym,ROP,S,stage,rate_bpcu,I_S,R_b,mc_err,seed,git_rev,config_hash,diff_precode,eval_mode,stage_err";

/// One results-table row: a stage rate at one operating point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub order: usize,
    pub offset: f64,
    pub symbol_rate_baud: f64,
    pub rop_dbm: f64,
    pub stages: usize,
    /// 1-based stage number.
    pub stage: usize,
    pub rate_bpcu: f64,
    pub aggregate_bpcu: f64,
    pub net_rate_bps: f64,
    /// Standard error of `aggregate_bpcu`.
    pub mc_err: f64,
    pub seed: u64,
    pub git_rev: String,
    pub config_hash: String,
    pub diff_precode: bool,
    pub eval_mode: Conditioning,
    pub stage_err: f64,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.order,
            self.offset,
            self.symbol_rate_baud,
            self.rop_dbm,
            self.stages,
            self.stage,
            self.rate_bpcu,
            self.aggregate_bpcu,
            self.net_rate_bps,
            self.mc_err,
            self.seed,
            self.git_rev,
            self.config_hash,
            self.diff_precode,
            self.eval_mode.label(),
            self.stage_err,
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 16 {
            return Err(Error::Format(format!("expected 16 fields, found {}", f.len())));
        }
        fn p<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Format(format!("cannot parse field {s:?}")))
        }
        let eval_mode = match f[14] {
            "genie" => Conditioning::Genie,
            "decision" => Conditioning::Decision,
            other => return Err(Error::Format(format!("unknown eval mode {other:?}"))),
        };
        Ok(Self {
            order: p(f[0])?,
            offset: p(f[1])?,
            symbol_rate_baud: p(f[2])?,
            rop_dbm: p(f[3])?,
            stages: p(f[4])?,
            stage: p(f[5])?,
            rate_bpcu: p(f[6])?,
            aggregate_bpcu: p(f[7])?,
            net_rate_bps: p(f[8])?,
            mc_err: p(f[9])?,
            seed: p(f[10])?,
            git_rev: f[11].to_string(),
            config_hash: f[12].to_string(),
            diff_precode: p(f[13])?,
            eval_mode,
            stage_err: p(f[15])?,
        })
    }
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let file = fs::File::open(path)?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != CSV_HEADER {
                return Err(Error::Format(format!("{}: unexpected header", path.display())));
            }
            continue;
        }
        if !line.is_empty() {
            rows.push(ResultRow::from_csv(&line)?);
        }
    }
    Ok(rows)
}

pub fn write_results_csv<W: Write>(mut out: W, rows: &[ResultRow]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}

/// A trained receiver together with its provenance.
pub struct TrainedPoint {
    pub receiver: SicReceiver,
    pub reports: Vec<TrainReport>,
    pub dataset_hash: String,
}

pub fn train_point(config: &LinkConfig) -> Result<TrainedPoint> {
    config.validate()?;
    let data = Dataset::generate(config, Split::Train)?;
    let (receiver, reports) = train_sic(&data.frames, config.order, SicSchedule::new(config.stages)?, &config.train)?;
    Ok(TrainedPoint {
        receiver,
        reports,
        dataset_hash: data.hash(),
    })
}

/// Genie- and decision-conditioned rates of `receiver` on the evaluation split.
pub fn evaluate_point(config: &LinkConfig, receiver: &SicReceiver, eval: &Dataset) -> Result<(AirResult, AirResult)> {
    if receiver.order != config.order || receiver.schedule.stages() != config.stages {
        return Err(Error::Config("checkpoint does not match the configuration".into()));
    }
    let labels: Vec<Vec<usize>> = eval.frames.iter().map(|f| f.labels()).collect();
    let rates = |mode| -> Result<AirResult> {
        let post = sic_detect(&eval.frames, receiver, mode)?;
        stage_rates(&labels, &post, &receiver.schedule, config.order, config.symbol_rate_baud)
    };
    Ok((rates(Conditioning::Genie)?, rates(Conditioning::Decision)?))
}

/// Table rows for one evaluated operating point, genie rows first.
pub fn point_rows(config: &LinkConfig, genie: &AirResult, decision: &AirResult, git_rev: &str) -> Vec<ResultRow> {
    let hash = config.config_hash();
    let mut rows = Vec::new();
    for (mode, air) in [(Conditioning::Genie, genie), (Conditioning::Decision, decision)] {
        for (s, stage) in air.per_stage.iter().enumerate() {
            rows.push(ResultRow {
                order: config.order,
                offset: config.offset,
                symbol_rate_baud: config.symbol_rate_baud,
                rop_dbm: config.frontend.rop_dbm,
                stages: config.stages,
                stage: s + 1,
                rate_bpcu: stage.rate,
                aggregate_bpcu: air.aggregate,
                net_rate_bps: air.net_rate_bps,
                mc_err: air.mc_std_error,
                seed: config.seed,
                git_rev: git_rev.to_string(),
                config_hash: hash.clone(),
                diff_precode: config.diff_precode,
                eval_mode: mode,
                stage_err: stage.std_error,
            });
        }
    }
    rows
}

/// Trains and evaluates one operating point, optionally saving checkpoints.
pub fn run_point(config: &LinkConfig, git_rev: &str, checkpoint_dir: Option<&Path>) -> Result<Vec<ResultRow>> {
    let trained = train_point(config)?;
    if let Some(dir) = checkpoint_dir {
        save_receiver(dir, &trained.receiver, &config.train, &trained.dataset_hash, &trained.reports)?;
    }
    let eval = Dataset::generate(config, Split::Eval)?;
    let (genie, decision) = evaluate_point(config, &trained.receiver, &eval)?;
    Ok(point_rows(config, &genie, &decision, git_rev))
}

/// Cartesian grid over a base configuration. Empty axes keep the base value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: LinkConfig,
    #[serde(default)]
    pub orders: Vec<usize>,
    #[serde(default)]
    pub stages: Vec<usize>,
    #[serde(default)]
    pub diff_precode: Vec<bool>,
    #[serde(default)]
    pub symbol_rates_baud: Vec<f64>,
    #[serde(default)]
    pub rops_dbm: Vec<f64>,
    #[serde(default)]
    pub offsets: Vec<f64>,
    #[serde(default = "one")]
    pub repetitions: usize,
}

fn one() -> usize {
    1
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Grid configurations in canonical order: order, stages, precoding,
    /// symbol rate, ROP, offset, repetition. Repetition 0 keeps the base seed.
    pub fn points(&self) -> Result<Vec<LinkConfig>> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        let b = &self.base;
        let mut out = Vec::new();
        for &order in &axis(&self.orders, b.order) {
            for &stages in &axis(&self.stages, b.stages) {
                for &pre in &axis(&self.diff_precode, b.diff_precode) {
                    for &rate in &axis(&self.symbol_rates_baud, b.symbol_rate_baud) {
                        for &rop in &axis(&self.rops_dbm, b.frontend.rop_dbm) {
                            for &c in &axis(&self.offsets, b.offset) {
                                for rep in 0..self.repetitions {
                                    let mut cfg = b.clone();
                                    cfg.order = order;
                                    cfg.stages = stages;
                                    cfg.diff_precode = pre;
                                    cfg.symbol_rate_baud = rate;
                                    cfg.frontend.rop_dbm = rop;
                                    cfg.offset = c;
                                    if rep > 0 {
                                        cfg.seed = split_seed(b.seed, rep as u64);
                                    }
                                    cfg.validate()?;
                                    out.push(cfg);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    config_hash: String,
    rows: Vec<ResultRow>,
}

pub struct SweepLayout {
    pub root: PathBuf,
}

impl SweepLayout {
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }
    pub fn results(&self) -> PathBuf {
        self.root.join("results.csv")
    }
    pub fn config(&self, hash: &str) -> PathBuf {
        self.root.join("configs").join(format!("{hash}.json"))
    }
    pub fn checkpoints(&self, hash: &str) -> PathBuf {
        self.root.join("checkpoints").join(hash)
    }
}

/// Completed points recorded in the manifest. A torn final line is ignored.
fn read_manifest(path: &Path) -> Result<BTreeMap<String, Vec<ResultRow>>> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    for line in BufReader::new(fs::File::open(path)?).lines() {
        if let Ok(entry) = serde_json::from_str::<ManifestEntry>(&line?) {
            done.insert(entry.config_hash, entry.rows);
        }
    }
    Ok(done)
}

/// Ends a torn final manifest line so later appends start on a fresh line.
fn terminate_last_line(path: &Path) -> Result<()> {
    let Ok(bytes) = fs::read(path) else {
        return Ok(());
    };
    if bytes.last().is_some_and(|&b| b != b'\n') {
        fs::OpenOptions::new().append(true).open(path)?.write_all(b"\n")?;
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct SweepOptions {
    pub git_rev: String,
    pub save_checkpoints: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub points: usize,
    pub skipped: usize,
    pub rows: Vec<ResultRow>,
}

/// Runs every grid point not yet in the manifest under `out`, appending each
/// completed point, then rewrites `results.csv` in canonical grid order.
pub fn run_sweep(spec: &SweepSpec, out: &Path, options: &SweepOptions) -> Result<SweepSummary> {
    let layout = SweepLayout { root: out.to_path_buf() };
    fs::create_dir_all(out.join("configs"))?;
    let points = spec.points()?;
    let mut done = read_manifest(&layout.manifest())?;
    terminate_last_line(&layout.manifest())?;
    let mut skipped = 0;
    let mut seen = HashSet::new();
    for cfg in &points {
        let hash = cfg.config_hash();
        if !seen.insert(hash.clone()) {
            continue;
        }
        if done.contains_key(&hash) {
            skipped += 1;
            continue;
        }
        fs::write(layout.config(&hash), cfg.to_json())?;
        let ckpt = options.save_checkpoints.then(|| layout.checkpoints(&hash));
        let rows = run_point(cfg, &options.git_rev, ckpt.as_deref())?;
        let entry = serde_json::to_string(&ManifestEntry {
            config_hash: hash.clone(),
            rows: rows.clone(),
        })?;
        let mut f = fs::OpenOptions::new().create(true).append(true).open(layout.manifest())?;
        writeln!(f, "{entry}")?;
        f.sync_all()?;
        done.insert(hash, rows);
    }
    let mut seen = HashSet::new();
    let rows: Vec<ResultRow> = points
        .iter()
        .map(|c| c.config_hash())
        .filter(|h| seen.insert(h.clone()))
        .flat_map(|h| done[&h].clone())
        .collect();
    let mut csv = Vec::new();
    write_results_csv(&mut csv, &rows)?;
    write_atomic(&layout.results(), &csv)?;
    Ok(SweepSummary {
        points: seen.len(),
        skipped,
        rows,
    })
}

/// Best offset per `(M, S, R_sym, ROP, eval mode)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestPoint {
    pub order: usize,
    pub stages: usize,
    pub symbol_rate_baud: f64,
    pub rop_dbm: f64,
    pub eval_mode: Conditioning,
    pub offset: f64,
    pub diff_precode: bool,
    /// Mean over repetitions.
    pub aggregate_bpcu: f64,
    pub net_rate_bps: f64,
    pub mc_err: f64,
    pub repetitions: usize,
}

pub const BEST_CSV_HEADER: &str = "M,S,R_sym,ROP,eval_mode,c,diff_precode,I_S,R_b,mc_err,repetitions";

impl BestPoint {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.order,
            self.stages,
            self.symbol_rate_baud,
            self.rop_dbm,
            self.eval_mode.label(),
            self.offset,
            self.diff_precode,
            self.aggregate_bpcu,
            self.net_rate_bps,
            self.mc_err,
            self.repetitions
        )
    }
}

/// Argmax of `R_b` over the offset (and precoding) per group, averaging
/// repetitions first. Ties go to the smaller offset.
pub fn export_best(rows: &[ResultRow]) -> Vec<BestPoint> {
    type Candidate = (u64, bool);
    // group key -> candidate -> (sum I_S, sum R_b, sum se^2, count, offset)
    let mut groups: BTreeMap<(usize, usize, u64, u64, u8), BTreeMap<Candidate, (f64, f64, f64, usize, f64)>> =
        BTreeMap::new();
    let mut seen = HashSet::new();
    for r in rows {
        // Stage rows repeat the aggregate; count each point once.
        if !seen.insert((r.config_hash.clone(), r.eval_mode)) {
            continue;
        }
        let key = (
            r.order,
            r.stages,
            r.symbol_rate_baud.to_bits(),
            r.rop_dbm.to_bits(),
            (r.eval_mode == Conditioning::Decision) as u8,
        );
        let cand = (ordered_bits(r.offset), r.diff_precode);
        let e = groups.entry(key).or_default().entry(cand).or_insert((0.0, 0.0, 0.0, 0, r.offset));
        e.0 += r.aggregate_bpcu;
        e.1 += r.net_rate_bps;
        e.2 += r.mc_err * r.mc_err;
        e.3 += 1;
    }
    groups
        .into_iter()
        .map(|((order, stages, rate, rop, mode), cands)| {
            // Candidates iterate in increasing offset; strict `>` keeps the first of ties.
            let mut best: Option<(Candidate, (f64, f64, f64, usize, f64))> = None;
            for (c, v) in cands {
                if best.as_ref().is_none_or(|(_, b)| v.1 / v.3 as f64 > b.1 / b.3 as f64) {
                    best = Some((c, v));
                }
            }
            let ((_, pre), (s_i, s_rb, s_se, n, offset)) = best.expect("non-empty group");
            BestPoint {
                order,
                stages,
                symbol_rate_baud: f64::from_bits(rate),
                rop_dbm: f64::from_bits(rop),
                eval_mode: if mode == 1 { Conditioning::Decision } else { Conditioning::Genie },
                offset,
                diff_precode: pre,
                aggregate_bpcu: s_i / n as f64,
                net_rate_bps: s_rb / n as f64,
                mc_err: s_se.sqrt() / n as f64,
                repetitions: n,
            }
        })
        .collect()
}

/// Maps an `f64` to a `u64` with the same ordering.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}
