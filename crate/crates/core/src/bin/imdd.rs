use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use imdd::air::{fba_air, TruncatedModel};
use imdd::config::LinkConfig;
use imdd::dataset::{Dataset, Split};
use imdd::equalizer::checkpoint::{load_receiver, save_receiver};
use imdd::repro::{stream_seed, Stream};
use imdd::sweep::{
    evaluate_point, export_best, point_rows, read_results_csv, run_sweep, train_point, write_results_csv,
    SweepOptions, SweepSpec, BEST_CSV_HEADER,
};

#[derive(Parser)]
#[command(name = "imdd", version, about = "IM/DD link simulation, SIC equalization and rate estimation")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "IMDD_WORKERS", global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long)]
    diff_precode: Option<bool>,
    #[arg(long)]
    symbol_rate_baud: Option<f64>,
    #[arg(long)]
    rop_dbm: Option<f64>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any configuration key, e.g. `--set fiber.length_km=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<LinkConfig> {
        let mut c = match (&self.config, self.preset) {
            (Some(path), _) => LinkConfig::load(path)?,
            (None, Preset::Full) => LinkConfig::full_scale(),
            (None, Preset::Desk) => LinkConfig::desk_scaled(),
        };
        if let Some(v) = self.order {
            c.order = v;
        }
        if let Some(v) = self.offset {
            c.offset = v;
        }
        if let Some(v) = self.diff_precode {
            c.diff_precode = v;
        }
        if let Some(v) = self.symbol_rate_baud {
            c.symbol_rate_baud = v;
        }
        if let Some(v) = self.rop_dbm {
            c.frontend.rop_dbm = v;
        }
        if let Some(v) = self.stages {
            c.stages = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| imdd::Error::Config(format!("expected KEY=VALUE, got {kv:?}")))?;
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration as JSON.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Simulate one split and write it as a binary dataset (or CSV).
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: bool,
    },
    /// Train one network per SIC stage and save the checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate saved checkpoints on the evaluation split.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on this dataset instead of simulating the eval split.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output CSV (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter grid, resuming from an existing output directory.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoints: bool,
    },
    /// Exact trellis rates on a truncated-memory fit of the link.
    Oracle {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Channel memory of the surrogate in symbols.
        #[arg(long, default_value_t = 2)]
        memory: usize,
        #[arg(long, default_value_t = 100_000)]
        symbols: usize,
        #[arg(long, default_value_t = 20_000)]
        fit_symbols: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Best offset per (M, S, R_sym, ROP) from a results table.
    ExportBest {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn git_rev() -> String {
    if let Ok(rev) = std::env::var("IMDD_GIT_REV") {
        return rev;
    }
    std::process::Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout().write_all(bytes).map_err(Into::into),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Config { cfg } => println!("{}", serde_json::to_string_pretty(&cfg.resolve()?)?),
        Command::Simulate { cfg, split, out, csv } => {
            let config = cfg.resolve()?;
            let data = Dataset::generate(&config, split.into())?;
            if csv {
                data.write_csv(fs::File::create(&out)?)?;
            } else {
                data.save(&out)?;
            }
            println!("{}", data.hash());
        }
        Command::Train { cfg, out } => {
            let config = cfg.resolve()?;
            let trained = train_point(&config)?;
            save_receiver(&out, &trained.receiver, &config.train, &trained.dataset_hash, &trained.reports)?;
            fs::write(out.join("config.json"), config.to_json())?;
            println!("{}", serde_json::to_string_pretty(&trained.reports)?);
        }
        Command::Evaluate {
            cfg,
            checkpoint,
            dataset,
            out,
        } => {
            let config = cfg.resolve()?;
            let (receiver, _) = load_receiver(&checkpoint)?;
            let eval = match dataset {
                Some(p) => Dataset::load(&p)?,
                None => Dataset::generate(&config, Split::Eval)?,
            };
            let (genie, decision) = evaluate_point(&config, &receiver, &eval)?;
            let mut buf = Vec::new();
            write_results_csv(&mut buf, &point_rows(&config, &genie, &decision, &git_rev()))?;
            emit(out.as_deref(), &buf)?;
        }
        Command::Sweep { spec, out, checkpoints } => {
            let spec = SweepSpec::load(&spec)?;
            let summary = run_sweep(
                &spec,
                &out,
                &SweepOptions {
                    git_rev: git_rev(),
                    save_checkpoints: checkpoints,
                },
            )?;
            eprintln!("{} points, {} resumed", summary.points, summary.skipped);
        }
        Command::Oracle {
            cfg,
            memory,
            symbols,
            fit_symbols,
            out,
        } => {
            let config = cfg.resolve()?;
            let fit_seed = stream_seed(config.seed, Stream::Calibration, 0);
            let (model, fit) = TruncatedModel::from_link(&config, memory, fit_symbols, fit_seed)?;
            let result = fba_air(&model, config.stages, symbols, stream_seed(config.seed, Stream::Oracle, 0))?;
            let doc = serde_json::json!({
                "config_hash": config.config_hash(),
                "fit": fit,
                "model": model,
                "result": result,
            });
            emit(out.as_deref(), format!("{}\n", serde_json::to_string_pretty(&doc)?).as_bytes())?;
        }
        Command::ExportBest { results, out } => {
            let rows = read_results_csv(&results)?;
            let mut buf = format!("{BEST_CSV_HEADER}\n");
            for b in export_best(&rows) {
                buf.push_str(&b.to_csv());
                buf.push('\n');
            }
            emit(out.as_deref(), buf.as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<imdd::Error>().map_or(1, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
