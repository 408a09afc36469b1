//! Batch commands.
//!
//! Every command reads the same flat config file (see [`config::KEYS`]) and
//! maps failures to exit codes: 1 usage or config, 2 data, 3 verification.

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;
pub mod train;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::datagen::Split;
use crate::error::{Error, Result};
use crate::gradcheck::format_table;
use commands::MapMode;
use config::{resolve_output, Decoder, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "scriptline", version, about = "Synthetic handwritten-line OCR: generate, train, evaluate, detect")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DecoderArg {
    Greedy,
    Beam,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset (PGM images + manifest.jsonl).
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Dataset directory (default: <output_dir>/data/<split>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train through the configured stage schedule.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue after the stage stored in this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode a dataset (or the generated held-out grid) and score it.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory or manifest.jsonl; omitted = generated grid.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        decoder: Option<DecoderArg>,
        #[arg(long)]
        beam_width: Option<usize>,
        /// Report directory (default: <output_dir>/eval).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Box formation on a probability map (or the approximate binary map).
    DetectPost {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        prob: PathBuf,
        #[arg(long)]
        thresh: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "prob")]
        mode: MapMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precision / recall / F-measure of predicted against ground-truth polygons.
    DetectEval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_thresh: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// "all" or one check name.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Summarize a finished run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<(RunConfig, String)> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok((RunConfig::default(), String::new())),
    }
}

/// Runs one parsed command, printing results to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            config,
            count,
            split,
            out,
            force,
        } => {
            let (cfg, _) = load_config(config.as_deref())?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let name = if split == Split::Train { "train" } else { "test" };
            let out = out
                .map(|p| resolve_output(&p))
                .unwrap_or_else(|| cfg.resolved_output_dir().join("data").join(name));
            let rows = commands::cmd_gen(&cfg, count, split, &out, force)?;
            println!("wrote {} samples to {}", rows.len(), out.display());
        }
        Command::Train { config, resume } => {
            let (cfg, text) = RunConfig::load(&config)?;
            let manifest = commands::cmd_train(&cfg, &text, resume.as_deref(), |l| println!("{l}"))?;
            for s in &manifest.stages {
                println!(
                    "stage {}: loss {:.4} -> {:.4} ({})",
                    s.stage, s.first_window_loss, s.last_window_loss, s.checkpoint
                );
            }
            println!("run manifest: {}", cfg.resolved_output_dir().join(commands::MANIFEST_NAME).display());
        }
        Command::Eval {
            config,
            checkpoint,
            data,
            decoder,
            beam_width,
            out,
        } => {
            let (cfg, _) = load_config(config.as_deref())?;
            let decoder = match decoder {
                Some(DecoderArg::Greedy) => Decoder::Greedy,
                Some(DecoderArg::Beam) => Decoder::Beam,
                None => cfg.decoder,
            };
            let width = beam_width.unwrap_or(cfg.beam_width);
            if width == 0 {
                return Err(Error::Config("beam width must be at least 1".into()));
            }
            let out = out
                .map(|p| resolve_output(&p))
                .unwrap_or_else(|| cfg.resolved_output_dir().join("eval"));
            let report = commands::cmd_eval(&cfg, &checkpoint, data.as_deref(), decoder, width, &out)?;
            print!("{}", commands::markdown_grid(&report));
            println!("overall CRR {:.2} WRR {:.2} over {} samples ({})", report.crr, report.wrr, report.samples, report.decoder);
        }
        Command::DetectPost {
            config,
            prob,
            thresh,
            mode,
            out,
        } => {
            let (cfg, _) = load_config(config.as_deref())?;
            let polys = commands::cmd_detect_post(&cfg, &prob, thresh.as_deref(), mode, &out)?;
            println!("{} polygons written to {}", polys.len(), out.display());
        }
        Command::DetectEval {
            gt,
            pred,
            iou_thresh,
            out,
        } => {
            let score = commands::cmd_detect_eval(&gt, &pred, iou_thresh, out.as_deref())?;
            print!("{}", commands::detection_csv(&score));
        }
        Command::Gradcheck { scope, seed, seeds } => {
            let seeds: Vec<u64> = (seed..seed + seeds.max(1)).collect();
            let results = commands::cmd_gradcheck(&scope, &seeds)?;
            println!("{}", format_table(&results));
            let failed: Vec<String> = results
                .iter()
                .filter(|r| !r.passed)
                .map(|r| format!("{} (seed {})", r.name, r.seed))
                .collect();
            if !failed.is_empty() {
                return Err(Error::Verification(format!("gradient checks failed: {}", failed.join(", "))));
            }
        }
        Command::Report { run } => {
            let path = commands::cmd_report(&resolve_output(&run))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
