//! `offload`: detection quality versus end-to-end delay for local, edge and
//! cloud perception over C-V2X.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use offload_core::dataset::ImageSize;
use offload_core::pipeline::Platform;
use offload_core::tradeoff::SelectionPolicy;

use crate::commands::{CalibrateArgs, EvalArgs};
use crate::config::{config_reference, ConfigError, ConfigFile, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "offload", version, about)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "OFFLOAD_CONFIG")]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-class AP and mAP of a detection file against ground truth.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
        #[arg(long, default_value_t = 0.0)]
        min_confidence: f64,
        /// Also write the metrics here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Payload size, delay breakdown and budget checks per strategy.
    Simulate {
        /// Detection rates to check; repeatable.
        #[arg(long = "rate-hz")]
        rate_hz: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Pareto frontier and best strategy under a delay budget.
    Tradeoff {
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long)]
        detections_dir: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long, conflicts_with = "rate_hz")]
        budget_ms: Option<f64>,
        /// Sets the budget to 1000 / rate.
        #[arg(long)]
        rate_hz: Option<f64>,
        #[arg(long)]
        min_map: Option<f64>,
        /// csv, json or plot-data.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        iou_threshold: Option<f64>,
    },
    /// Fit link throughput and per-packet overhead to observed delays.
    Calibrate {
        /// CSV with size_bytes, measured_ms and optionally known_ms.
        #[arg(long)]
        observations: PathBuf,
        /// Link whose packet size and defaults apply.
        #[arg(long)]
        platform: Platform,
        /// Non-transfer time for rows without a known_ms column.
        #[arg(long)]
        known_ms: Option<f64>,
        /// Keep this throughput (Mbit/s) and fit only the overhead.
        #[arg(long)]
        pin_throughput: Option<f64>,
        /// Write the fitted link as a config fragment.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Instance counts per class and split from YOLO label files.
    Stats {
        /// CSV with split,path; a path is a label file or a directory of them.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "640x640")]
        image: String,
    },
}

fn load(cli: &Cli) -> Result<ConfigFile> {
    let mut file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if cli.out_dir.is_some() {
        file.output_dir = cli.out_dir.clone();
    }
    Ok(file)
}

fn run(cli: Cli) -> Result<()> {
    let mut file = load(&cli)?;
    match cli.command {
        Command::Eval {
            detections,
            ground_truth,
            iou_threshold,
            min_confidence,
            out,
        } => {
            let text = commands::eval(&EvalArgs {
                detections,
                ground_truth,
                iou_threshold,
                min_confidence,
                out,
            })?;
            print!("{text}");
        }
        Command::Simulate {
            rate_hz,
            seed,
            samples,
        } => {
            if !rate_hz.is_empty() {
                file.simulate.rate_hz = Some(rate_hz);
            }
            file.seed = seed.or(file.seed);
            file.simulate.samples = samples.or(file.simulate.samples);
            let cfg = resolve(&file)?;
            print!("{}", commands::simulate(&cfg)?);
        }
        Command::Tradeoff {
            fixture,
            detections_dir,
            ground_truth,
            budget_ms,
            rate_hz,
            min_map,
            format,
            iou_threshold,
        } => {
            let t = &mut file.tradeoff;
            t.fixture = fixture.or(t.fixture.take());
            t.detections_dir = detections_dir.or(t.detections_dir.take());
            t.ground_truth = ground_truth.or(t.ground_truth.take());
            t.format = format.or(t.format.take());
            t.iou_threshold = iou_threshold.or(t.iou_threshold);
            if let Some(rate) = rate_hz {
                if !(rate > 0.0) {
                    return Err(ConfigError("--rate-hz must be positive".into()).into());
                }
                file.selection.budget_ms = Some(SelectionPolicy::for_rate(rate).budget_ms);
            }
            file.selection.budget_ms = budget_ms.or(file.selection.budget_ms);
            file.selection.min_map = min_map.or(file.selection.min_map);
            let cfg = resolve(&file)?;
            let out = commands::tradeoff(&cfg)?;
            print!("{}", out.report);
            eprint!("{}", out.summary);
        }
        Command::Calibrate {
            observations,
            platform,
            known_ms,
            pin_throughput,
            out,
        } => {
            let cfg = resolve(&file)?;
            let text = commands::calibrate_cmd(
                &cfg,
                &CalibrateArgs {
                    observations,
                    platform,
                    known_ms,
                    pin_throughput,
                    out,
                },
            )?;
            print!("{text}");
        }
        Command::Stats { manifest, image } => {
            let image: ImageSize = image.parse()?;
            let cfg = resolve(&file)?;
            print!("{}", commands::stats(&manifest, image, &cfg)?);
        }
    }
    Ok(())
}

fn resolve(file: &ConfigFile) -> Result<RunConfig> {
    let cfg = RunConfig::resolve(file)?;
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

/// 1 bad input, 2 bad configuration, 3 inputs that contradict the model.
fn exit_code(err: &anyhow::Error) -> u8 {
    use offload_core::Error as E;
    if err.chain().any(|e| e.downcast_ref::<ConfigError>().is_some()) {
        return 2;
    }
    match err.chain().find_map(|e| e.downcast_ref::<offload_core::Error>()) {
        Some(E::InconsistentMeasurement { .. } | E::NonPhysicalFit { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let reference = config_reference();
    let cmd = Cli::command()
        .after_long_help(reference.clone())
        .mut_subcommands(|sc| sc.after_long_help(reference.clone()));
    let matches = cmd.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
