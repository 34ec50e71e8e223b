use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use cxrprep_core::commands::{
    cmd_eval, cmd_manifest, cmd_prep, cmd_probe_eval, cmd_probe_train, EvalArgs, ManifestArgs, PrepArgs, ProbeArgs,
};
use cxrprep_core::config::PipelineConfig;
use cxrprep_core::manifest::{BuildMode, MetadataPaths};
use cxrprep_core::Result;

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  2   invalid configuration or arguments
  3   input file not found
  4   unreadable or malformed input (format, schema, parse errors)
  5   output exists (use --force)
  6   prep failure rate above max_failure_rate
  7   data error (empty mask, degenerate labels, bad dimensions, ...)
  8   I/O error
  70  train/val/test patient overlap

Settings resolve as: defaults < --config FILE < CXRPREP_<KEY> env < flags.";

#[derive(Parser)]
#[command(name = "cxrprep", version, about = "Chest X-ray preprocessing, manifests and fairness reports", after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Settings {
    /// Flat TOML file of `key = value` settings
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overwrite existing outputs
    #[arg(long, global = true)]
    force: bool,
    /// baseline | masking | cropping | clahe
    #[arg(long, global = true)]
    method: Option<String>,
    #[arg(long, global = true)]
    workers: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Tile grid as ROWSxCOLS
    #[arg(long, global = true, value_name = "RxC")]
    clahe_grid: Option<String>,
    #[arg(long, global = true)]
    clahe_clip: Option<String>,
    #[arg(long, global = true)]
    clahe_bins: Option<String>,
    /// before-downscale | after-downscale
    #[arg(long, global = true)]
    clahe_order: Option<String>,
    /// Dilation margin in pixels at the mask's native resolution
    #[arg(long, global = true)]
    margin_px: Option<String>,
    #[arg(long, global = true)]
    mask_native_res: Option<String>,
    /// Pad crops to a square before resizing
    #[arg(long, global = true)]
    letterbox: bool,
    /// dilated | raw
    #[arg(long, global = true)]
    bbox_source: Option<String>,
    /// Output size as WIDTHxHEIGHT
    #[arg(long, global = true, value_name = "WxH")]
    target_size: Option<String>,
    /// Export 16-bit inputs as 8-bit with min-max scaling
    #[arg(long, global = true)]
    export_8bit: bool,
    #[arg(long, global = true)]
    rca_threshold: Option<String>,
    #[arg(long, global = true)]
    positives_per_cell: Option<String>,
    /// Semicolon-separated label names
    #[arg(long, global = true)]
    labels: Option<String>,
    /// Semicolon-separated race groups for test sampling
    #[arg(long, global = true)]
    groups: Option<String>,
    #[arg(long, global = true)]
    val_fraction: Option<String>,
    #[arg(long, global = true)]
    max_failure_rate: Option<String>,
    /// pairwise-mean | max-min
    #[arg(long, global = true)]
    disparity: Option<String>,
    #[arg(long, global = true)]
    probe_lr: Option<String>,
    #[arg(long, global = true)]
    probe_steps: Option<String>,
    #[arg(long, global = true)]
    probe_l2: Option<String>,
    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl Settings {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_env(std::env::vars())?;
        let flags = [
            ("method", &self.method),
            ("workers", &self.workers),
            ("seed", &self.seed),
            ("clahe_grid", &self.clahe_grid),
            ("clahe_clip", &self.clahe_clip),
            ("clahe_bins", &self.clahe_bins),
            ("clahe_order", &self.clahe_order),
            ("margin_px", &self.margin_px),
            ("mask_native_res", &self.mask_native_res),
            ("bbox_source", &self.bbox_source),
            ("target_size", &self.target_size),
            ("rca_threshold", &self.rca_threshold),
            ("positives_per_cell", &self.positives_per_cell),
            ("labels", &self.labels),
            ("groups", &self.groups),
            ("val_fraction", &self.val_fraction),
            ("max_failure_rate", &self.max_failure_rate),
            ("disparity", &self.disparity),
            ("probe_lr", &self.probe_lr),
            ("probe_steps", &self.probe_steps),
            ("probe_l2", &self.probe_l2),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.letterbox {
            cfg.letterbox = true;
        }
        if self.export_8bit {
            cfg.export_8bit = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build manifest.csv, exclusions.csv and ingest_errors.csv
    Manifest {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        labels_file: PathBuf,
        #[arg(long)]
        demographics: Option<PathBuf>,
        #[arg(long)]
        rca: Option<PathBuf>,
        /// Mark every surviving record as evaluation data (external datasets)
        #[arg(long)]
        external: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Preprocess the images listed in a manifest
    Prep {
        #[arg(long)]
        manifest: PathBuf,
        /// Base for relative image paths (default: the manifest's directory)
        #[arg(long)]
        image_root: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate prediction CSVs into report.csv and report.md
    Eval {
        /// Prediction files or directories of them
        #[arg(long = "predictions", required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram probe for race information in preprocessed images
    Probe {
        #[command(subcommand)]
        action: ProbeCommand,
    },
}

#[derive(Subcommand)]
enum ProbeCommand {
    /// Fit on the train split; writes a JSON bundle
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate on the test split; writes probe_report.csv into --out
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.settings.resolve()?;
    let force = cli.settings.force;
    match cli.command {
        Command::Manifest {
            records,
            labels_file,
            demographics,
            rca,
            external,
            out,
        } => {
            let args = ManifestArgs {
                metadata: MetadataPaths {
                    records,
                    labels: labels_file,
                    demographics,
                    rca,
                },
                out_dir: out,
                mode: if external {
                    BuildMode::EvaluationOnly
                } else {
                    BuildMode::Split
                },
                force,
            };
            cmd_manifest(&args, &cfg)?;
        }
        Command::Prep {
            manifest,
            image_root,
            out,
        } => {
            let args = PrepArgs {
                manifest,
                image_root,
                out_dir: out,
                force,
            };
            cmd_prep(&args, &cfg)?;
        }
        Command::Eval { predictions, out } => {
            let args = EvalArgs {
                inputs: predictions,
                out_dir: out,
                force,
            };
            cmd_eval(&args, &cfg)?;
        }
        Command::Probe { action } => match action {
            ProbeCommand::Train { manifest, images, out } => {
                let args = ProbeArgs {
                    manifest,
                    images,
                    out,
                    force,
                };
                cmd_probe_train(&args, &cfg)?;
            }
            ProbeCommand::Eval {
                manifest,
                images,
                bundle,
                out,
            } => {
                let args = ProbeArgs {
                    manifest,
                    images,
                    out,
                    force,
                };
                for row in cmd_probe_eval(&args, &bundle)? {
                    println!(
                        "{} background_excluded={} macro_auroc={:.4}",
                        row.method, row.background_excluded, row.macro_auroc
                    );
                }
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.settings.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
