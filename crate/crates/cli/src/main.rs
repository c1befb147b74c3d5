//! `wflow` command-line front end.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data or validation
//! errors.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "wflow", version, about = "Dense garment correspondence and transfer with blended flows")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the JSON config.
#[derive(Debug, Args)]
struct Global {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Threads used across independent items.
    #[arg(long, global = true, value_name = "INT")]
    jobs: Option<usize>,
    /// Cycle refinement passes.
    #[arg(long, global = true, value_name = "INT")]
    k: Option<usize>,
    /// Pyramid levels of the pixel-flow estimator.
    #[arg(long, global = true, value_name = "INT")]
    levels: Option<usize>,
    /// Search radius per pyramid level.
    #[arg(long = "max-disp", global = true, value_name = "INT")]
    max_disp: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render synthetic puppets: a frame sequence or a source/target pair.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Write this many frames instead of a pair.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Sample training pairs from a directory of frame bundles.
    Pairs {
        #[arg(long)]
        input: PathBuf,
        /// Directory for pairs.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pixel flow from the query into the source, as .flo.
    Flow {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vertex flow from the query into the source, as .flo.
    Vflow {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blend a vertex flow and a pixel flow; the vertex flow's validity is the mesh mask.
    Blend {
        #[arg(long)]
        vertex: PathBuf,
        #[arg(long)]
        pixel: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Backward-warp an image with a flow.
    Warp {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer the source garment onto the query.
    Transfer {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Query-to-source flow to use instead of estimating one.
        #[arg(long)]
        flow: Option<PathBuf>,
    },
    /// Transfer followed by cycle refinement.
    Refine {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Initial query-to-source flow.
        #[arg(long)]
        flow: Option<PathBuf>,
        /// Initial source-to-query flow.
        #[arg(long = "flow-bwd")]
        flow_bwd: Option<PathBuf>,
    },
    /// SSIM and IoU report as CSV.
    Eval {
        /// ID=PRED,GT[,PRED_MASK,GT_MASK]; repeatable.
        #[arg(long)]
        item: Vec<String>,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long = "pred-mask")]
        pred_mask: Option<PathBuf>,
        #[arg(long = "gt-mask")]
        gt_mask: Option<PathBuf>,
        #[arg(long, default_value = "0")]
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flow colour-wheel PNG or loss-trace SVG.
    Viz {
        #[arg(long)]
        flow: Option<PathBuf>,
        /// Loss trace CSV written by `refine`.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<wflow::Error> for CliError {
    fn from(e: wflow::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn resolve(global: &Global) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(j) = global.jobs {
        cfg.jobs = j;
    }
    if let Some(k) = global.k {
        cfg.cycle.k = k;
    }
    if let Some(l) = global.levels {
        cfg.flow.levels = l;
    }
    if let Some(d) = global.max_disp {
        cfg.flow.max_disp = d;
    }
    cfg.flow.validate()?;
    cfg.cycle.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.global)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} worker threads: {e}", cfg.jobs)))?;
    pool.install(|| commands::dispatch(cli.command, &cfg))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
