use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "voxpart", version, about = "Part discovery on voxelized shapes from whole-shape tags")]
struct Cli {
    /// Worker threads for tensor ops (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Run configuration sources shared by commands that build networks.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Sectioned key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set net.channels=8`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic tagged corpus.
    Gen {
        #[arg(long, default_value = "chair")]
        family: String,
        #[arg(long, default_value_t = 100)]
        pos: usize,
        #[arg(long, default_value_t = 100)]
        neg: usize,
        #[arg(long, default_value_t = 32)]
        res: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train,val,test fractions.
        #[arg(long, default_value = "0.45,0.05,0.5")]
        split: String,
        /// Probability that a chair keeps its back.
        #[arg(long, default_value_t = 1.0)]
        back_prob: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelize the surface of an OBJ mesh into a binvox file.
    Voxelize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        res: usize,
    },
    /// Print the layer list and parameter count of a configured network.
    Describe {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train (or resume training) a network on a dataset manifest.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// weak, strong or multilabel (overrides train.mode).
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in --out.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs in this invocation.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Write per-shape branch maps (.seg) and scores from a checkpoint.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train, val, test or all.
        #[arg(long, default_value = "all")]
        split: String,
        /// Average-pool kernel for scores (default: final schedule kernel).
        #[arg(long)]
        kernel: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Symmetrize and/or threshold one map file.
    Postprocess {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        symmetrize: bool,
        #[arg(long)]
        threshold: Option<f64>,
        /// Map to threshold (default: every map).
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precision/recall, voxel accuracy and IOU of predicted maps.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory of .seg files from `infer`.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset manifest with ground-truth masks.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        tag: Option<String>,
        #[arg(long, default_value = "all")]
        split: String,
        /// Classifier scores (from `infer`) gating the maps.
        #[arg(long)]
        gate: Option<PathBuf>,
        /// Curve file; metrics go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank shapes by part-sensitive distance to a query.
    Search {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        query: String,
        #[arg(long)]
        tag: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the pairwise part-distance matrix.
    Embed {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        tag: String,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a point cloud with the salient region highlighted.
    Thumb {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        shape: String,
        #[arg(long)]
        tag: String,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[argument]: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command, cli.threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.downcast_ref::<voxpart::Error>().map(|e| e.category()).unwrap_or("io");
            eprintln!("error[{category}]: {e:#}");
            ExitCode::FAILURE
        }
    }
}
