//! Command-line front end: pretraining, clustering, evaluation, gradient
//! verification, and synthetic data generation.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "decs", version, about = "Deep embedding clustering driven by sample stability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the autoencoder on the reconstruction objective and write a
    /// checkpoint.
    Pretrain(PretrainArgs),
    /// Run k-means initialization plus stability-driven clustering from a
    /// pretrained checkpoint.
    Cluster(ClusterArgs),
    /// Score predicted labels against ground truth (ACC and NMI).
    Eval(EvalArgs),
    /// Verify the analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic Gaussian-blob dataset as CSV.
    Synth(SynthArgs),
}

/// Dataset selection shared by pretrain and cluster.
#[derive(Args, Clone)]
struct DataArgs {
    /// IDX image file(s); repeat to concatenate splits.
    #[arg(long, num_args = 1.., conflicts_with = "csv")]
    pub(crate) images: Vec<PathBuf>,
    /// IDX label file(s) matching --images, in order.
    #[arg(long, num_args = 0..)]
    pub(crate) labels: Vec<PathBuf>,
    /// Numeric CSV file (rows are samples).
    #[arg(long)]
    pub(crate) csv: Option<PathBuf>,
    /// Treat the final CSV column as integer truth labels.
    #[arg(long, default_value_t = false)]
    pub(crate) csv_has_labels: bool,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    pub(crate) data: DataArgs,
    /// Optional key=value defaults file; command-line flags win.
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    /// Output directory for checkpoint, loss trace, and manifest.
    #[arg(long)]
    pub(crate) out_dir: PathBuf,
    #[arg(long)]
    pub(crate) epochs: Option<usize>,
    #[arg(long)]
    pub(crate) batch_size: Option<usize>,
    /// Adam step size.
    #[arg(long)]
    pub(crate) learning_rate: Option<f64>,
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    /// Hidden encoder widths between the input and latent dims.
    #[arg(long, value_delimiter = ',')]
    pub(crate) hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub(crate) latent: Option<usize>,
    /// Input augmentation: image, vector, or none.
    #[arg(long)]
    pub(crate) augment: Option<String>,
    #[arg(long)]
    pub(crate) max_shift_px: Option<usize>,
    #[arg(long)]
    pub(crate) max_rotate_deg: Option<f64>,
    #[arg(long)]
    pub(crate) noise_sigma: Option<f64>,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    pub(crate) data: DataArgs,
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    /// Checkpoint produced by `decs pretrain`.
    #[arg(long)]
    pub(crate) checkpoint: PathBuf,
    #[arg(long)]
    pub(crate) out_dir: PathBuf,
    /// Number of clusters.
    #[arg(long)]
    pub(crate) k: Option<usize>,
    #[arg(long)]
    pub(crate) alpha: Option<f64>,
    #[arg(long)]
    pub(crate) lambda: Option<f64>,
    #[arg(long)]
    pub(crate) batch_size: Option<usize>,
    #[arg(long)]
    pub(crate) max_iter: Option<usize>,
    #[arg(long)]
    pub(crate) sgd_lr: Option<f64>,
    #[arg(long)]
    pub(crate) sgd_momentum: Option<f64>,
    #[arg(long)]
    pub(crate) label_change_tol: Option<f64>,
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    /// Write embedding/centroid snapshots every N iterations (0 = off).
    #[arg(long)]
    pub(crate) snapshot_every: Option<usize>,
    /// Optimize the literal joint objective (reconstruction + clustering).
    #[arg(long)]
    pub(crate) include_reconstruction: Option<bool>,
    /// Feed augmented inputs to the encoder during clustering: image,
    /// vector, or none (default none).
    #[arg(long)]
    pub(crate) augment: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted labels: one integer per line, or the last CSV column.
    #[arg(long)]
    pub(crate) pred: PathBuf,
    /// True labels in the same format.
    #[arg(long)]
    pub(crate) truth: PathBuf,
    /// Optional output stem; writes <stem>.txt and <stem>.csv.
    #[arg(long)]
    pub(crate) out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub(crate) seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub(crate) tolerance: f64,
    /// Number of clustering-chain configurations to sweep.
    #[arg(long, default_value_t = 20)]
    pub(crate) configs: usize,
    /// Optional report file.
    #[arg(long)]
    pub(crate) out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub(crate) k: usize,
    #[arg(long, default_value_t = 500)]
    pub(crate) per_cluster: usize,
    #[arg(long, default_value_t = 16)]
    pub(crate) dim: usize,
    /// Centers are drawn uniformly from [-center-box, center-box]^dim.
    #[arg(long, default_value_t = 5.0)]
    pub(crate) center_box: f64,
    #[arg(long, default_value_t = 0.5)]
    pub(crate) sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub(crate) seed: u64,
    /// Output CSV (features plus a final truth-label column).
    #[arg(long)]
    pub(crate) out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(args) => commands::pretrain_cmd(args),
        Command::Cluster(args) => commands::cluster_cmd(args),
        Command::Eval(args) => commands::eval_cmd(args),
        Command::Gradcheck(args) => commands::gradcheck_cmd(args),
        Command::Synth(args) => commands::synth_cmd(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
