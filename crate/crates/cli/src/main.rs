use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Scaleogram vision-transformer experiments on multichannel EEG.
#[derive(Parser, Debug)]
#[command(name = "scalevit", version, about, args_override_self = true)]
struct Cli {
    /// Worker threads (1 = sequential). Defaults to one per core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with quadrant-coded tones.
    Synth(SynthArgs),
    /// Write one channel's scaleogram as a PGM image.
    CwtPreview(PreviewArgs),
    /// Rank channels by PCA explained variance (CSV on stdout).
    Pca(PcaArgs),
    /// Run the k-fold protocol and write report.json, report.csv, boxplot.svg.
    Train(TrainArgs),
    /// Score a saved checkpoint on a dataset.
    Eval(EvalArgs),
    /// Merge report.json files into one table and box plot.
    Report(ReportArgs),
    /// Print the channel-subset registry as JSON.
    Subsets,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    participants: u16,
    #[arg(long, default_value_t = 8)]
    videos: u16,
    #[arg(long, default_value_t = 40)]
    channels: u16,
    #[arg(long, default_value_t = 128.0)]
    fs: f32,
    /// Seconds per trial.
    #[arg(long, default_value_t = 4.0)]
    duration: f32,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Also write participant,video,vaq,sam_v,sam_a here.
    #[arg(long)]
    labels_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct CwtArgs {
    #[arg(long, default_value_t = 4.0)]
    f_min: f64,
    #[arg(long, default_value_t = 45.0)]
    f_max: f64,
    #[arg(long, default_value_t = 224)]
    scales: usize,
    #[arg(long, default_value_t = 6.0)]
    omega0: f64,
    /// Square raster size fed to the model.
    #[arg(long, default_value_t = 224)]
    image_size: usize,
}

#[derive(Args, Debug)]
struct PreviewArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trial position in the file, from 0.
    #[arg(long)]
    trial: usize,
    /// Channel name (e.g. Fp1) or 1-based position.
    #[arg(long)]
    channel: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cwt: CwtArgs,
}

#[derive(Args, Debug)]
struct PcaArgs {
    #[arg(long)]
    data: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum LabelArg {
    Vaq,
    Sam,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum TaskArg {
    Classify,
    Regress,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FoldModeArg {
    RandomTrial,
    CrossPerson,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SchedulerArg {
    Cosine,
    Step,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PresetArg {
    /// 128 wide, 4 layers, 4 heads, patch 16, k 64.
    Default,
    /// 32 wide, 2 layers, 2 heads, patch 28, k 32.
    Small,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = PresetArg::Default)]
    model: PresetArg,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    linformer_k: Option<usize>,
    #[arg(long)]
    mlp_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Registry name (see `subsets`) or pca-K for the top K PCA channels.
    #[arg(long)]
    subset: String,
    #[arg(long, value_enum, default_value_t = LabelArg::Vaq)]
    labels: LabelArg,
    #[arg(long, value_enum, default_value_t = TaskArg::Classify)]
    task: TaskArg,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, value_enum, default_value_t = FoldModeArg::RandomTrial)]
    fold_mode: FoldModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Defaults to 5 for classification and 10 for regression.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, value_enum, default_value_t = SchedulerArg::Cosine)]
    scheduler: SchedulerArg,
    /// Cosine: final lr as a fraction of --lr.
    #[arg(long, default_value_t = 0.01)]
    final_lr_fraction: f64,
    /// Step: epochs between decays.
    #[arg(long, default_value_t = 30)]
    step_epochs: usize,
    /// Step: decay factor.
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    huber_delta: f64,
    /// Hold out this share of each training fold for early stopping instead
    /// of monitoring the test fold.
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Skip writing per-fold checkpoints.
    #[arg(long)]
    no_checkpoints: bool,
    #[command(flatten)]
    cwt: CwtArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    subset: String,
    /// Ignored for regression checkpoints.
    #[arg(long, value_enum, default_value_t = LabelArg::Vaq)]
    labels: LabelArg,
    #[command(flatten)]
    cwt: CwtArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// report.json files to merge.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Directory for table.csv and boxplot.svg.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
