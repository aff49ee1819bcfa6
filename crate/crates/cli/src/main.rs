mod commands;
mod server;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "signkit", version, about = "Keypoint gesture recognition toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random choice the command makes. Falls back to the
    /// config file, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-sequence and per-fold parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Output format for reports printed to stdout.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// JSON run configuration with optional `train`, `model`, `pipeline`
    /// and `augment` sections. Flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    /// Narrow network for CPU-scale experiments.
    #[default]
    Scaled,
    /// Full-width network.
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic gesture dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = signkit::synth::DEFAULT_JITTER)]
        jitter: f64,
        #[arg(long, default_value = "holistic543")]
        layout: String,
    },
    /// Preprocess a manifest into a tensor file with `x` and `labels`.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Write augmented copies of every sequence plus a new manifest.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        copies: Option<usize>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Train on a stratified holdout split and evaluate on its test part.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Evaluate a checkpoint on every sequence of a manifest.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation.
    Cv {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Grid search over learning rate, kernel size and LSTM width.
    Grid {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "lr-grid", value_delimiter = ',', default_value = "0.001,0.003")]
        lr_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "3")]
        kernel: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "32")]
        units: Vec<usize>,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Compare the full-width network with the published layer table.
    VerifyArch,
    /// Sliding-window predictions for a recorded sequence.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = signkit::serve::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = signkit::serve::DEFAULT_STRIDE)]
        stride: usize,
        /// Classify the whole sequence once instead of windowing it.
        #[arg(long)]
        whole: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Streaming inference over WebSocket.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
        #[arg(long, default_value_t = signkit::serve::DEFAULT_WINDOW)]
        window: usize,
    },
    /// Per-window inference latency.
    Bench {
        /// Checkpoint to time; a freshly initialized scaled model otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = signkit::serve::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Network width when the config has no `model` section.
    #[arg(long, value_enum, default_value_t = Arch::Scaled)]
    pub arch: Arch,
    /// Record wall-clock time per epoch in the history.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PipelineArgs {
    /// Model-input layout (holistic543, paper522, compact63).
    #[arg(long)]
    pub layout: Option<String>,
    /// Frames per resampled sequence.
    #[arg(long)]
    pub frames: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if cli.global.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs)
        .build_global()
    {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Synth {
            out,
            classes,
            per_class,
            jitter,
            layout,
        } => commands::synth(g, &out, classes, per_class, jitter, layout),
        Command::Preprocess {
            manifest,
            out,
            pipeline,
        } => commands::preprocess(g, &manifest, &out, &pipeline),
        Command::Augment {
            manifest,
            out,
            copies,
            pipeline,
        } => commands::augment(g, &manifest, &out, copies, &pipeline),
        Command::Train {
            manifest,
            out,
            train,
            pipeline,
        } => commands::train(g, &manifest, &out, &train, &pipeline),
        Command::Eval { model, manifest, out } => commands::eval(g, &model, &manifest, out.as_deref()),
        Command::Cv {
            manifest,
            out,
            k,
            train,
            pipeline,
        } => commands::cv(g, &manifest, &out, k, &train, &pipeline),
        Command::Grid {
            manifest,
            out,
            lr_grid,
            kernel,
            units,
            train,
            pipeline,
        } => commands::grid(g, &manifest, &out, lr_grid, kernel, units, &train, &pipeline),
        Command::VerifyArch => commands::verify_arch(g),
        Command::Infer {
            model,
            input,
            window,
            stride,
            whole,
            out,
        } => commands::infer(g, &model, &input, window, stride, whole, out.as_deref()),
        Command::Serve { model, addr, window } => server::serve(&model, &addr, window),
        Command::Bench {
            model,
            classes,
            n,
            window,
            out,
        } => commands::bench(g, model.as_deref(), classes, n, window, out.as_deref()),
    }
}
