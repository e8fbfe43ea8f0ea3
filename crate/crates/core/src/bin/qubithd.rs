use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qubithd::cli::{
    cmd_compare, cmd_eval, cmd_sweep, cmd_train, CompareArgs, DatasetKind, DatasetSource, EvalArgs,
    EvalSplit, HarnessError, SweepArgs, TrainArgs, DATA_DIR_ENV,
};
use qubithd::data::SyntheticSpec;
use qubithd::model::{BinarizerMode, Feedback, SnapshotRefresh, TrainConfig};

/// Hyperdimensional classifier with stochastically binarized class models.
#[derive(Parser)]
#[command(name = "qubithd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and store it.
    Train {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// Model file to write.
        #[arg(long, default_value = "qubithd.model")]
        model: PathBuf,
        #[command(flatten)]
        output: OutputFlags,
    },
    /// Evaluate a stored model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataFlags,
        /// Which file of the dataset to score.
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: EvalSplit,
        /// Queries timed per inference path.
        #[arg(long, default_value_t = 1000)]
        latency_queries: usize,
        #[command(flatten)]
        output: OutputFlags,
    },
    /// Compare cosine, deterministic and stochastic feedback over several seeds.
    Compare {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// Number of seeds, counting up from --seed.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[command(flatten)]
        output: OutputFlags,
    },
    /// Train once per point of a grid over beta, levels, dim and alpha.
    Sweep {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// Comma-separated; defaults to --beta.
        #[arg(long = "beta-grid", id = "beta_grid", value_delimiter = ',')]
        betas: Vec<f64>,
        /// Comma-separated; defaults to --levels.
        #[arg(long = "levels-grid", id = "levels_grid", value_delimiter = ',')]
        levels: Vec<usize>,
        /// Comma-separated; defaults to --dim.
        #[arg(long = "dim-grid", id = "dim_grid", value_delimiter = ',')]
        dims: Vec<usize>,
        /// Comma-separated; defaults to --alpha.
        #[arg(long = "alpha-grid", id = "alpha_grid", value_delimiter = ',')]
        alphas: Vec<f64>,
        #[command(flatten)]
        output: OutputFlags,
    },
}

#[derive(Args)]
struct DataFlags {
    /// isolet, ucihar, mnist, csv or synthetic.
    #[arg(long)]
    dataset: DatasetKind,
    #[arg(long, env = DATA_DIR_ENV, default_value = "data")]
    data_dir: PathBuf,
    /// Training file for --dataset csv.
    #[arg(long)]
    train_file: Option<PathBuf>,
    /// Test file for --dataset csv.
    #[arg(long)]
    test_file: Option<PathBuf>,
    /// The label is the first column rather than the last.
    #[arg(long)]
    label_first: bool,
    #[arg(long, default_value_t = 4)]
    synthetic_classes: usize,
    #[arg(long, default_value_t = 16)]
    synthetic_features: usize,
    #[arg(long, default_value_t = 50)]
    synthetic_per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    synthetic_noise: f64,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long, default_value_t = 10_000)]
    dim: usize,
    #[arg(long, default_value_t = 64)]
    levels: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Maximum retraining epochs.
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Epochs without improvement before stopping.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// deterministic or stochastic.
    #[arg(long, default_value = "stochastic")]
    mode: BinarizerMode,
    /// Retrain against the integer rows with cosine instead of the snapshot.
    #[arg(long)]
    cosine_feedback: bool,
    /// Re-binarize the touched rows after every update instead of once per epoch.
    #[arg(long)]
    refresh_per_update: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Visit training points in file order.
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
}

#[derive(Args)]
struct OutputFlags {
    /// Metrics file; stdout when absent.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Omit wall-clock fields so streams compare byte for byte.
    #[arg(long)]
    no_timing: bool,
}

fn parse_split(s: &str) -> Result<EvalSplit, String> {
    match s {
        "train" => Ok(EvalSplit::Train),
        "test" => Ok(EvalSplit::Test),
        _ => Err(format!("unknown split '{s}' (expected train or test)")),
    }
}

impl DataFlags {
    fn source(&self, seed: u64) -> DatasetSource {
        DatasetSource {
            data_dir: self.data_dir.clone(),
            train_file: self.train_file.clone(),
            test_file: self.test_file.clone(),
            label_first: self.label_first,
            synthetic: SyntheticSpec {
                classes: self.synthetic_classes,
                features: self.synthetic_features,
                per_class: self.synthetic_per_class,
                noise: self.synthetic_noise,
                seed,
            },
            ..DatasetSource::new(self.dataset)
        }
    }
}

impl TrainFlags {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            levels: self.levels,
            alpha: self.alpha,
            beta: self.beta,
            max_epochs: self.epochs,
            patience: self.patience,
            mode: self.mode,
            feedback: if self.cosine_feedback {
                Feedback::NonBinarized
            } else {
                Feedback::Binarized
            },
            refresh: if self.refresh_per_update {
                SnapshotRefresh::PerUpdate
            } else {
                SnapshotRefresh::PerEpoch
            },
            seed: self.seed,
            shuffle: !self.no_shuffle,
            validation_fraction: self.validation_fraction,
        }
    }
}

fn open_metrics(path: &Option<PathBuf>) -> Result<Box<dyn Write>, HarnessError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train {
            data,
            train,
            model,
            output,
        } => {
            let args = TrainArgs {
                source: data.source(train.seed),
                config: train.config(),
                model_path: Some(model),
                timing: !output.no_timing,
            };
            let mut out = open_metrics(&output.metrics)?;
            cmd_train(&args, &mut out)?;
            out.flush()?;
        }
        Command::Eval {
            model,
            data,
            split,
            latency_queries,
            output,
        } => {
            let args = EvalArgs {
                model_path: model,
                source: data.source(0),
                split,
                latency_queries,
                timing: !output.no_timing,
            };
            let mut out = open_metrics(&output.metrics)?;
            cmd_eval(&args, &mut out)?;
            out.flush()?;
        }
        Command::Compare {
            data,
            train,
            seeds,
            output,
        } => {
            let args = CompareArgs {
                source: data.source(train.seed),
                config: train.config(),
                seeds,
                timing: !output.no_timing,
            };
            let mut out = open_metrics(&output.metrics)?;
            cmd_compare(&args, &mut out)?;
            out.flush()?;
        }
        Command::Sweep {
            data,
            train,
            betas,
            levels,
            dims,
            alphas,
            output,
        } => {
            let or =
                |grid: Vec<f64>, single: f64| if grid.is_empty() { vec![single] } else { grid };
            let or_usize =
                |grid: Vec<usize>, single: usize| if grid.is_empty() { vec![single] } else { grid };
            let args = SweepArgs {
                source: data.source(train.seed),
                config: train.config(),
                betas: or(betas, train.beta),
                levels: or_usize(levels, train.levels),
                dims: or_usize(dims, train.dim),
                alphas: or(alphas, train.alpha),
                timing: !output.no_timing,
            };
            let mut out = open_metrics(&output.metrics)?;
            cmd_sweep(&args, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qubithd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
