use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use okf_core::eval::Tuning;
use okf_core::{Baseline, Parameterization};
use serde::de::DeserializeOwned;

mod commands;
mod config;
mod error;

use config::{load, EvaluateConfig, ExperimentRunConfig, Grid, ReportConfig, SimulateConfig, TrainRunConfig, TuneConfig};
use error::{CliError, CliResult, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "okf", version, about = "Noise-covariance tuning for Kalman filters")]
struct Cli {
    /// Worker threads for trajectory-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test datasets from a simulator preset.
    Simulate(SimulateArgs),
    /// Estimate Q and R from residuals of a dataset.
    Tune(TuneArgs),
    /// Optimize Q and R by gradient descent on filtering error.
    Train(TrainArgs),
    /// Score one or more parameter files on a dataset.
    Evaluate(EvaluateArgs),
    /// Run an experiment grid.
    Experiment(ExperimentArgs),
    /// Render the results in a run directory as markdown tables.
    Report(ReportArgs),
}

/// Parses enum values by their serialized (kebab-case) names.
fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Args)]
struct Common {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Filter variant: kf, kfp, ekf or ekfp.
    #[arg(long)]
    variant: Option<Baseline>,
    /// Simulator preset whose model to use; default reads it from the dataset.
    #[arg(long)]
    model_preset: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// toy, close, const_v, const_a, free, lidar, toy_lidar, toy_doppler, pedestrian or linear.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Also write CSV copies of the datasets.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// full-cholesky or diagonal.
    #[arg(long, value_parser = serde_value::<Parameterization>)]
    parameterization: Option<Parameterization>,
    #[arg(long)]
    jitter: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = serde_value::<Parameterization>)]
    parameterization: Option<Parameterization>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Parameter files; the first is the reference for paired comparisons.
    #[arg(long, num_args = 1..)]
    params: Vec<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    grid: Option<Grid>,
    #[arg(long, value_delimiter = ',')]
    benchmarks: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    baselines: Vec<Baseline>,
    /// estimated, optimized, oracle.
    #[arg(long, value_delimiter = ',', value_parser = serde_value::<Tuning>)]
    tunings: Vec<Tuning>,
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Directory holding experiment or evaluation results.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_vec<T>(slot: &mut Vec<T>, v: Vec<T>) {
    if !v.is_empty() {
        *slot = v;
    }
}

fn apply_model(variant: &mut Baseline, preset: &mut Option<String>, m: ModelArgs) {
    set(variant, m.variant);
    if m.model_preset.is_some() {
        *preset = m.model_preset;
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(a) => {
            let mut c: SimulateConfig = load(a.common.config.as_deref())?;
            if let Some(p) = a.preset {
                // A different preset invalidates a scenario carried over from a file.
                if p != c.preset {
                    c.scenario = None;
                }
                c.preset = p;
            }
            set(&mut c.seed, a.seed);
            set(&mut c.n_train, a.n_train);
            set(&mut c.n_test, a.n_test);
            c.csv |= a.csv;
            c.out_dir = a.common.out_dir.or(c.out_dir);
            commands::simulate(c)
        }
        Command::Tune(a) => {
            let mut c: TuneConfig = load(a.common.config.as_deref())?;
            apply_model(&mut c.variant, &mut c.model_preset, a.model);
            set(&mut c.dataset, a.dataset);
            set(&mut c.parameterization, a.parameterization);
            set(&mut c.jitter, a.jitter);
            c.out_dir = a.common.out_dir.or(c.out_dir);
            commands::tune(c)
        }
        Command::Train(a) => {
            let mut c: TrainRunConfig = load(a.common.config.as_deref())?;
            apply_model(&mut c.variant, &mut c.model_preset, a.model);
            set(&mut c.dataset, a.dataset);
            set(&mut c.train.batch_size, a.batch_size);
            set(&mut c.train.lr, a.lr);
            set(&mut c.train.epochs, a.epochs);
            set(&mut c.train.seed, a.seed);
            set(&mut c.train.parameterization, a.parameterization);
            c.out_dir = a.common.out_dir.or(c.out_dir);
            commands::train_cmd(c)
        }
        Command::Evaluate(a) => {
            let mut c: EvaluateConfig = load(a.common.config.as_deref())?;
            apply_model(&mut c.variant, &mut c.model_preset, a.model);
            set(&mut c.dataset, a.dataset);
            set_vec(&mut c.params, a.params);
            c.out_dir = a.common.out_dir.or(c.out_dir);
            commands::evaluate_cmd(c)
        }
        Command::Experiment(a) => {
            let mut c: ExperimentRunConfig = load(a.common.config.as_deref())?;
            set(&mut c.grid, a.grid);
            set_vec(&mut c.benchmarks, a.benchmarks);
            set_vec(&mut c.baselines, a.baselines);
            set_vec(&mut c.tunings, a.tunings);
            set_vec(&mut c.sizes, a.sizes);
            set(&mut c.n_train, a.n_train);
            set(&mut c.n_test, a.n_test);
            set(&mut c.seed, a.seed);
            set(&mut c.train.epochs, a.epochs);
            c.out_dir = a.common.out_dir.or(c.out_dir);
            commands::experiment(c)
        }
        Command::Report(a) => {
            let mut c: ReportConfig = load(a.common.config.as_deref())?;
            set(&mut c.input, a.input);
            c.out_dir = a.common.out_dir.or(c.out_dir);
            commands::report(c)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))
            .and_then(|_| run(cli.command)),
        None => run(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let text = s.to_string();
                if !e.to_string().contains(&text) {
                    eprintln!("  caused by: {text}");
                }
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
