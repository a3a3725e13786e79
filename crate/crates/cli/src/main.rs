//! `ergoflow` command-line pipeline.
//!
//! Every command writes CSV/JSON artifacts plus a `manifest.json` into its
//! output directory. Exit status is 0 on success, 2 for configuration or
//! input errors and 3 for numerical failures at run time.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ergoflow::cfm::TrainConfig;
use ergoflow::presets::Preset;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Config(format!("{}: {e}", path.display()))
    }
}

impl From<ergoflow::Error> for CliError {
    fn from(e: ergoflow::Error) -> Self {
        use ergoflow::Error::*;
        match e {
            NonFinite(_) | Diverged { .. } | LowAcceptance { .. } | DegenerateRow(_) | TrainingDiverged { .. } => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ergoflow", version, about = "Ergodic coverage trajectories through a flow-matched map")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a velocity field and write checkpoint, log and manifest.
    Train(TrainArgs),
    /// Sample latent cycles and push them through a checkpoint.
    Synth(commands::SynthArgs),
    /// Metrics report for a checkpoint and optional trajectory.
    Eval(commands::EvalArgs),
    /// Grid-RMSE against an i.i.d. reference across cycle counts.
    Convergence(commands::ConvergenceArgs),
    /// Train and evaluate the three penalty settings of the no-fly preset.
    Sweep(commands::SweepArgs),
    /// Turn a raw demand grid into a gridded target density.
    Ingest(commands::IngestArgs),
    /// Independent agents sharing one map, with pooled-rate diagnostics.
    Fleet(commands::FleetArgs),
    /// Tabulate a checkpoint's map on a bilinear lookup table.
    Distill(commands::DistillArgs),
}

#[derive(Debug, Args)]
pub struct ConfigSource {
    /// Training config JSON.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Shipped preset: exp1, exp2 or exp3.
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// One flag per scalar config field; unset flags leave the file's value.
#[derive(Debug, Default, Clone, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_base: Option<f64>,
    #[arg(long)]
    pub eps_sink: Option<f64>,
    #[arg(long)]
    pub sinkhorn_iters: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub lambda_nfz: Option<f64>,
    #[arg(long)]
    pub lambda_acc: Option<f64>,
    #[arg(long)]
    pub lambda_energy: Option<f64>,
    #[arg(long)]
    pub rk4_steps_train: Option<usize>,
    #[arg(long)]
    pub penalty_sample_count: Option<usize>,
    #[arg(long)]
    pub acc_sample_count: Option<usize>,
    #[arg(long)]
    pub acc_fd_step: Option<f64>,
    #[arg(long)]
    pub energy_chunk_len: Option<usize>,
    #[arg(long)]
    pub inference_steps: Option<usize>,
    /// `sample` or `barycentric`.
    #[arg(long)]
    pub pairing: Option<String>,
    #[arg(long)]
    pub net_depth: Option<usize>,
    #[arg(long)]
    pub net_hidden_dim: Option<usize>,
}

impl Overrides {
    fn patch(&self, v: &mut Value) {
        let num = |x: f64| serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number);
        let fields: [(&str, Option<Value>); 17] = [
            ("seed", self.seed.map(Value::from)),
            ("epochs", self.epochs.map(Value::from)),
            ("batch_size", self.batch_size.map(Value::from)),
            ("lr_base", self.lr_base.map(num)),
            ("eps_sink", self.eps_sink.map(num)),
            ("sinkhorn_iters", self.sinkhorn_iters.map(Value::from)),
            ("delta", self.delta.map(num)),
            ("lambda_nfz", self.lambda_nfz.map(num)),
            ("lambda_acc", self.lambda_acc.map(num)),
            ("lambda_energy", self.lambda_energy.map(num)),
            ("rk4_steps_train", self.rk4_steps_train.map(Value::from)),
            ("penalty_sample_count", self.penalty_sample_count.map(Value::from)),
            ("acc_sample_count", self.acc_sample_count.map(Value::from)),
            ("acc_fd_step", self.acc_fd_step.map(num)),
            ("energy_chunk_len", self.energy_chunk_len.map(Value::from)),
            ("inference_steps", self.inference_steps.map(Value::from)),
            ("pairing", self.pairing.clone().map(Value::from)),
        ];
        for (key, val) in fields {
            if let Some(val) = val {
                v[key] = val;
            }
        }
        if let Some(d) = self.net_depth {
            v["net"]["depth"] = d.into();
        }
        if let Some(h) = self.net_hidden_dim {
            v["net"]["hidden_dim"] = h.into();
        }
    }
}

impl ConfigSource {
    /// Reads the config (file or preset, defaulting to exp1), applies flag
    /// overrides and validates the result.
    pub fn load(&self) -> Result<TrainConfig, CliError> {
        let text = match (&self.config, &self.preset) {
            (Some(path), _) => std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?,
            (None, Some(name)) => name.parse::<Preset>()?.json().to_string(),
            (None, None) => Preset::Exp1.json().to_string(),
        };
        let mut v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        self.overrides.patch(&mut v);
        let config: TrainConfig = serde_json::from_value(v).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Print losses every this many epochs (0 disables).
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Convergence(a) => commands::convergence(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Ingest(a) => commands::ingest(&a),
        Command::Fleet(a) => commands::fleet(&a),
        Command::Distill(a) => commands::distill(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ergoflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
