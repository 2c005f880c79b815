use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "optlab", version, about = "Deterministic optimizer runs, benchmarks and self-checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one config, or a grid of configs with --sweep.
    Run(RunArgs),
    /// Run a benchmark suite and rank the optimizers per budget.
    Bench(BenchArgs),
    /// Run the oracle and invariant suite.
    Verify(VerifyArgs),
    /// Extract one metric from a run directory as a (step, value) CSV.
    Plotdata(PlotArgs),
    /// List the preset registry.
    Presets(PresetArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Key-value config file, or a JSON config or run summary.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key; later values win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output root; defaults to $OPTLAB_OUT, then ./runs.
    #[arg(long, value_name = "DIR", env = "OPTLAB_OUT")]
    pub out: Option<PathBuf>,
    /// Concurrent runs for sweeps and suites.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl Common {
    pub fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        o
    }

    pub fn out_root(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Grid axis `KEY=V1,V2,...`; repeat for a Cartesian product.
    #[arg(long, value_name = "KEY=VALUES")]
    pub sweep: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Suite file; may also be given with --config.
    pub suite: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Deliberately break one component to confirm the suite notices.
    #[arg(long, value_name = "FAULT")]
    pub inject_fault: Option<String>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Loss,
    Gradnorm,
    Lr,
    Normgrowth,
    EffectiveLr,
    Dt,
    UpdateNorm,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Directory holding metrics.csv.
    pub run_dir: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// EMA smoothing window; 1 leaves values unchanged.
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    /// Write to this file instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PresetArgs {
    /// Only presets for this optimizer.
    #[arg(long)]
    pub optimizer: Option<String>,
}
