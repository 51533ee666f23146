//! Command-line driver: training, evaluation, single inference with state
//! dumps, stack counting and cost tables.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ppa", version, about = "Pixel processor array CNN simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Net {
    #[value(name = "TWO_LAYER", alias = "two")]
    TwoLayer,
    #[value(name = "THREE_LAYER", alias = "three")]
    ThreeLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Opt {
    Sgd,
    Adam,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network with stochastic weight quantization and write its
    /// deterministic weights.
    Train {
        #[arg(long, value_enum)]
        net: Net,
        #[arg(long, default_value_t = 12)]
        epochs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "data/mnist")]
        mnist_dir: PathBuf,
        /// Train on the first N samples only.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_enum, default_value = "adam")]
        optimizer: Opt,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long, default_value_t = 100)]
        batch: usize,
        /// Range of the uniform weight initialization.
        #[arg(long, default_value_t = 0.5)]
        init: f32,
    },
    /// Accuracy of a weight file on the test set, on the simulated array
    /// and on the dense reference.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value = "data/mnist")]
        mnist_dir: PathBuf,
        /// Multiplier on the calibrated noise sigmas; 0 is noiseless.
        #[arg(long, default_value_t = 1.0)]
        noise_sigma: f64,
        #[arg(long, value_enum, default_value = "on")]
        isolation: Switch,
        /// Analog readings averaged per neuron sum.
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Skip the simulator and score the dense reference only.
        #[arg(long)]
        oracle_only: bool,
    },
    /// Classify one test digit and optionally dump every register plane.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        dump_dir: Option<PathBuf>,
        #[arg(long, default_value = "data/mnist")]
        mnist_dir: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Stack-count random bit planes and compare with popcount.
    Count {
        #[arg(long, default_value_t = 10)]
        random: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Modeled time per network component for one inference.
    CostReport {
        /// Weight file; random weights are used when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum)]
        net: Net,
    },
    /// Choose the noise scale that puts simulated accuracy in a band, or
    /// sweep given scales. Scales multiply the nominal noise magnitudes.
    Calibrate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value = "data/mnist")]
        mnist_dir: PathBuf,
        /// Report accuracy at these scales instead of searching.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "0.92,0.94")]
        band: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,1.0")]
        bracket: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        max_probes: usize,
        #[arg(long, default_value_t = 2000)]
        limit: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
