//! `icl-lab`: train models, sweep grids, integrate the kinetics theory and fit
//! the resulting tables.

mod commands;
mod config;
mod exit;
mod rundir;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Output root used when `--out` is not given.
pub const OUT_ROOT_ENV: &str = "ICL_LAB_OUT";

#[derive(Parser, Debug)]
#[command(
    name = "icl-lab",
    version,
    about = "Memorization and in-context learning kinetics laboratory"
)]
pub struct Cli {
    /// TOML file with [model], [data], [train], [sweep], [theory] and [scaling] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory. Defaults to a name derived from the config under $ICL_LAB_OUT (or ./runs).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parallel runs in a sweep.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Run seed (train.seed); for gen-data the dataset seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace an existing run directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample and save an item/label dataset.
    GenData(DataArgs),
    /// Train one model and record its evaluation series.
    Train(TrainArgs),
    /// Train every (K, N, seed) cell of a grid.
    Sweep(SweepArgs),
    /// Gradient-flow kinetics of the minimal model.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Fit result tables.
    #[command(subcommand)]
    Fit(FitCommand),
    /// Train the MLP alone across K and fit I_K(inf) against K.
    ScalingLaw(ScalingArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Item dimension (data.d and model.d).
    #[arg(long = "D")]
    pub d: Option<usize>,
    /// Dataset size, an integer or "inf" for fresh items on every sequence.
    #[arg(long = "K")]
    pub k: Option<String>,
    /// Context length.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Sequences with exactly N/2 labels of each sign.
    #[arg(long)]
    pub balanced: bool,
    /// Zipf exponent for sampling dataset items.
    #[arg(long)]
    pub zipf_alpha: Option<f64>,
    /// Dataset seed, when it should differ from the run seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// mlp_only, minimal or transformer.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub attention_init_std: Option<f64>,
    /// Fixed initial beta (minimal model).
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    /// Fixed initial w (minimal model).
    #[arg(long, allow_hyphen_values = true)]
    pub w0: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub eval_batch: Option<usize>,
    #[arg(long)]
    pub mlp_weight_decay: Option<f64>,
    #[arg(long)]
    pub attention_weight_decay: Option<f64>,
    #[arg(long)]
    pub order_param_items: Option<usize>,
    /// Stop once ICL accuracy reaches this value.
    #[arg(long)]
    pub stop_icl: Option<f64>,
    /// Stop once c1 falls to this value.
    #[arg(long)]
    pub stop_c1: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Dataset sizes, e.g. "500,1000,inf".
    #[arg(long = "Ks")]
    pub ks: Option<String>,
    /// Context lengths, e.g. "25,50,100".
    #[arg(long = "Ns")]
    pub ns: Option<String>,
    /// Seeds, e.g. "0..30" or "1,2,3".
    #[arg(long)]
    pub seeds: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct ScalingArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Dataset sizes, e.g. "500,1000,2000".
    #[arg(long = "Ks")]
    pub ks: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TheoryArgs {
    /// Context length.
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub w0: Option<f64>,
    /// L2 coefficient on w.
    #[arg(long)]
    pub lambda_w: Option<f64>,
    /// Constant c1.
    #[arg(long)]
    pub c1: Option<f64>,
    /// Constant c2.
    #[arg(long)]
    pub c2: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum TheoryCommand {
    /// Integrate the (w, beta) flow until the ICL margin is reached.
    Ode {
        #[command(flatten)]
        common: TheoryArgs,
        /// CSV with columns t (or iteration), c1, c2.
        #[arg(long)]
        c_series: Option<PathBuf>,
        /// Theory time per iteration when the c-series is indexed by iteration.
        #[arg(long)]
        time_scale: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        t_max: Option<f64>,
        /// Drop the -c2 w restoring term.
        #[arg(long)]
        no_w_damping: bool,
    },
    /// Closed-form t_ICL, K*, w_tr and the ICL/IWL loss relation.
    Predict {
        #[command(flatten)]
        common: TheoryArgs,
        /// Memorization exponent for K*.
        #[arg(long)]
        nu: Option<f64>,
        /// Context length of a measured (N, K*) calibration point.
        #[arg(long = "calibration-N")]
        calibration_n: Option<f64>,
        /// K* of the calibration point.
        #[arg(long = "calibration-K")]
        calibration_k: Option<f64>,
        /// Late-time c3 for the transient steady state.
        #[arg(long)]
        c3: Option<f64>,
        /// A loss in (0, 1) to map through the ICL/IWL relation.
        #[arg(long)]
        loss: Option<f64>,
        /// from_icl or from_iwl.
        #[arg(long)]
        direction: Option<String>,
    },
    /// Full, early-training and balanced losses over a (w, beta) grid.
    Surface {
        #[command(flatten)]
        common: TheoryArgs,
        /// MLP logit on +1 items (a point mass).
        #[arg(long, allow_hyphen_values = true)]
        phi: Option<f64>,
        /// w grid as "start:stop:step" or a list.
        #[arg(long, allow_hyphen_values = true)]
        ws: Option<String>,
        /// beta grid as "start:stop:step" or a list.
        #[arg(long, allow_hyphen_values = true)]
        betas: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
pub enum FitCommand {
    /// K* from final ICL accuracy against K in a sweep table.
    Sigmoid {
        #[arg(long)]
        input: PathBuf,
        /// Context length to select when the table holds several.
        #[arg(long = "N")]
        n: Option<usize>,
    },
    /// Log-log least squares of two columns.
    PowerLaw {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
    },
    /// Fraction of intermediate final ICL accuracies in a sweep table.
    Bimodality {
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "K")]
        k: Option<String>,
        #[arg(long = "N")]
        n: Option<usize>,
    },
    /// (L_ICL, L_IWL) after acquisition in a run record, against -1/2 log L_ICL.
    Transience {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match commands::run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit::code_for(&err)
        }
    };
    std::process::exit(code);
}
