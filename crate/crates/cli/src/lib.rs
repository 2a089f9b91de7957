//! `gmwb` command-line front end.
//!
//! Every command returns its report as a string; `main` prints it. Output
//! files are written atomically.

pub mod commands;
pub mod files;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gmwb_core::gpr::Target;
use gmwb_core::{ContractParams, GridConfig, HhwParams, MortalityTable, WithdrawalMode};

#[derive(Debug, Parser)]
#[command(name = "gmwb", version, about = "GMWB pricing under Heston Hull-White")]
pub struct Cli {
    /// Worker threads (default: all cores). Never changes results.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Price one contract with the hybrid tree / PDE method.
    Price(PriceArgs),
    /// No-arbitrage fee by the secant method.
    Fee(FeeArgs),
    /// Price Faure-sampled parameter sets into a training CSV.
    GenData(GenDataArgs),
    /// Fit a Gaussian process surrogate to a training CSV.
    Train(TrainArgs),
    /// Surrogate predictions for a CSV of parameter sets.
    Predict(PredictArgs),
    /// Error metrics and speed-up of a surrogate on a priced CSV.
    Evaluate(EvaluateArgs),
    /// Monte Carlo cross-check of the static price and the rate curve.
    McCheck(McCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Optimal,
    Static,
}

impl From<ModeArg> for WithdrawalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Optimal => WithdrawalMode::Optimal,
            ModeArg::Static => WithdrawalMode::Static,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Price,
    Delta,
    Fee,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Price => Target::Price,
            TargetArg::Delta => Target::Delta,
            TargetArg::Fee => Target::Fee,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sampler {
    Faure,
    Random,
}

/// Inputs shared by everything that prices.
#[derive(Debug, Clone, Args)]
pub struct PricingArgs {
    /// Model parameters (JSON); default: reference parameters.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Contract terms (JSON); default: reference contract.
    #[arg(long)]
    pub contract: Option<PathBuf>,
    /// Mortality CSV `year,death_probability`; default: no deaths.
    #[arg(long)]
    pub mortality: Option<PathBuf>,
    /// Time steps; rounded up to a multiple of the maturity.
    #[arg(long, default_value_t = 250)]
    pub steps: usize,
    /// Points on the z grid (default: same as --steps).
    #[arg(long)]
    pub space_steps: Option<usize>,
    /// Base-benefit grid intervals.
    #[arg(long, default_value_t = 100)]
    pub b_steps: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Optimal)]
    pub mode: ModeArg,
}

/// Parsed pricing inputs.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: HhwParams,
    pub contract: ContractParams,
    pub mortality: MortalityTable,
    pub grid: GridConfig,
    pub mode: WithdrawalMode,
    /// Time steps before alignment.
    pub requested_steps: usize,
}

impl PricingArgs {
    pub fn load(&self) -> Result<Setup> {
        let model = match &self.model {
            Some(p) => files::read_json(p)?,
            None => HhwParams::REFERENCE,
        };
        model.validate().context("model parameters")?;
        let contract: ContractParams = match &self.contract {
            Some(p) => files::read_json(p)?,
            None => ContractParams::reference(),
        };
        contract.validate().context("contract terms")?;
        let mortality = match &self.mortality {
            Some(p) => MortalityTable::from_csv_path(p)?,
            None => MortalityTable::zero(contract.maturity),
        };
        let grid = GridConfig {
            time_steps: self.steps,
            space_steps: self.space_steps.unwrap_or(self.steps),
            benefit_steps: self.b_steps,
            ..GridConfig::default()
        }
        .aligned(contract.maturity);
        grid.validate(contract.maturity)?;
        Ok(Setup {
            model,
            contract,
            mortality,
            grid,
            mode: self.mode.into(),
            requested_steps: self.steps,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct PriceArgs {
    #[command(flatten)]
    pub pricing: PricingArgs,
    /// Also report Delta by central bump of this relative size.
    #[arg(long)]
    pub bump: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FeeArgs {
    #[command(flatten)]
    pub pricing: PricingArgs,
    /// `hpde`, or the path of a trained surrogate.
    #[arg(long, default_value = "hpde")]
    pub engine: String,
    /// Relative tolerance on `|V - P| / P`.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub pricing: PricingArgs,
    /// Parameter box (JSON); default: reference box.
    #[arg(long = "box")]
    pub pbox: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = TargetArg::Price)]
    pub target: TargetArg,
    #[arg(long, value_enum, default_value_t = Sampler::Faure)]
    pub sampler: Sampler,
    /// Faure points to skip before the first row.
    #[arg(long, default_value_t = 0)]
    pub skip: u64,
    /// Seed of the random sampler.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Box used for input normalization; default: reference box.
    #[arg(long = "box")]
    pub pbox: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TargetArg::Price)]
    pub target: TargetArg,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optimizer iterations per start.
    #[arg(long, default_value_t = 200)]
    pub max_iters: u64,
    /// Reuse the hyperparameters of this model instead of fitting them.
    #[arg(long)]
    pub hyper_from: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Trained surrogate (JSON).
    #[arg(long)]
    pub gpr: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub pricing: PricingArgs,
    #[arg(long)]
    pub gpr: PathBuf,
    /// Priced CSV with the true values.
    #[arg(long)]
    pub data: PathBuf,
    /// Rows repriced directly to time the pricer.
    #[arg(long, default_value_t = 3)]
    pub time_samples: usize,
    /// Optional CSV of `(truth, error)` pairs.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct McCheckArgs {
    #[command(flatten)]
    pub pricing: PricingArgs,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 100)]
    pub steps_per_year: usize,
    #[arg(long, default_value_t = 20190101)]
    pub seed: u64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Outcome of a command: text for stdout and whether all checks passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub ok: bool,
}

impl Report {
    pub fn ok(text: String) -> Self {
        Report { text, ok: true }
    }
}

pub fn run(cli: Cli) -> Result<Report> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build()?;
    pool.install(|| match cli.command {
        Command::Price(a) => commands::price(&a),
        Command::Fee(a) => commands::fee(&a),
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::McCheck(a) => commands::mc_check(&a),
    })
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<Report>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}
