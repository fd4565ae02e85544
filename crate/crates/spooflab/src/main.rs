//! Thin pipeline CLI over the library stages.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spooflab::error::Result;
use spooflab::exp::config::ExperimentConfig;
use spooflab::exp::stages;
use spooflab::spoofer::{SpooferConfig, SpooferKind};
use spooflab::surrogate::SurrogateTrainConfig;

#[derive(Parser)]
#[command(name = "spooflab", version, about = "Closed-loop GPS spoofing laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the configured base seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the configured trial count.
    #[arg(long, value_name = "N")]
    trials: Option<u64>,
    /// Output directory (overrides the configured one).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Ignore configuration-hash mismatches on loaded artifacts.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.run.trials = trials;
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.run.out.clone());
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute the configured experiment (trial logs + metrics report).
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Collect a snapshot dataset from twenty random-walk missions.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Calibrate the residual-band detector from nominal trials.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the filter surrogate on a collected dataset.
    TrainSurrogate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `collect`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Training epochs per slice.
        #[arg(long, default_value_t = 50)]
        epochs: usize,
    },
    /// Adversarially train an injection generator against a surrogate.
    TrainSpoofer {
        #[command(flatten)]
        common: Common,
        /// Directory written by `collect`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Directory written by `train-surrogate`.
        #[arg(long, value_name = "DIR")]
        surrogates: PathBuf,
        /// Generator objective: `nc` (noise-cancelling) or `db`
        /// (direction-biased).
        #[arg(long, default_value = "nc")]
        kind: SpooferKind,
        /// Training epochs.
        #[arg(long, default_value_t = 140)]
        epochs: usize,
    },
    /// Aggregate finished run directories into one table (and, given a
    /// nominal baseline, trajectory-shape divergence datasets).
    Report {
        #[command(flatten)]
        common: Common,
        /// Nominal (attack-free) run directory for the divergence baseline.
        #[arg(long, value_name = "DIR")]
        nominal: Option<PathBuf>,
        /// Run directories to aggregate.
        #[arg(required = true, value_name = "RUN_DIR")]
        runs: Vec<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common } => {
            let (cfg, out) = common.load()?;
            let report = stages::run_stage(&cfg, &out, common.force)?;
            println!(
                "run: {} trials of {} under '{}' -> {} (chi2 {:?}, tau {:?})",
                report.trials,
                report.mission,
                report.attack,
                out.display(),
                report.aggregate_chi2,
                report.aggregate_tau,
            );
        }
        Command::Collect { common } => {
            let (cfg, out) = common.load()?;
            let manifest = stages::collect(&cfg, &out)?;
            println!(
                "collect: {} snapshots over {} missions -> {}",
                manifest.total_snapshots,
                manifest.missions.len(),
                out.display()
            );
        }
        Command::Calibrate { common } => {
            let (cfg, out) = common.load()?;
            let tau = stages::calibrate(&cfg, &out)?;
            println!(
                "calibrate: {} trials, mean eps {:.4} m, cal fpr {:?} -> {}",
                tau.calibration.trials,
                tau.calibration.mean_eps,
                tau.calibration.cal_fpr_per_axis,
                out.display()
            );
        }
        Command::TrainSurrogate { common, data, epochs } => {
            let (cfg, out) = common.load()?;
            let tcfg = SurrogateTrainConfig {
                epochs,
                seed: cfg.run.seed,
                joseph_form: cfg.run.joseph_form,
                ..Default::default()
            };
            let manifest =
                stages::train_surrogate_stage(&cfg, &data, &out, &tcfg, common.force)?;
            println!(
                "train-surrogate: loss {:?} -> {:?}, sign agreement {:.3} -> {}",
                manifest.epoch0_test_loss,
                manifest.final_test_loss,
                manifest.sign_agreement_pos_n,
                out.display()
            );
        }
        Command::TrainSpoofer { common, data, surrogates, kind, epochs } => {
            let (cfg, out) = common.load()?;
            let scfg = SpooferConfig {
                kind,
                epochs,
                seed: cfg.run.seed,
                joseph_form: cfg.run.joseph_form,
                ..Default::default()
            };
            let path =
                stages::train_spoofer_stage(&cfg, &data, &surrogates, &scfg, &out, common.force)?;
            println!("train-spoofer: {kind} bundle -> {}", path.display());
        }
        Command::Report { common, nominal, runs } => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let agg = stages::report_stage(&runs, nominal.as_deref(), &out)?;
            println!(
                "report: {} runs, {} divergence datasets -> {}",
                agg.rows.len(),
                agg.tbd.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
