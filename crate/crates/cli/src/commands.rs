//! `dewsp` subcommands.
//!
//! Stage commands read the data source from `--config` and exchange files
//! through the output directory: `tune` writes `model.json`, `backtest`
//! reads it and writes the summaries, `report` reads the summaries.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dewsp_core::market_data::Month;
use dewsp_core::synth::synth_market;

use crate::config::{RunConfig, SyntheticSource};
use crate::error::{CliError, CliResult};
use crate::formats::{self, ModelFile};
use crate::io;
use crate::pipeline::{self, WallClock};

#[derive(Debug, Parser)]
#[command(name = "dewsp", version, about = "Deep-learning equal-weight subset portfolio research engine")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (for `ingest`, the universe file).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validates per-ticker CSV files and writes a binary universe.
    Ingest {
        /// Directory of `<TICKER>.csv` files.
        #[arg(long)]
        input: PathBuf,
        /// First month to keep (`YYYY-MM`).
        #[arg(long)]
        start: Option<Month>,
        /// Last month to keep (`YYYY-MM`).
        #[arg(long)]
        end: Option<Month>,
        /// Comma-separated tickers; default every CSV in the directory.
        #[arg(long, value_delimiter = ',')]
        tickers: Vec<String>,
    },
    /// Writes the signal matrix to `features.csv`.
    Features,
    /// Searches hyperparameters and writes `model.json` and `trials.csv`.
    Tune {
        /// Number of trials; overrides the config.
        #[arg(long)]
        evals: Option<usize>,
    },
    /// Backtests every configured family with a tuned model.
    Backtest {
        /// Model file; default `<out>/model.json`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Computes metrics and plots from the summary files in the output directory.
    Report,
    /// Runs the full pipeline, or replays a manifest.
    Run {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Writes a synthetic market as per-ticker CSV files.
    Synth {
        #[arg(long)]
        assets: Option<usize>,
        #[arg(long)]
        months: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io("write", dir, e))
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Ingest {
            input,
            start,
            end,
            tickers,
        } => {
            let out = cli
                .out
                .clone()
                .ok_or_else(|| CliError::validation("ingest", "--out FILE is required"))?;
            let universe = io::load_universe_dir(input, tickers, *start, *end)?;
            io::write_universe_bin(&out, &universe)?;
            println!(
                "{} assets, {} to {} ({} months) -> {}",
                universe.n_assets(),
                universe.start(),
                universe.end(),
                universe.n_months(),
                out.display()
            );
            Ok(())
        }
        Command::Features => {
            let config = load_config(cli)?;
            let prep = pipeline::prepare(&config)?;
            let features = pipeline::features(&prep)?;
            ensure_dir(&config.out_dir)?;
            let path = config.out_dir.join(pipeline::FEATURES_FILE);
            formats::write_features(&path, &features)?;
            println!("{} rows x {} signals -> {}", features.rows.len(), features.n_features(), path.display());
            Ok(())
        }
        Command::Tune { evals } => {
            let config = load_config(cli)?;
            let evals = evals.unwrap_or(config.evals);
            if evals == 0 {
                return Err(CliError::validation("tune", "--evals must be at least 1"));
            }
            let prep = pipeline::prepare(&config)?;
            let features = pipeline::features(&prep)?;
            let tuned = pipeline::tune(&prep, &features, evals, config.seed, config.tpe(), &WallClock::new())?;
            ensure_dir(&config.out_dir)?;
            let model = ModelFile::new(
                prep.experiment.specs.clone(),
                prep.experiment.warmup,
                prep.split.clone(),
                tuned.models.clone(),
            );
            formats::write_model(&config.out_dir.join(pipeline::MODEL_FILE), &model)?;
            formats::write_trials(&config.out_dir.join(pipeline::TRIALS_FILE), &tuned.trials)?;
            if let Some(best) = tuned.trials.iter().min_by(|a, b| a.validation_mse.total_cmp(&b.validation_mse)) {
                println!("best trial {}: validation MSE {}", best.index, best.validation_mse);
            }
            Ok(())
        }
        Command::Backtest { model } => {
            let config = load_config(cli)?;
            let prep = pipeline::prepare(&config)?;
            let model_path = model.clone().unwrap_or_else(|| config.out_dir.join(pipeline::MODEL_FILE));
            let model = formats::read_model(&model_path)?;
            if model.specs != prep.experiment.specs || model.warmup != prep.experiment.warmup || model.split != prep.split {
                return Err(CliError::validation(
                    "backtest",
                    format!("{} was trained with different signals, warm-up or split", model_path.display()),
                ));
            }
            let bt = pipeline::run_backtests(&prep, &model.models)?;
            let out = &config.out_dir;
            ensure_dir(out)?;
            formats::write_returns(&out.join(pipeline::RETURNS_IS_FILE), &bt.in_sample)?;
            formats::write_returns(&out.join(pipeline::RETURNS_OOS_FILE), &bt.out_of_sample)?;
            formats::write_weights(&out.join(pipeline::WEIGHTS_FILE), &prep.universe, &bt.weights)?;
            formats::write_summary(&out.join(pipeline::SUMMARY_IS_FILE), &pipeline::curves(&bt.in_sample))?;
            formats::write_summary(&out.join(pipeline::SUMMARY_OOS_FILE), &pipeline::curves(&bt.out_of_sample))?;
            println!("{} backtests -> {}", bt.in_sample.len(), out.display());
            Ok(())
        }
        Command::Report => {
            let out = cli.out.clone().unwrap_or_else(|| load_config(cli).map(|c| c.out_dir).unwrap_or_else(|_| "out".into()));
            let is_curves = formats::read_summary(&out.join(pipeline::SUMMARY_IS_FILE))?;
            let oos_curves = formats::read_summary(&out.join(pipeline::SUMMARY_OOS_FILE))?;
            let report = pipeline::build_report(is_curves, oos_curves);
            for path in pipeline::write_report_files(&out, &report)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Run { manifest } => {
            let outcome = match manifest {
                Some(path) => {
                    let m = pipeline::read_manifest(path)?;
                    pipeline::replay(&m, cli.out.clone())?
                }
                None => pipeline::run(&load_config(cli)?)?,
            };
            let dir = &outcome.manifest.config.out_dir;
            println!("run complete -> {}", dir.display());
            for entry in &outcome.report.out_of_sample.asrir {
                match entry.value {
                    Some(v) => println!("OOS ASRIR vs {}: {:.2}%", entry.benchmark, 100.0 * v),
                    None => println!("OOS ASRIR vs {}: undefined", entry.benchmark),
                }
            }
            Ok(())
        }
        Command::Synth { assets, months } => {
            let config = match &cli.config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            let mut source = config.synthetic.clone().unwrap_or_default();
            if let Some(seed) = cli.seed {
                source.seed = seed;
            }
            source.n_assets = assets.or(source.n_assets);
            source.n_months = months.or(source.n_months);
            let SyntheticSource { seed, .. } = source;
            let universe = synth_market(&source.spec(), seed).map_err(|e| CliError::core("synth", e))?;
            let out = cli.out.clone().unwrap_or_else(|| config.out_dir.clone());
            let paths = io::write_universe_dir(&out, &universe)?;
            println!("{} files -> {}", paths.len(), out.display());
            Ok(())
        }
    }
}
