//! Pipeline stages and the full `run`, with its replay manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dewsp_core::backtest::{self, curve_of, BacktestResult, PerformanceCurve};
use dewsp_core::experiment::{self, Context, ExperimentConfig, Models, Tuned, Windows};
use dewsp_core::hpo::{Clock, TpeConfig};
use dewsp_core::indicators::FeatureMatrix;
use dewsp_core::market_data::{Month, SplitBoundaries, Universe};
use dewsp_core::metrics;
use dewsp_core::portfolio::{PortfolioKind, PortfolioWeights};
use dewsp_core::synth::synth_market;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{self, ModelFile, ReportFile};
use crate::io;
use crate::plot;

pub const FEATURES_FILE: &str = "features.csv";
pub const MODEL_FILE: &str = "model.json";
pub const TRIALS_FILE: &str = "trials.csv";
pub const RETURNS_IS_FILE: &str = "returns_is.csv";
pub const RETURNS_OOS_FILE: &str = "returns_oos.csv";
pub const WEIGHTS_FILE: &str = "weights_oos.csv";
pub const SUMMARY_IS_FILE: &str = "summary_is.csv";
pub const SUMMARY_OOS_FILE: &str = "summary_oos.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PLOT_IS_FILE: &str = "risk_return_is.svg";
pub const PLOT_OOS_FILE: &str = "risk_return_oos.svg";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Elapsed wall-clock seconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Universe plus the input files it was read from.
pub struct Loaded {
    pub universe: Universe,
    pub inputs: Vec<FileHash>,
}

fn hash_inputs(paths: impl IntoIterator<Item = PathBuf>) -> CliResult<Vec<FileHash>> {
    paths
        .into_iter()
        .map(|path| Ok(FileHash { sha256: io::sha256_file(&path)?, path }))
        .collect()
}

fn clip(universe: Universe, start: Option<Month>, end: Option<Month>) -> CliResult<Universe> {
    if start.is_none() && end.is_none() {
        return Ok(universe);
    }
    Universe::with_window(universe.assets().to_vec(), start, end).map_err(|e| CliError::core("ingest", e))
}

/// Loads the configured data source and checks subset sizes against it.
pub fn load(config: &RunConfig) -> CliResult<Loaded> {
    let loaded = if let Some(dir) = &config.data_dir {
        let files = io::ticker_files(dir, &config.tickers)?;
        let universe = io::load_universe_dir(dir, &config.tickers, config.start, config.end)?;
        Loaded {
            universe,
            inputs: hash_inputs(files.into_iter().map(|(_, p)| p))?,
        }
    } else if let Some(path) = &config.universe {
        let universe = clip(io::read_universe_bin(path)?, config.start, config.end)?;
        Loaded {
            universe,
            inputs: hash_inputs([path.clone()])?,
        }
    } else if let Some(s) = &config.synthetic {
        let universe = synth_market(&s.spec(), s.seed).map_err(|e| CliError::core("synth", e))?;
        Loaded {
            universe: clip(universe, config.start, config.end)?,
            inputs: Vec::new(),
        }
    } else {
        return Err(CliError::validation(
            "config",
            "no data source: set data_dir, universe or [synthetic]",
        ));
    };
    config.check_sizes(loaded.universe.n_assets())?;
    log::info!(
        "universe: {} assets, {} to {} ({} months)",
        loaded.universe.n_assets(),
        loaded.universe.start(),
        loaded.universe.end(),
        loaded.universe.n_months()
    );
    Ok(loaded)
}

/// Universe, resolved experiment settings and split.
pub struct Prepared {
    pub universe: Universe,
    pub inputs: Vec<FileHash>,
    pub experiment: ExperimentConfig,
    pub split: SplitBoundaries,
    pub windows: Windows,
    pub max_n: usize,
}

pub fn prepare(config: &RunConfig) -> CliResult<Prepared> {
    let Loaded { universe, inputs } = load(config)?;
    let experiment = config.experiment();
    let split = experiment.check(&universe).map_err(|e| CliError::core("split", e))?;
    let windows = Windows::new(&split, experiment.warmup);
    Ok(Prepared {
        max_n: config.max_n(universe.n_assets()),
        universe,
        inputs,
        experiment,
        split,
        windows,
    })
}

pub fn features(prep: &Prepared) -> CliResult<FeatureMatrix> {
    experiment::features_for(&prep.universe, &prep.experiment).map_err(|e| CliError::core("features", e))
}

pub fn tune(
    prep: &Prepared,
    features: &FeatureMatrix,
    evals: usize,
    seed: u64,
    tpe: TpeConfig,
    clock: &dyn Clock,
) -> CliResult<Tuned> {
    experiment::tune_models(features, &prep.split, &prep.experiment, evals, seed, tpe, clock)
        .map_err(|e| CliError::core("tune", e))
}

/// Backtests of every configured family over both windows.
pub struct Backtests {
    pub in_sample: Vec<BacktestResult>,
    pub out_of_sample: Vec<BacktestResult>,
    /// Weights formed for every out-of-sample month.
    pub weights: Vec<PortfolioWeights>,
}

pub fn run_backtests(prep: &Prepared, models: &Models) -> CliResult<Backtests> {
    let stage = "backtest";
    let cfg = &prep.experiment;
    let context = Context::build(&prep.universe, &prep.split, cfg, models, prep.windows.formation())
        .map_err(|e| CliError::core(stage, e))?;
    let n0 = prep.universe.n_assets();
    let strategies: Vec<_> = cfg
        .families
        .iter()
        .flat_map(|&kind| {
            let mut all = context.strategies(kind, cfg, n0);
            if kind.is_subset_family() {
                all.truncate(prep.max_n);
            }
            all
        })
        .collect();
    type Job = (BacktestResult, BacktestResult, Vec<PortfolioWeights>);
    let jobs: Vec<Job> = strategies
        .par_iter()
        .map(|s| {
            let is = backtest::run_backtest(&prep.universe, s, prep.windows.in_sample.clone())?;
            let oos = backtest::run_backtest(&prep.universe, s, prep.windows.out_of_sample.clone())?;
            let plan = backtest::schedule(&prep.universe, s, prep.windows.out_of_sample.clone())?;
            Ok((is, oos, plan.weights))
        })
        .collect::<Result<_, backtest::BacktestError>>()
        .map_err(|e| CliError::core(stage, e))?;
    let mut out = Backtests {
        in_sample: Vec::with_capacity(jobs.len()),
        out_of_sample: Vec::with_capacity(jobs.len()),
        weights: Vec::new(),
    };
    for (is, oos, w) in jobs {
        out.in_sample.push(is);
        out.out_of_sample.push(oos);
        out.weights.extend(w);
    }
    out.weights.sort_by_key(|w| w.month);
    Ok(out)
}

/// Groups results into one curve per family, in first-seen order.
pub fn curves(results: &[BacktestResult]) -> Vec<PerformanceCurve> {
    let mut kinds: Vec<PortfolioKind> = Vec::new();
    for r in results {
        if !kinds.contains(&r.kind) {
            kinds.push(r.kind);
        }
    }
    kinds
        .into_iter()
        .map(|k| {
            let group: Vec<BacktestResult> = results.iter().filter(|r| r.kind == k).cloned().collect();
            curve_of(k, &group)
        })
        .collect()
}

pub fn build_report(is_curves: Vec<PerformanceCurve>, oos_curves: Vec<PerformanceCurve>) -> ReportFile {
    ReportFile {
        in_sample: metrics::build_report(is_curves),
        out_of_sample: metrics::build_report(oos_curves),
    }
}

/// Writes metrics JSON and both scatter plots into `out`.
pub fn write_report_files(out: &Path, report: &ReportFile) -> CliResult<Vec<PathBuf>> {
    let metrics_path = out.join(METRICS_FILE);
    formats::write_report(&metrics_path, report)?;
    let mut written = vec![metrics_path];
    for (file, title, r) in [
        (PLOT_IS_FILE, "In-sample: realized risk vs. return", &report.in_sample),
        (PLOT_OOS_FILE, "Out-of-sample: realized risk vs. return", &report.out_of_sample),
    ] {
        let path = out.join(file);
        io::write_bytes(&path, plot::risk_return_svg(title, &r.curves).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniverseInfo {
    pub tickers: Vec<String>,
    pub start: Month,
    pub end: Month,
    pub months: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub hpo: u64,
    pub rewsp: u64,
    pub synthetic: Option<u64>,
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub model_format_version: u32,
    pub config: RunConfig,
    pub universe: UniverseInfo,
    pub split: SplitBoundaries,
    pub windows: Windows,
    pub seeds: Seeds,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

/// Outputs of a full run.
pub struct RunOutcome {
    pub manifest: Manifest,
    pub report: ReportFile,
    pub tuned: Tuned,
}

/// Full pipeline: ingest, features, tune, backtest, report. Writes only
/// inside `config.out_dir`.
pub fn run(config: &RunConfig) -> CliResult<RunOutcome> {
    let out = config.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::io("run", &out, e))?;
    let prep = prepare(config)?;
    let mut written = Vec::new();

    let features = features(&prep)?;
    let path = out.join(FEATURES_FILE);
    formats::write_features(&path, &features)?;
    written.push(path);

    let clock = WallClock::new();
    let tuned = tune(&prep, &features, config.evals, config.seed, config.tpe(), &clock)?;
    let model = ModelFile::new(
        prep.experiment.specs.clone(),
        prep.experiment.warmup,
        prep.split.clone(),
        tuned.models.clone(),
    );
    let path = out.join(MODEL_FILE);
    formats::write_model(&path, &model)?;
    written.push(path);
    // Wall times vary between runs, so the trial log is not hashed.
    formats::write_trials(&out.join(TRIALS_FILE), &tuned.trials)?;

    let bt = run_backtests(&prep, &tuned.models)?;
    for (file, results) in [(RETURNS_IS_FILE, &bt.in_sample), (RETURNS_OOS_FILE, &bt.out_of_sample)] {
        let path = out.join(file);
        formats::write_returns(&path, results)?;
        written.push(path);
    }
    let path = out.join(WEIGHTS_FILE);
    formats::write_weights(&path, &prep.universe, &bt.weights)?;
    written.push(path);
    let (is_curves, oos_curves) = (curves(&bt.in_sample), curves(&bt.out_of_sample));
    for (file, c) in [(SUMMARY_IS_FILE, &is_curves), (SUMMARY_OOS_FILE, &oos_curves)] {
        let path = out.join(file);
        formats::write_summary(&path, c)?;
        written.push(path);
    }
    let report = build_report(is_curves, oos_curves);
    written.extend(write_report_files(&out, &report)?);

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        model_format_version: formats::MODEL_VERSION,
        config: config.clone(),
        universe: UniverseInfo {
            tickers: prep.universe.tickers().iter().map(|t| t.to_string()).collect(),
            start: prep.universe.start(),
            end: prep.universe.end(),
            months: prep.universe.n_months(),
        },
        split: prep.split.clone(),
        windows: prep.windows.clone(),
        seeds: Seeds {
            hpo: config.seed,
            rewsp: prep.experiment.rewsp_seed,
            synthetic: config.synthetic.as_ref().map(|s| s.seed),
        },
        inputs: prep.inputs.clone(),
        outputs: hash_inputs(written)?,
    };
    write_manifest(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(RunOutcome {
        manifest,
        report,
        tuned,
    })
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> CliResult<()> {
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| CliError::io("manifest", path, e))?;
    io::write_bytes(path, &json)
}

pub fn read_manifest(path: &Path) -> CliResult<Manifest> {
    let bytes = fs::read(path).map_err(|e| CliError::io("manifest", path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::validation("manifest", format!("{}: {e}", path.display())))
}

/// Re-runs a manifest's configuration after checking its inputs are unchanged.
pub fn replay(manifest: &Manifest, out_dir: Option<PathBuf>) -> CliResult<RunOutcome> {
    for input in &manifest.inputs {
        let now = io::sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(CliError::data(
                "replay",
                format!("{} changed since the manifest was written", input.path.display()),
            ));
        }
    }
    let mut config = manifest.config.clone();
    if let Some(out) = out_dir {
        config.out_dir = out;
    }
    config.validate()?;
    run(&config)
}
