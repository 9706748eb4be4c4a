//! Run configuration: one flat TOML file per experiment.
//!
//! ```toml
//! # where the data comes from: exactly one of data_dir, universe, [synthetic]
//! data_dir = "data"
//! tickers = ["AAPL", "MSFT"]      # empty or absent: every CSV in data_dir
//! start = "1997-01"                # optional window clip
//! end = "2019-12"
//!
//! is_fraction = 0.7
//! train_fraction = 0.5
//! signals = ["MOM(1M)", "MA(1M-9M)", "VOL(2M-12M)"]   # absent: 17 defaults
//! warmup = 12
//!
//! evals = 50
//! seed = 42
//! model_scope = "pooled"           # or "per_asset"
//!
//! families = ["DEWSP", "HEWSP-TV", "HEWSP-T", "REWSP", "EWWP", "MSRP", "MVP"]
//! max_n = 22                       # subset sizes 1..=max_n, default N0
//! covariance = "static"            # or "expanding"
//! out_dir = "out"
//! ```
//!
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use dewsp_core::experiment::{CovarianceMode, ExperimentConfig, ModelScope};
use dewsp_core::hpo::TpeConfig;
use dewsp_core::indicators::{self, SignalSpec};
use dewsp_core::market_data::{Month, SplitPlan};
use dewsp_core::portfolio::PortfolioKind;
use dewsp_core::synth::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Synthetic market used instead of files; absent fields take the
/// generator defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    #[serde(default)]
    pub seed: u64,
    pub n_assets: Option<usize>,
    pub n_months: Option<usize>,
    pub start: Option<Month>,
    pub alpha_low: Option<f64>,
    pub alpha_high: Option<f64>,
    pub momentum: Option<f64>,
    pub noise_vol: Option<f64>,
    pub market_vol: Option<f64>,
    pub base_volume: Option<f64>,
}

impl SyntheticSource {
    pub fn spec(&self) -> SynthSpec {
        let d = SynthSpec::default();
        SynthSpec {
            n_assets: self.n_assets.unwrap_or(d.n_assets),
            n_months: self.n_months.unwrap_or(d.n_months),
            start: self.start.unwrap_or(d.start),
            alpha_low: self.alpha_low.unwrap_or(d.alpha_low),
            alpha_high: self.alpha_high.unwrap_or(d.alpha_high),
            momentum: self.momentum.unwrap_or(d.momentum),
            noise_vol: self.noise_vol.unwrap_or(d.noise_vol),
            market_vol: self.market_vol.unwrap_or(d.market_vol),
            base_volume: self.base_volume.unwrap_or(d.base_volume),
        }
    }
}

fn default_is_fraction() -> f64 {
    0.7
}
fn default_train_fraction() -> f64 {
    0.5
}
fn default_evals() -> usize {
    50
}
fn default_families() -> Vec<PortfolioKind> {
    vec![
        PortfolioKind::Dewsp,
        PortfolioKind::HewspTv,
        PortfolioKind::HewspT,
        PortfolioKind::HewspV,
        PortfolioKind::Rewsp,
        PortfolioKind::Ewwp,
        PortfolioKind::Msrp,
        PortfolioKind::Mvp,
    ]
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub universe: Option<PathBuf>,
    pub synthetic: Option<SyntheticSource>,
    #[serde(default)]
    pub tickers: Vec<String>,
    pub start: Option<Month>,
    pub end: Option<Month>,

    #[serde(default = "default_is_fraction")]
    pub is_fraction: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub signals: Option<Vec<SignalSpec>>,
    pub warmup: Option<usize>,

    #[serde(default = "default_evals")]
    pub evals: usize,
    #[serde(default)]
    pub seed: u64,
    pub tpe_startup: Option<usize>,
    pub tpe_gamma: Option<f64>,
    pub tpe_candidates: Option<usize>,
    #[serde(default)]
    pub model_scope: ModelScope,

    #[serde(default = "default_families")]
    pub families: Vec<PortfolioKind>,
    pub max_n: Option<usize>,
    pub rewsp_seed: Option<u64>,
    #[serde(default)]
    pub rewsp_redraw_monthly: bool,
    #[serde(default)]
    pub covariance: CovarianceMode,

    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").unwrap_or_else(|_| unreachable!("empty config parses"))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::validation("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::new(crate::error::Category::Validation, "config", format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data_dir, &mut config.universe].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn signal_specs(&self) -> Vec<SignalSpec> {
        self.signals.clone().unwrap_or_else(SignalSpec::default_set)
    }

    pub fn tpe(&self) -> TpeConfig {
        let d = TpeConfig::default();
        TpeConfig {
            n_startup: self.tpe_startup.unwrap_or(d.n_startup),
            gamma: self.tpe_gamma.unwrap_or(d.gamma),
            n_candidates: self.tpe_candidates.unwrap_or(d.n_candidates),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let specs = self.signal_specs();
        ExperimentConfig {
            warmup: self.warmup.unwrap_or_else(|| indicators::warmup(&specs).max(12)),
            specs,
            split: SplitPlan {
                is_fraction: self.is_fraction,
                train_fraction_of_is: self.train_fraction,
            },
            model_scope: self.model_scope,
            families: self.families.clone(),
            rewsp_seed: self.rewsp_seed.unwrap_or(self.seed),
            rewsp_redraw_monthly: self.rewsp_redraw_monthly,
            covariance: self.covariance,
        }
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::validation("config", msg));
        let sources = [self.data_dir.is_some(), self.universe.is_some(), self.synthetic.is_some()];
        if sources.iter().filter(|&&s| s).count() > 1 {
            return bad("set at most one of data_dir, universe and [synthetic]".into());
        }
        if !self.tickers.is_empty() && self.data_dir.is_none() {
            return bad("tickers requires data_dir".into());
        }
        for f in [self.is_fraction, self.train_fraction] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("split fractions must lie in (0, 1), got {f}"));
            }
        }
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if s > e {
                return bad(format!("start {s} is after end {e}"));
            }
        }
        for spec in self.signal_specs() {
            spec.validate().map_err(|e| CliError::validation("config", e.to_string()))?;
        }
        if self.signals.as_ref().is_some_and(|s| s.is_empty()) {
            return bad("signals must not be empty".into());
        }
        let experiment = self.experiment();
        let needed = indicators::warmup(&experiment.specs);
        if experiment.warmup < needed {
            return bad(format!("warmup {} is shorter than the {needed} months the signals need", experiment.warmup));
        }
        if self.evals == 0 {
            return bad("evals must be at least 1".into());
        }
        self.tpe().validate().map_err(|e| CliError::validation("config", e.to_string()))?;
        if self.families.is_empty() {
            return bad("families must not be empty".into());
        }
        if self.max_n == Some(0) {
            return bad("max_n must be at least 1".into());
        }
        if let Some(n0) = self.known_universe_size() {
            self.check_sizes(n0)?;
        }
        if let Some(s) = &self.synthetic {
            s.spec()
                .validate()
                .map_err(|e| CliError::validation("config", e.to_string()))?;
        }
        Ok(())
    }

    /// Universe size when it follows from the config alone.
    pub fn known_universe_size(&self) -> Option<usize> {
        if !self.tickers.is_empty() {
            return Some(self.tickers.len());
        }
        self.synthetic.as_ref().map(|s| s.spec().n_assets)
    }

    /// Rejects subset sizes larger than the universe.
    pub fn check_sizes(&self, n0: usize) -> CliResult<()> {
        match self.max_n {
            Some(n) if n > n0 => Err(CliError::validation(
                "config",
                format!("max_n = {n} exceeds the universe size N0 = {n0}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn max_n(&self, n0: usize) -> usize {
        self.max_n.unwrap_or(n0).min(n0)
    }
}
