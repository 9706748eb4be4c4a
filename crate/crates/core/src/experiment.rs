//! End-to-end experiment over one universe: features, model selection,
//! forecasts and every portfolio family over the in-sample and out-of-sample
//! windows.
//!
//! Datasets only contain rows whose target month falls inside the same
//! window as the row, so training never sees a validation return and neither
//! sees a test return.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::backtest::{self, BacktestResult, CovarianceSource, Forecasts, Strategy, SubsetFamily};
use crate::hpo::{self, Clock, TpeConfig, Trial};
use crate::indicators::{self, FeatureMatrix, SignalSpec};
use crate::market_data::{MarketDataError, SplitBoundaries, SplitPlan, Universe};
use crate::neural::{self, Dataset, NeuralError, TrainedModel};
use crate::portfolio::{self, Forecaster, PortfolioKind, PortfolioWeights};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Scope of the forecasting model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelScope {
    /// One model over every asset's rows.
    #[default]
    Pooled,
    /// One model per asset, sharing the hyperparameters selected on pooled data.
    PerAsset,
}

/// Covariance estimation for the optimised benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Train + validation months, fixed for the whole backtest.
    #[default]
    Static,
    /// All realised months up to each formation month.
    Expanding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub specs: Vec<SignalSpec>,
    pub split: SplitPlan,
    /// First month with features; at least the longest signal look-back.
    pub warmup: usize,
    pub model_scope: ModelScope,
    pub families: Vec<PortfolioKind>,
    pub rewsp_seed: u64,
    pub rewsp_redraw_monthly: bool,
    pub covariance: CovarianceMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let specs = SignalSpec::default_set();
        Self {
            warmup: indicators::warmup(&specs).max(12),
            specs,
            split: SplitPlan::default(),
            model_scope: ModelScope::Pooled,
            families: PortfolioKind::ALL.to_vec(),
            rewsp_seed: 0,
            rewsp_redraw_monthly: false,
            covariance: CovarianceMode::Static,
        }
    }
}

impl ExperimentConfig {
    /// Checks the configuration against a universe before any work is done.
    pub fn check(&self, universe: &Universe) -> Result<SplitBoundaries> {
        for spec in &self.specs {
            spec.validate()?;
        }
        let needed = indicators::warmup(&self.specs);
        if self.warmup < needed {
            return Err(indicators::IndicatorError::InsufficientWarmup {
                start: self.warmup,
                needed,
            }
            .into());
        }
        let split = market_data_split(universe, &self.split)?;
        // Need at least two labelled training months after warm-up.
        if self.warmup + 2 >= split.train.end {
            return Err(MarketDataError::WindowTooShort {
                months: universe.n_months(),
                min: self.warmup + 3,
            }
            .into());
        }
        Ok(split)
    }
}

fn market_data_split(universe: &Universe, plan: &SplitPlan) -> Result<SplitBoundaries> {
    Ok(crate::market_data::split(universe, plan)?)
}

/// Realised-month windows over which portfolios are evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windows {
    pub in_sample: Range<usize>,
    pub out_of_sample: Range<usize>,
}

impl Windows {
    pub fn new(split: &SplitBoundaries, warmup: usize) -> Self {
        let is_end = split.in_sample().end;
        Self {
            in_sample: warmup + 1..is_end,
            out_of_sample: is_end..split.total(),
        }
    }

    /// Formation months needed to cover both windows.
    pub fn formation(&self) -> Range<usize> {
        self.in_sample.start - 1..self.out_of_sample.end - 1
    }
}

/// Labelled rows whose month lies in `months` and whose target month does too.
pub fn dataset_for(features: &FeatureMatrix, months: Range<usize>) -> Dataset {
    let inner = months.start..months.end.saturating_sub(1);
    let subset = FeatureMatrix {
        tickers: features.tickers.clone(),
        specs: features.specs.clone(),
        window: inner.clone(),
        rows: features
            .rows
            .iter()
            .filter(|r| inner.contains(&r.month))
            .cloned()
            .collect(),
    };
    Dataset::from_features(&subset)
}

/// Training and validation datasets for the split.
pub fn datasets(features: &FeatureMatrix, split: &SplitBoundaries, warmup: usize) -> (Dataset, Dataset) {
    (
        dataset_for(features, warmup.max(split.train.start)..split.train.end),
        dataset_for(features, split.validation.clone()),
    )
}

/// Fitted forecasting model(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Models {
    Pooled(TrainedModel),
    PerAsset(Vec<TrainedModel>),
}

impl Models {
    pub fn forecaster(&self) -> Forecaster<'_> {
        match self {
            Models::Pooled(m) => Forecaster::Pooled(m),
            Models::PerAsset(ms) => Forecaster::PerAsset(ms),
        }
    }

    pub fn hyperparameters(&self) -> Option<neural::Hyperparameters> {
        match self {
            Models::Pooled(m) => Some(m.hyperparameters),
            Models::PerAsset(ms) => ms.first().map(|m| m.hyperparameters),
        }
    }
}

/// Outcome of model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub models: Models,
    pub trials: Vec<Trial>,
}

/// Features over every month from the warm-up onward.
pub fn features_for(universe: &Universe, config: &ExperimentConfig) -> Result<FeatureMatrix> {
    Ok(indicators::build_features(
        universe,
        &config.specs,
        config.warmup..universe.n_months(),
    )?)
}

/// Searches hyperparameters on pooled data and fits the configured model scope.
pub fn tune_models(
    features: &FeatureMatrix,
    split: &SplitBoundaries,
    config: &ExperimentConfig,
    n_evals: usize,
    seed: u64,
    tpe: TpeConfig,
    clock: &dyn Clock,
) -> Result<Tuned> {
    let (train_set, val_set) = datasets(features, split, config.warmup);
    let (pooled, trials) = hpo::tune(&train_set, &val_set, n_evals, seed, tpe, clock)?;
    let models = match config.model_scope {
        ModelScope::Pooled => Models::Pooled(pooled),
        ModelScope::PerAsset => {
            let hp = pooled.hyperparameters;
            let mut models = Vec::with_capacity(features.tickers.len());
            for asset in 0..features.tickers.len() {
                let own = features.for_asset(asset);
                let (train_set, val_set) = datasets(&own, split, config.warmup);
                let model = neural::init_model(&hp, own.n_features(), derive_seed(seed, (1 << 32) + asset as u64))?;
                let (trained, _) = neural::train(model, &train_set, &val_set).map_err(|e| match e {
                    NeuralError::NonFiniteLoss { .. } => Error::from(hpo::HpoError::AllTrialsDiverged),
                    other => other.into(),
                })?;
                models.push(trained);
            }
            Models::PerAsset(models)
        }
    };
    Ok(Tuned { models, trials })
}

/// Everything needed to form weights at a range of formation months.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub deep: Forecasts,
    pub historical: BTreeMap<PortfolioKind, Forecasts>,
    /// Expected returns fed to the max-Sharpe optimiser.
    pub msrp_mu: Forecasts,
    pub covariance: CovarianceSource,
}

impl Context {
    /// Builds forecasts for formation months `formation`, using only data
    /// up to `formation.end - 1`.
    pub fn build(
        universe: &Universe,
        split: &SplitBoundaries,
        config: &ExperimentConfig,
        models: &Models,
        formation: Range<usize>,
    ) -> Result<Self> {
        let features = indicators::build_features(universe, &config.specs, config.warmup..formation.end)?;
        let mut book = BTreeMap::new();
        for t in formation {
            book.insert(t, portfolio::deep_forecast(models.forecaster(), &features, t)?);
        }
        let mut historical = BTreeMap::new();
        for kind in [PortfolioKind::HewspTv, PortfolioKind::HewspT, PortfolioKind::HewspV] {
            if let Some(scope) = kind.historical_scope() {
                historical.insert(
                    kind,
                    Forecasts::Static(portfolio::historical_mean_forecast(universe, split, scope)?),
                );
            }
        }
        let msrp_mu = historical[&PortfolioKind::HewspTv].clone();
        let covariance = match config.covariance {
            CovarianceMode::Static => {
                let months = portfolio::HistoricalScope::TrainValidation.months(split);
                CovarianceSource::Static(portfolio::sample_covariance(
                    &portfolio::returns_matrix(universe, months.clone()),
                    months,
                )?)
            }
            CovarianceMode::Expanding => CovarianceSource::Expanding { start: 1 },
        };
        Ok(Self {
            deep: Forecasts::Monthly(book),
            historical,
            msrp_mu,
            covariance,
        })
    }

    /// Subset family for `kind`, if it is one.
    pub fn subset_family(&self, kind: PortfolioKind, config: &ExperimentConfig) -> Option<SubsetFamily<'_>> {
        match kind {
            PortfolioKind::Dewsp => Some(SubsetFamily::Ranked {
                kind,
                forecasts: &self.deep,
            }),
            PortfolioKind::HewspTv | PortfolioKind::HewspT | PortfolioKind::HewspV => Some(SubsetFamily::Ranked {
                kind,
                forecasts: &self.historical[&kind],
            }),
            PortfolioKind::Rewsp => Some(SubsetFamily::Random {
                seed: config.rewsp_seed,
                redraw_monthly: config.rewsp_redraw_monthly,
            }),
            _ => None,
        }
    }

    /// Every strategy of family `kind`: one per `N` for subset families.
    pub fn strategies(&self, kind: PortfolioKind, config: &ExperimentConfig, n0: usize) -> Vec<Strategy<'_>> {
        if let Some(family) = self.subset_family(kind, config) {
            return (1..=n0).map(|n| family.strategy(n)).collect();
        }
        alloc::vec![match kind {
            PortfolioKind::Msrp => Strategy::MaxSharpe {
                forecasts: &self.msrp_mu,
                covariance: &self.covariance,
            },
            PortfolioKind::Mvp => Strategy::MinVariance {
                covariance: &self.covariance,
            },
            _ => Strategy::EqualWhole,
        }]
    }
}

/// Backtests of one family over `window`, one per strategy.
pub fn family_results(
    universe: &Universe,
    context: &Context,
    config: &ExperimentConfig,
    kind: PortfolioKind,
    window: Range<usize>,
) -> Result<Vec<BacktestResult>> {
    context
        .strategies(kind, config, universe.n_assets())
        .iter()
        .map(|s| backtest::run_backtest(universe, s, window.clone()).map_err(Error::from))
        .collect()
}

/// Weights of every configured family and size formed at month `t`.
pub fn weights_at_month(
    universe: &Universe,
    context: &Context,
    config: &ExperimentConfig,
    t: usize,
) -> Result<Vec<PortfolioWeights>> {
    let mut out = Vec::new();
    for &kind in &config.families {
        for s in context.strategies(kind, config, universe.n_assets()) {
            out.push(backtest::weights_at(universe, &s, t)?);
        }
    }
    Ok(out)
}

/// Result of recomputing formation-month weights on truncated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub month: usize,
    pub weights_checked: usize,
    /// Labels (`family/N`) whose weights changed under truncation.
    pub mismatches: Vec<String>,
}

/// Recomputes every weight formed at month `t` from the universe cut after
/// month `t` and compares bit-for-bit with the full-data computation.
pub fn audit_month(
    universe: &Universe,
    split: &SplitBoundaries,
    config: &ExperimentConfig,
    models: &Models,
    t: usize,
) -> Result<AuditOutcome> {
    let full_ctx = Context::build(universe, split, config, models, t..t + 1)?;
    let full = weights_at_month(universe, &full_ctx, config, t)?;
    let cut = universe.truncated(t);
    let cut_ctx = Context::build(&cut, split, config, models, t..t + 1)?;
    let truncated = weights_at_month(&cut, &cut_ctx, config, t)?;
    let mismatches = full
        .iter()
        .zip(&truncated)
        .filter(|(a, b)| a.w.iter().map(|x| x.to_bits()).ne(b.w.iter().map(|x| x.to_bits())))
        .map(|(a, _)| alloc::format!("{}/{}", a.kind, a.n))
        .collect();
    Ok(AuditOutcome {
        month: t,
        weights_checked: full.len(),
        mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpo::NoClock;
    use crate::synth::{synth_market, SynthSpec};

    fn small() -> (Universe, ExperimentConfig, SplitBoundaries) {
        let spec = SynthSpec {
            n_assets: 4,
            n_months: 80,
            ..SynthSpec::default()
        };
        let u = synth_market(&spec, 3).unwrap();
        let config = ExperimentConfig::default();
        let split = config.check(&u).unwrap();
        (u, config, split)
    }

    #[test]
    fn datasets_stay_inside_their_windows() {
        let (u, config, split) = small();
        let f = features_for(&u, &config).unwrap();
        let (train, val) = datasets(&f, &split, config.warmup);
        let n0 = u.n_assets();
        assert_eq!(train.len(), n0 * (split.train.end - 1 - config.warmup));
        assert_eq!(val.len(), n0 * (split.validation.len() - 1));
    }

    #[test]
    fn windows_cover_in_and_out_of_sample() {
        let (_, config, split) = small();
        let w = Windows::new(&split, config.warmup);
        assert_eq!(w.in_sample.end, w.out_of_sample.start);
        assert_eq!(w.out_of_sample.end, 80);
        assert_eq!(w.formation(), config.warmup..79);
    }

    #[test]
    fn too_short_for_warmup_rejected() {
        let spec = SynthSpec {
            n_assets: 3,
            n_months: 30,
            ..SynthSpec::default()
        };
        let u = synth_market(&spec, 1).unwrap();
        assert!(ExperimentConfig::default().check(&u).is_err());
    }

    #[test]
    fn end_to_end_and_audit() {
        let (u, config, split) = small();
        let f = features_for(&u, &config).unwrap();
        let tuned = tune_models(&f, &split, &config, 3, 7, TpeConfig::default(), &NoClock).unwrap();
        let windows = Windows::new(&split, config.warmup);
        let ctx = Context::build(&u, &split, &config, &tuned.models, windows.formation()).unwrap();
        for &kind in &config.families {
            let res = family_results(&u, &ctx, &config, kind, windows.out_of_sample.clone()).unwrap();
            let expected = if kind.is_subset_family() { u.n_assets() } else { 1 };
            assert_eq!(res.len(), expected);
        }
        for t in windows.out_of_sample.start - 1..windows.out_of_sample.end - 1 {
            let audit = audit_month(&u, &split, &config, &tuned.models, t).unwrap();
            assert!(audit.mismatches.is_empty(), "{audit:?}");
        }
    }
}
