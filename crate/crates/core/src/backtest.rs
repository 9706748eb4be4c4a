//! Frictionless monthly-rebalanced backtests.
//!
//! Month indices follow [`Universe`]: weights formed at month `t` earn the
//! realised return of month `t + 1`. A backtest window is a range of realised
//! months, so window `a..b` uses weights formed at `a - 1 ..= b - 2`.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::dot;
use crate::market_data::Universe;
use crate::metrics;
use crate::portfolio::{
    self, CovarianceMatrix, ForecastBook, PortfolioError, PortfolioKind, PortfolioWeights, ReturnForecast,
};
use crate::rng::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("no forecast for {0}")]
    MissingForecast(NaiveDate),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("window {start}..{end} is outside realised months 1..{months}")]
    InvalidWindow { start: usize, end: usize, months: usize },
    #[error(transparent)]
    Portfolio(#[from] PortfolioError),
}

/// Expected returns used to rank or optimise.
#[derive(Debug, Clone, PartialEq)]
pub enum Forecasts {
    /// One forecast used at every formation month.
    Static(ReturnForecast),
    /// Forecast per formation month.
    Monthly(ForecastBook),
}

impl Forecasts {
    fn at(&self, universe: &Universe, t: usize) -> Result<&[f64], BacktestError> {
        match self {
            Forecasts::Static(f) => Ok(&f.mu),
            Forecasts::Monthly(book) => book
                .get(&t)
                .map(|f| f.mu.as_slice())
                .ok_or_else(|| BacktestError::MissingForecast(universe.date(t))),
        }
    }
}

/// Covariance estimate used by the optimised portfolios.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSource {
    /// Estimated once, reused at every formation month.
    Static(CovarianceMatrix),
    /// Re-estimated at formation month `t` from realised months `start..=t`.
    Expanding { start: usize },
}

impl CovarianceSource {
    fn at(&self, universe: &Universe, t: usize) -> Result<CovarianceMatrix, BacktestError> {
        match self {
            CovarianceSource::Static(c) => Ok(c.clone()),
            CovarianceSource::Expanding { start } => {
                let months = (*start).max(1)..t + 1;
                Ok(portfolio::sample_covariance(
                    &portfolio::returns_matrix(universe, months.clone()),
                    months,
                )?)
            }
        }
    }
}

/// How weights are formed each month.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    /// Top-`n` by forecast at `1/n`.
    Ranked {
        kind: PortfolioKind,
        forecasts: &'a Forecasts,
        n: usize,
    },
    /// Random `n`-subset; one draw for the window unless `redraw_monthly`.
    Random { n: usize, seed: u64, redraw_monthly: bool },
    EqualWhole,
    MaxSharpe {
        forecasts: &'a Forecasts,
        covariance: &'a CovarianceSource,
    },
    MinVariance { covariance: &'a CovarianceSource },
}

impl Strategy<'_> {
    pub fn kind(&self) -> PortfolioKind {
        match self {
            Strategy::Ranked { kind, .. } => *kind,
            Strategy::Random { .. } => PortfolioKind::Rewsp,
            Strategy::EqualWhole => PortfolioKind::Ewwp,
            Strategy::MaxSharpe { .. } => PortfolioKind::Msrp,
            Strategy::MinVariance { .. } => PortfolioKind::Mvp,
        }
    }

    /// Subset size, or `N₀` for whole-universe portfolios.
    pub fn size(&self, n0: usize) -> usize {
        match self {
            Strategy::Ranked { n, .. } | Strategy::Random { n, .. } => *n,
            _ => n0,
        }
    }
}

/// Weights formed at month `t` from data up to and including `t`.
pub fn weights_at(universe: &Universe, strategy: &Strategy<'_>, t: usize) -> Result<PortfolioWeights, BacktestError> {
    let n0 = universe.n_assets();
    let w = match strategy {
        Strategy::Ranked { forecasts, n, .. } => {
            let mu = forecasts.at(universe, t)?;
            let order = portfolio::rank_assets(mu, &universe.tickers())?;
            portfolio::subset_equal_weights(&order, *n, n0)?
        }
        Strategy::Random {
            n,
            seed,
            redraw_monthly,
        } => {
            let seed = if *redraw_monthly { derive_seed(*seed, t as u64) } else { *seed };
            portfolio::random_subset(*n, n0, seed)?
        }
        Strategy::EqualWhole => portfolio::equal_whole(n0),
        Strategy::MaxSharpe { forecasts, covariance } => {
            let mu = forecasts.at(universe, t)?;
            portfolio::msrp_weights(mu, &covariance.at(universe, t)?)?
        }
        Strategy::MinVariance { covariance } => portfolio::mvp_weights(&covariance.at(universe, t)?)?,
    };
    Ok(PortfolioWeights {
        month: t,
        kind: strategy.kind(),
        n: strategy.size(n0),
        w,
    })
}

/// `wᵀr` for one month.
pub fn portfolio_period_return(w: &[f64], asset_returns: &[f64]) -> Result<f64, BacktestError> {
    if w.len() != asset_returns.len() {
        return Err(BacktestError::ShapeMismatch(alloc::format!(
            "{} weights for {} returns",
            w.len(),
            asset_returns.len()
        )));
    }
    Ok(dot(w, asset_returns))
}

/// Weights per formation month of a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceSchedule {
    pub months: Vec<usize>,
    pub weights: Vec<PortfolioWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub kind: PortfolioKind,
    pub n: usize,
    /// Realised months, one per return.
    pub months: Vec<usize>,
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
    pub mean: f64,
    pub vol: f64,
}

impl BacktestResult {
    pub fn sharpe(&self) -> Option<f64> {
        metrics::sharpe(&self.returns).ok()
    }
}

fn check_window(universe: &Universe, window: &Range<usize>) -> Result<(), BacktestError> {
    if window.start == 0 || window.is_empty() || window.end > universe.n_months() {
        return Err(BacktestError::InvalidWindow {
            start: window.start,
            end: window.end,
            months: universe.n_months(),
        });
    }
    Ok(())
}

/// Formation-month weights for every realised month in `window`.
pub fn schedule(
    universe: &Universe,
    strategy: &Strategy<'_>,
    window: Range<usize>,
) -> Result<RebalanceSchedule, BacktestError> {
    check_window(universe, &window)?;
    let months: Vec<usize> = (window.start - 1..window.end - 1).collect();
    let weights = months
        .iter()
        .map(|&t| weights_at(universe, strategy, t))
        .collect::<Result<_, _>>()?;
    Ok(RebalanceSchedule { months, weights })
}

/// Realised returns over `window`, rebalancing to target weights every month.
pub fn run_backtest(
    universe: &Universe,
    strategy: &Strategy<'_>,
    window: Range<usize>,
) -> Result<BacktestResult, BacktestError> {
    let plan = schedule(universe, strategy, window.clone())?;
    let mut returns = Vec::with_capacity(window.len());
    for (w, m) in plan.weights.iter().zip(window.clone()) {
        returns.push(portfolio_period_return(&w.w, &universe.realized_returns(m))?);
    }
    Ok(BacktestResult {
        kind: strategy.kind(),
        n: strategy.size(universe.n_assets()),
        months: window.clone().collect(),
        dates: window.map(|m| universe.date(m)).collect(),
        mean: metrics::mean(&returns),
        vol: metrics::sample_std(&returns),
        returns,
    })
}

/// One subset size on a performance curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub mean: f64,
    pub vol: f64,
    pub sharpe: Option<f64>,
}

impl From<&BacktestResult> for CurvePoint {
    fn from(r: &BacktestResult) -> Self {
        Self {
            n: r.n,
            mean: r.mean,
            vol: r.vol,
            sharpe: r.sharpe(),
        }
    }
}

/// `(N, r, σ, SR)` for `N = 1..=N₀` of one family (a single point for
/// whole-universe portfolios).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceCurve {
    pub kind: PortfolioKind,
    pub points: Vec<CurvePoint>,
}

/// A family swept over subset sizes.
#[derive(Debug, Clone, Copy)]
pub enum SubsetFamily<'a> {
    Ranked { kind: PortfolioKind, forecasts: &'a Forecasts },
    Random { seed: u64, redraw_monthly: bool },
}

impl<'a> SubsetFamily<'a> {
    pub fn kind(&self) -> PortfolioKind {
        match self {
            SubsetFamily::Ranked { kind, .. } => *kind,
            SubsetFamily::Random { .. } => PortfolioKind::Rewsp,
        }
    }

    pub fn strategy(&self, n: usize) -> Strategy<'a> {
        match *self {
            SubsetFamily::Ranked { kind, forecasts } => Strategy::Ranked { kind, forecasts, n },
            SubsetFamily::Random { seed, redraw_monthly } => Strategy::Random {
                n,
                seed,
                redraw_monthly,
            },
        }
    }
}

/// One backtest per `N = 1..=N₀`.
pub fn sweep_results(
    universe: &Universe,
    family: SubsetFamily<'_>,
    window: Range<usize>,
) -> Result<Vec<BacktestResult>, BacktestError> {
    (1..=universe.n_assets())
        .map(|n| run_backtest(universe, &family.strategy(n), window.clone()))
        .collect()
}

/// Performance curve of a family over all subset sizes.
pub fn sweep_sizes(
    universe: &Universe,
    family: SubsetFamily<'_>,
    window: Range<usize>,
) -> Result<PerformanceCurve, BacktestError> {
    Ok(curve_of(family.kind(), &sweep_results(universe, family, window)?))
}

pub fn curve_of(kind: PortfolioKind, results: &[BacktestResult]) -> PerformanceCurve {
    PerformanceCurve {
        kind,
        points: results.iter().map(CurvePoint::from).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{AssetSeries, OhlcvBar};
    use crate::portfolio::ForecastSource;
    use alloc::collections::BTreeMap;
    use alloc::vec;
    use chrono::Datelike;

    /// Universe whose asset `i` has the given realised return in month `m`.
    fn universe(returns: &[Vec<f64>]) -> Universe {
        let n_assets = returns[0].len();
        let assets = (0..n_assets)
            .map(|i| {
                let mut price = 100.0;
                let mut bars = Vec::new();
                for m in 0..=returns.len() {
                    if m > 0 {
                        price *= 1.0 + returns[m - 1][i];
                    }
                    let first = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
                    let date = first
                        .checked_add_months(chrono::Months::new(m as u32))
                        .unwrap()
                        .with_day(28)
                        .unwrap();
                    bars.push(OhlcvBar {
                        date,
                        open: price,
                        high: price,
                        low: price,
                        adj_close: price,
                        volume: 1000.0,
                    });
                }
                AssetSeries::from_bars(alloc::format!("A{i}"), bars).unwrap()
            })
            .collect();
        Universe::new(assets).unwrap()
    }

    fn static_forecast(mu: Vec<f64>) -> Forecasts {
        Forecasts::Static(ReturnForecast {
            month: 0,
            mu,
            source: ForecastSource::Deep,
        })
    }

    #[test]
    fn period_return_examples() {
        assert_eq!(portfolio_period_return(&[1.0, 0.0], &[0.07, -0.2]).unwrap(), 0.07);
        assert_eq!(portfolio_period_return(&[0.5, 0.5], &[0.1, -0.1]).unwrap(), 0.0);
        let r = portfolio_period_return(&[0.2, 0.3, 0.5], &[0.01, 0.02, -0.02]).unwrap();
        assert!((r + 0.002).abs() < 1e-15);
        assert!(portfolio_period_return(&[1.0], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn equal_weight_constant_returns() {
        let u = universe(&vec![vec![0.02, 0.04]; 6]);
        let res = run_backtest(&u, &Strategy::EqualWhole, 1..7).unwrap();
        assert_eq!(res.returns.len(), 6);
        for r in &res.returns {
            assert!((r - 0.03).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_three_months() {
        let u = universe(&[vec![0.10, 0.00], vec![0.02, -0.04], vec![-0.01, 0.05], vec![0.03, 0.01]]);
        let mut book = BTreeMap::new();
        for (t, mu) in [(1, vec![1.0, 0.0]), (2, vec![0.0, 1.0]), (3, vec![1.0, 0.0])] {
            book.insert(
                t,
                ReturnForecast {
                    month: t,
                    mu,
                    source: ForecastSource::Deep,
                },
            );
        }
        let forecasts = Forecasts::Monthly(book);
        let strategy = Strategy::Ranked {
            kind: PortfolioKind::Dewsp,
            forecasts: &forecasts,
            n: 1,
        };
        let res = run_backtest(&u, &strategy, 2..5).unwrap();
        let expected = [0.02, 0.05, 0.03];
        for (a, b) in res.returns.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((res.mean - 0.1 / 3.0).abs() < 1e-12);
        assert!(matches!(
            run_backtest(&u, &strategy, 1..5),
            Err(BacktestError::MissingForecast(_))
        ));
    }

    #[test]
    fn full_subset_matches_equal_weight_bit_exactly() {
        let rows: Vec<Vec<f64>> = (0..24)
            .map(|m| (0..5).map(|i| libm::sin((m * 7 + i * 3) as f64) * 0.05).collect())
            .collect();
        let u = universe(&rows);
        let ewwp = run_backtest(&u, &Strategy::EqualWhole, 1..25).unwrap();
        let f = static_forecast(vec![0.3, -0.1, 0.2, 0.05, 0.0]);
        let dewsp = run_backtest(
            &u,
            &Strategy::Ranked {
                kind: PortfolioKind::Dewsp,
                forecasts: &f,
                n: 5,
            },
            1..25,
        )
        .unwrap();
        let rewsp = run_backtest(
            &u,
            &Strategy::Random {
                n: 5,
                seed: 9,
                redraw_monthly: true,
            },
            1..25,
        )
        .unwrap();
        assert_eq!(dewsp.returns, ewwp.returns);
        assert_eq!(rewsp.returns, ewwp.returns);
    }

    #[test]
    fn sweep_examples() {
        // Asset 0 always earns the most and is ranked first.
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|m| vec![0.05 + 0.001 * m as f64, 0.02, 0.01 - 0.002 * (m % 2) as f64])
            .collect();
        let u = universe(&rows);
        let f = static_forecast(vec![0.3, 0.2, 0.1]);
        let curve = sweep_sizes(
            &u,
            SubsetFamily::Ranked {
                kind: PortfolioKind::Dewsp,
                forecasts: &f,
            },
            1..13,
        )
        .unwrap();
        assert_eq!(curve.points.len(), 3);
        assert!(curve.points.windows(2).all(|p| p[0].mean > p[1].mean));

        let random = SubsetFamily::Random {
            seed: 3,
            redraw_monthly: false,
        };
        assert_eq!(sweep_sizes(&u, random, 1..13).unwrap(), sweep_sizes(&u, random, 1..13).unwrap());
    }

    #[test]
    fn window_validation() {
        let u = universe(&vec![vec![0.01, 0.02]; 4]);
        assert!(run_backtest(&u, &Strategy::EqualWhole, 0..3).is_err());
        assert!(run_backtest(&u, &Strategy::EqualWhole, 1..6).is_err());
    }
}
