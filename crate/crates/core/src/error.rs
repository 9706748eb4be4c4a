use thiserror::Error;

use crate::{backtest, hpo, indicators, market_data, metrics, neural, portfolio, synth};

/// Any failure raised by the core pipeline, tagged by the module it came from.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    MarketData(#[from] market_data::MarketDataError),
    #[error(transparent)]
    Indicators(#[from] indicators::IndicatorError),
    #[error(transparent)]
    Neural(#[from] neural::NeuralError),
    #[error(transparent)]
    Hpo(#[from] hpo::HpoError),
    #[error(transparent)]
    Portfolio(#[from] portfolio::PortfolioError),
    #[error(transparent)]
    Backtest(#[from] backtest::BacktestError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}

/// Result alias over [`Error`].
pub type Result<T, E = Error> = core::result::Result<T, E>;
