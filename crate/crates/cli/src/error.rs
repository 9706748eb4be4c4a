use std::fmt;
use std::path::Path;

use dewsp_core::backtest::BacktestError;
use dewsp_core::hpo::HpoError;
use dewsp_core::indicators::IndicatorError;
use dewsp_core::portfolio::PortfolioError;
use dewsp_core::synth::SynthError;
use dewsp_core::Error as CoreError;

/// Failure class, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// Bad configuration or arguments.
    Validation,
    /// Missing, malformed or inconsistent input data.
    Data,
    /// Training, optimisation or metric computation failed.
    Numeric,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Validation => 1,
            Category::Data => 2,
            Category::Numeric => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub stage: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            category,
            stage,
            message: message.into(),
        }
    }

    pub fn validation(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(Category::Validation, stage, message)
    }

    pub fn data(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(Category::Data, stage, message)
    }

    pub fn io(stage: &'static str, path: &Path, err: impl fmt::Display) -> Self {
        Self::data(stage, format!("{}: {err}", path.display()))
    }

    pub fn core(stage: &'static str, err: impl Into<CoreError>) -> Self {
        let err = err.into();
        Self::new(categorize(&err), stage, err.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        self.category.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

fn categorize(err: &CoreError) -> Category {
    match err {
        CoreError::MarketData(_) => Category::Data,
        CoreError::Indicators(IndicatorError::InvalidSpec(_) | IndicatorError::InsufficientWarmup { .. }) => {
            Category::Validation
        }
        CoreError::Indicators(_) => Category::Data,
        CoreError::Hpo(HpoError::InvalidConfig(_)) => Category::Validation,
        CoreError::Neural(_) | CoreError::Hpo(_) | CoreError::Metrics(_) => Category::Numeric,
        CoreError::Portfolio(PortfolioError::InvalidSubsetSize { .. })
        | CoreError::Backtest(BacktestError::Portfolio(PortfolioError::InvalidSubsetSize { .. })) => {
            Category::Validation
        }
        CoreError::Backtest(BacktestError::MissingForecast(_) | BacktestError::InvalidWindow { .. }) => Category::Data,
        CoreError::Portfolio(_) | CoreError::Backtest(_) => Category::Numeric,
        CoreError::Synth(SynthError::InvalidSpec(_)) => Category::Validation,
        CoreError::Synth(SynthError::MarketData(_)) => Category::Data,
    }
}

pub type CliResult<T> = Result<T, CliError>;
