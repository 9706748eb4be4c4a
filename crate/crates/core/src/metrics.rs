//! Evaluation metrics: monthly Sharpe ratio, average percentage change (APC)
//! along the subset-size curve, and average Sharpe-ratio improvement rate
//! (ASRIR) over a benchmark.
//!
//! APC and ASRIR are returned as fractions (0.10 is 10%). The Sharpe ratio
//! uses a zero risk-free rate and the sample standard deviation.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::PerformanceCurve;
use crate::portfolio::PortfolioKind;

/// Label written into every report header.
pub const STD_CONVENTION: &str = "sample standard deviation (T-1 denominator), risk-free rate 0";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("series of length {0} is too short")]
    TooShort(usize),
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("division by zero at N = {n}")]
    DivisionByZero { n: usize },
    #[error("curves have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("value at N = {n} is undefined")]
    Undefined { n: usize },
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation; zero for fewer than two points.
pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    libm::sqrt(ss / (x.len() - 1) as f64)
}

/// `mean / std` of monthly returns.
pub fn sharpe(returns: &[f64]) -> Result<f64, MetricsError> {
    if returns.len() < 2 {
        return Err(MetricsError::TooShort(returns.len()));
    }
    let sd = sample_std(returns);
    if !(sd > 0.0) {
        return Err(MetricsError::DegenerateSeries);
    }
    Ok(mean(returns) / sd)
}

/// Mean relative change `(x^N - x^{N+1}) / x^{N+1}` over `N = 1..N₀-1`;
/// `values[k]` holds `x^{k+1}`.
pub fn apc(values: &[f64]) -> Result<f64, MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooShort(values.len()));
    }
    let mut total = 0.0;
    for (k, pair) in values.windows(2).enumerate() {
        if pair[1] == 0.0 {
            return Err(MetricsError::DivisionByZero { n: k + 2 });
        }
        total += (pair[0] - pair[1]) / pair[1];
    }
    Ok(total / (values.len() - 1) as f64)
}

/// Mean relative Sharpe improvement of `dewsp` over `benchmark`, per `N`.
pub fn asrir(dewsp: &[f64], benchmark: &[f64]) -> Result<f64, MetricsError> {
    if dewsp.len() != benchmark.len() {
        return Err(MetricsError::LengthMismatch(dewsp.len(), benchmark.len()));
    }
    if dewsp.is_empty() {
        return Err(MetricsError::TooShort(0));
    }
    let mut total = 0.0;
    for (k, (d, b)) in dewsp.iter().zip(benchmark).enumerate() {
        if *b == 0.0 {
            return Err(MetricsError::DivisionByZero { n: k + 1 });
        }
        total += (d - b) / b;
    }
    Ok(total / dewsp.len() as f64)
}

/// APC of return and volatility for one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApcSummary {
    pub kind: PortfolioKind,
    pub apc_return: Option<f64>,
    pub apc_vol: Option<f64>,
    /// `apc_return / apc_vol`, absent when `apc_vol` is zero or undefined.
    pub ratio: Option<f64>,
    pub note: Option<String>,
}

/// ASRIR of DEWSP against one benchmark family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrirEntry {
    pub benchmark: PortfolioKind,
    pub value: Option<f64>,
    /// Set when any benchmark Sharpe ratio is `<= 0`, which makes the sign of
    /// the improvement ambiguous.
    pub nonpositive_benchmark: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub convention: String,
    pub curves: Vec<PerformanceCurve>,
    pub apc: Vec<ApcSummary>,
    pub asrir: Vec<AsrirEntry>,
}

fn sharpe_curve(curve: &PerformanceCurve) -> Result<Vec<f64>, MetricsError> {
    curve
        .points
        .iter()
        .map(|p| p.sharpe.ok_or(MetricsError::Undefined { n: p.n }))
        .collect()
}

fn apc_summary(curve: &PerformanceCurve) -> ApcSummary {
    let r: Vec<f64> = curve.points.iter().map(|p| p.mean).collect();
    let s: Vec<f64> = curve.points.iter().map(|p| p.vol).collect();
    let (apc_return, apc_vol) = (apc(&r), apc(&s));
    let note = match (&apc_return, &apc_vol) {
        (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
        _ => None,
    };
    let (apc_return, apc_vol) = (apc_return.ok(), apc_vol.ok());
    let ratio = match (apc_return, apc_vol) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        _ => None,
    };
    ApcSummary {
        kind: curve.kind,
        apc_return,
        apc_vol,
        ratio,
        note,
    }
}

/// APC for every subset family and ASRIR of DEWSP against every historical
/// benchmark scope present in `curves`.
pub fn build_report(curves: Vec<PerformanceCurve>) -> MetricsReport {
    let apc = curves
        .iter()
        .filter(|c| c.kind.is_subset_family() && c.points.len() >= 2)
        .map(apc_summary)
        .collect();
    let mut asrir_entries = Vec::new();
    if let Some(dewsp) = curves.iter().find(|c| c.kind == PortfolioKind::Dewsp) {
        for bench in curves.iter().filter(|c| c.kind.historical_scope().is_some()) {
            let nonpositive = bench.points.iter().any(|p| p.sharpe.is_none_or(|s| s <= 0.0));
            let value = sharpe_curve(dewsp).and_then(|d| asrir(&d, &sharpe_curve(bench)?));
            asrir_entries.push(AsrirEntry {
                benchmark: bench.kind,
                value: value.as_ref().ok().copied(),
                nonpositive_benchmark: nonpositive,
                note: value.err().map(|e| e.to_string()),
            });
        }
    }
    MetricsReport {
        convention: STD_CONVENTION.into(),
        curves,
        apc,
        asrir: asrir_entries,
    }
}
