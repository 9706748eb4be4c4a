//! Binary technical trading signals and the feature matrix built from them.
//!
//! Each signal is `+1` (buy) or `-1` (sell). Ties always resolve to `+1`.
//! Moving-average comparisons are done on deviations from the value at `t`,
//! so windows of identical values compare equal exactly instead of drifting
//! by a rounding error in the summation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::Universe;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndicatorError {
    #[error("index {t} needs {needed} months of history")]
    InsufficientHistory { t: usize, needed: usize },
    #[error("price and volume series differ in length ({prices} vs {volumes})")]
    LengthMismatch { prices: usize, volumes: usize },
    #[error("window starts at month {start} but the signals need {needed} months of warm-up")]
    InsufficientWarmup { start: usize, needed: usize },
    #[error("window {start}..{end} is empty or exceeds the {months} available months")]
    InvalidWindow { start: usize, end: usize, months: usize },
    #[error("invalid signal spec `{0}`")]
    InvalidSpec(String),
}

/// A buy (+1) or sell (-1) signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signal {
    Buy,
    Sell,
}

impl Signal {
    fn from_ge(ge: bool) -> Self {
        if ge {
            Signal::Buy
        } else {
            Signal::Sell
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Signal::Buy => 1.0,
            Signal::Sell => -1.0,
        }
    }
}

/// One parameterised trading rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SignalSpec {
    /// Time-series momentum over `m` months.
    Mom { m: usize },
    /// Price moving-average crossover, short window `s`, long window `l`.
    Ma { s: usize, l: usize },
    /// On-balance-volume moving-average crossover.
    Vol { s: usize, l: usize },
}

impl SignalSpec {
    pub fn validate(self) -> Result<Self, IndicatorError> {
        let ok = match self {
            SignalSpec::Mom { m } => m >= 1,
            SignalSpec::Ma { s, l } | SignalSpec::Vol { s, l } => 1 <= s && s < l,
        };
        if ok {
            Ok(self)
        } else {
            Err(IndicatorError::InvalidSpec(self.to_string()))
        }
    }

    /// Smallest month index at which the signal is defined.
    pub fn warmup(self) -> usize {
        match self {
            SignalSpec::Mom { m } => m,
            SignalSpec::Ma { l, .. } => l - 1,
            // OBV starts at index 1.
            SignalSpec::Vol { l, .. } => l,
        }
    }

    /// MOM m ∈ {1,3,6,9,12}, then MA and VOL over (s,l) ∈ {1,2,3}×{9,12}.
    pub fn default_set() -> Vec<SignalSpec> {
        let mut specs: Vec<SignalSpec> = [1, 3, 6, 9, 12].into_iter().map(|m| SignalSpec::Mom { m }).collect();
        for s in 1..=3 {
            for l in [9, 12] {
                specs.push(SignalSpec::Ma { s, l });
            }
        }
        for s in 1..=3 {
            for l in [9, 12] {
                specs.push(SignalSpec::Vol { s, l });
            }
        }
        specs
    }
}

impl fmt::Display for SignalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SignalSpec::Mom { m } => write!(f, "MOM({m}M)"),
            SignalSpec::Ma { s, l } => write!(f, "MA({s}M-{l}M)"),
            SignalSpec::Vol { s, l } => write!(f, "VOL({s}M-{l}M)"),
        }
    }
}

impl FromStr for SignalSpec {
    type Err = IndicatorError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = || IndicatorError::InvalidSpec(text.to_string());
        let (kind, rest) = text.trim().split_once('(').ok_or_else(err)?;
        let args = rest.strip_suffix(')').ok_or_else(err)?;
        let months = |a: &str| a.trim().strip_suffix('M').and_then(|n| n.parse::<usize>().ok()).ok_or_else(err);
        let spec = match kind.trim().to_ascii_uppercase().as_str() {
            "MOM" => SignalSpec::Mom { m: months(args)? },
            "MA" | "VOL" => {
                let (s, l) = args.split_once('-').ok_or_else(err)?;
                let (s, l) = (months(s)?, months(l)?);
                if kind.trim().eq_ignore_ascii_case("MA") {
                    SignalSpec::Ma { s, l }
                } else {
                    SignalSpec::Vol { s, l }
                }
            }
            _ => return Err(err()),
        };
        spec.validate()
    }
}

impl TryFrom<String> for SignalSpec {
    type Error = IndicatorError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<SignalSpec> for String {
    fn from(spec: SignalSpec) -> Self {
        spec.to_string()
    }
}

/// `+1` iff `P_t >= P_{t-m}`.
pub fn mom_signal(prices: &[f64], m: usize, t: usize) -> Result<Signal, IndicatorError> {
    if m == 0 {
        return Err(IndicatorError::InvalidSpec(format!("MOM({m}M)")));
    }
    if t < m || t >= prices.len() {
        return Err(IndicatorError::InsufficientHistory { t, needed: m });
    }
    Ok(Signal::from_ge(prices[t] >= prices[t - m]))
}

/// Compares the `s`- and `l`-window means of `series` ending at `t`.
fn crossover(series: &[f64], s: usize, l: usize, t: usize) -> Signal {
    let anchor = series[t];
    let mean_dev = |j: usize| series[t + 1 - j..=t].iter().map(|&x| x - anchor).sum::<f64>() / j as f64;
    Signal::from_ge(mean_dev(s) >= mean_dev(l))
}

fn check_window(s: usize, l: usize, kind: &str) -> Result<(), IndicatorError> {
    if 1 <= s && s < l {
        Ok(())
    } else {
        Err(IndicatorError::InvalidSpec(format!("{kind}({s}M-{l}M)")))
    }
}

/// `+1` iff the mean of the last `s` prices is at least the mean of the last `l`.
pub fn ma_signal(prices: &[f64], s: usize, l: usize, t: usize) -> Result<Signal, IndicatorError> {
    check_window(s, l, "MA")?;
    if t + 1 < l || t >= prices.len() {
        return Err(IndicatorError::InsufficientHistory { t, needed: l - 1 });
    }
    Ok(crossover(prices, s, l, t))
}

/// On-balance volume `OBV_1 ..= OBV_{n-1}`; element `k - 1` holds `OBV_k`.
pub fn obv(prices: &[f64], volumes: &[f64]) -> Result<Vec<f64>, IndicatorError> {
    if prices.len() != volumes.len() {
        return Err(IndicatorError::LengthMismatch {
            prices: prices.len(),
            volumes: volumes.len(),
        });
    }
    if prices.len() < 2 {
        return Err(IndicatorError::InsufficientHistory { t: prices.len(), needed: 1 });
    }
    let mut acc = 0.0;
    Ok((1..prices.len())
        .map(|k| {
            let d = Signal::from_ge(prices[k] >= prices[k - 1]).value();
            acc += volumes[k] * d;
            acc
        })
        .collect())
}

fn vol_from_obv(obv: &[f64], s: usize, l: usize, t: usize) -> Result<Signal, IndicatorError> {
    // OBV_t lives at obv[t - 1]; the l-window needs OBV_{t-l+1} with t - l + 1 >= 1.
    if t < l || t > obv.len() {
        return Err(IndicatorError::InsufficientHistory { t, needed: l });
    }
    Ok(crossover(obv, s, l, t - 1))
}

/// `+1` iff the `s`-window mean of OBV is at least its `l`-window mean at `t`.
pub fn vol_signal(prices: &[f64], volumes: &[f64], s: usize, l: usize, t: usize) -> Result<Signal, IndicatorError> {
    check_window(s, l, "VOL")?;
    let series = obv(prices, volumes)?;
    vol_from_obv(&series, s, l, t)
}

/// One (asset, month) observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub asset: usize,
    pub month: usize,
    pub date: NaiveDate,
    pub signals: Vec<f64>,
    /// Simple return from `month` to `month + 1`, absent for the final month.
    pub target: Option<f64>,
}

/// Signals for every (asset, month) of a window, ordered by (ticker, month).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub tickers: Vec<String>,
    pub specs: Vec<SignalSpec>,
    pub window: Range<usize>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn n_features(&self) -> usize {
        self.specs.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.to_string()).collect()
    }

    /// Rows for month `t`, one per asset in universe order.
    pub fn rows_at(&self, t: usize) -> Vec<&FeatureRow> {
        let mut rows: Vec<&FeatureRow> = self.rows.iter().filter(|r| r.month == t).collect();
        rows.sort_by_key(|r| r.asset);
        rows
    }

    /// Rows that carry a target.
    pub fn labelled(&self) -> impl Iterator<Item = &FeatureRow> {
        self.rows.iter().filter(|r| r.target.is_some())
    }

    /// Only the rows of one asset.
    pub fn for_asset(&self, asset: usize) -> FeatureMatrix {
        FeatureMatrix {
            tickers: self.tickers.clone(),
            specs: self.specs.clone(),
            window: self.window.clone(),
            rows: self.rows.iter().filter(|r| r.asset == asset).cloned().collect(),
        }
    }
}

/// Largest warm-up over `specs`.
pub fn warmup(specs: &[SignalSpec]) -> usize {
    specs.iter().map(|s| s.warmup()).max().unwrap_or(0)
}

/// Computes every signal in `specs` for each asset and month in `window`.
pub fn build_features(
    universe: &Universe,
    specs: &[SignalSpec],
    window: Range<usize>,
) -> Result<FeatureMatrix, IndicatorError> {
    for spec in specs {
        spec.validate()?;
    }
    let months = universe.n_months();
    if window.is_empty() || window.end > months {
        return Err(IndicatorError::InvalidWindow {
            start: window.start,
            end: window.end,
            months,
        });
    }
    let needed = warmup(specs);
    if window.start < needed {
        return Err(IndicatorError::InsufficientWarmup {
            start: window.start,
            needed,
        });
    }
    let mut rows = Vec::with_capacity(universe.n_assets() * window.len());
    for (asset, series) in universe.assets().iter().enumerate() {
        let prices = series.adj_closes();
        let volumes = series.volumes();
        let obv_series = obv(&prices, &volumes)?;
        for t in window.clone() {
            let signals = specs
                .iter()
                .map(|spec| {
                    let signal = match *spec {
                        SignalSpec::Mom { m } => mom_signal(&prices, m, t)?,
                        SignalSpec::Ma { s, l } => ma_signal(&prices, s, l, t)?,
                        SignalSpec::Vol { s, l } => vol_from_obv(&obv_series, s, l, t)?,
                    };
                    Ok(signal.value())
                })
                .collect::<Result<Vec<f64>, IndicatorError>>()?;
            rows.push(FeatureRow {
                asset,
                month: t,
                date: series.bars()[t].date,
                signals,
                target: (t + 1 < months).then(|| series.returns()[t]),
            });
        }
    }
    Ok(FeatureMatrix {
        tickers: universe.tickers().into_iter().map(String::from).collect(),
        specs: specs.to_vec(),
        window,
        rows,
    })
}
