//! Monthly OHLCV series, the asset universe and its chronological split.
//!
//! Prices are validated on construction. Returns are simple returns on the
//! adjusted close and are always recomputed from the bars, never stored
//! independently of them.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of months [`SplitPlan::split_months`] accepts.
pub const MIN_SPLIT_MONTHS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketDataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unparseable row at line {line}: {reason}")]
    UnparseableRow { line: usize, reason: String },
    #[error("{ticker}: dates not strictly increasing at {date}")]
    NonMonotoneDates { ticker: String, date: NaiveDate },
    #[error("{ticker}: non-positive price on {date}")]
    NonPositivePrice { ticker: String, date: NaiveDate },
    #[error("non-positive previous price {0}")]
    NonPositiveReturnBase(f64),
    #[error("{ticker}: inconsistent bar on {date} ({reason})")]
    InconsistentBar {
        ticker: String,
        date: NaiveDate,
        reason: &'static str,
    },
    #[error("empty input series")]
    EmptyInput,
    #[error("{ticker}: more than one bar in month {month}")]
    NotMonthly { ticker: String, month: Month },
    #[error("{ticker}: missing month {month} inside the common window")]
    AssetGap { ticker: String, month: Month },
    #[error("duplicate ticker `{0}`")]
    DuplicateTicker(String),
    #[error("universe needs at least 2 assets, got {0}")]
    UniverseTooSmall(usize),
    #[error("no common window: latest first month {start} is after earliest last month {end}")]
    EmptyWindow { start: Month, end: Month },
    #[error("window of {months} months is shorter than the minimum of {min}")]
    WindowTooShort { months: usize, min: usize },
    #[error("invalid split fraction {0}")]
    InvalidFraction(f64),
    #[error("invalid month `{0}`")]
    InvalidMonth(String),
}

/// A calendar month, ordered chronologically. Serialised as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Month {
    year: i32,
    month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    pub fn next(self) -> Self {
        self.plus(1)
    }

    pub fn plus(self, months: usize) -> Self {
        let ordinal = self.ordinal() + months as i64;
        Self::from_ordinal(ordinal)
    }

    /// Signed number of months from `earlier` to `self`.
    pub fn since(self, earlier: Month) -> i64 {
        self.ordinal() - earlier.ordinal()
    }

    /// Last calendar day of the month.
    pub fn last_day(self) -> NaiveDate {
        let next = self.next();
        NaiveDate::from_ymd_opt(next.year, next.month, 1)
            .and_then(|d| d.pred_opt())
            .expect("month within chrono's supported range")
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(ordinal: i64) -> Self {
        Self {
            year: ordinal.div_euclid(12) as i32,
            month: ordinal.rem_euclid(12) as u32 + 1,
        }
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for Month {
    type Err = MarketDataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MarketDataError::InvalidMonth(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(err)?;
        let year = y.parse().map_err(|_| err())?;
        let month = m.parse().map_err(|_| err())?;
        Month::new(year, month).ok_or_else(err)
    }
}

impl TryFrom<String> for Month {
    type Error = MarketDataError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Month> for String {
    fn from(m: Month) -> Self {
        m.to_string()
    }
}

/// One OHLCV bar. Returns are computed from `adj_close` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub adj_close: f64,
    pub volume: f64,
}

impl OhlcvBar {
    fn validate(&self, ticker: &str) -> Result<(), MarketDataError> {
        let positive = |p: f64| p.is_finite() && p > 0.0;
        if !(positive(self.open) && positive(self.high) && positive(self.low) && positive(self.adj_close)) {
            return Err(MarketDataError::NonPositivePrice {
                ticker: ticker.to_string(),
                date: self.date,
            });
        }
        let inconsistent = |reason| MarketDataError::InconsistentBar {
            ticker: ticker.to_string(),
            date: self.date,
            reason,
        };
        if !(self.low <= self.open && self.open <= self.high) {
            return Err(inconsistent("open outside [low, high]"));
        }
        if !(self.volume.is_finite() && self.volume >= 0.0) {
            return Err(inconsistent("negative volume"));
        }
        Ok(())
    }
}

/// Simple return `p_now / p_prev - 1`.
pub fn simple_return(p_now: f64, p_prev: f64) -> Result<f64, MarketDataError> {
    if !(p_prev > 0.0) {
        return Err(MarketDataError::NonPositiveReturnBase(p_prev));
    }
    Ok(p_now / p_prev - 1.0)
}

/// Bars of one asset in ascending date order, plus the derived simple returns.
///
/// `returns()[k]` is the return from bar `k` to bar `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSeries {
    ticker: String,
    bars: Vec<OhlcvBar>,
    returns: Vec<f64>,
}

impl AssetSeries {
    /// Sorts `bars` by date, rejects duplicate dates and invalid prices, and
    /// derives returns.
    pub fn from_bars(ticker: impl Into<String>, mut bars: Vec<OhlcvBar>) -> Result<Self, MarketDataError> {
        let ticker = ticker.into();
        bars.sort_by_key(|b| b.date);
        for pair in bars.windows(2) {
            if pair[1].date <= pair[0].date {
                return Err(MarketDataError::NonMonotoneDates {
                    ticker,
                    date: pair[1].date,
                });
            }
        }
        for bar in &bars {
            bar.validate(&ticker)?;
        }
        let returns = bars
            .windows(2)
            .map(|w| simple_return(w[1].adj_close, w[0].adj_close))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { ticker, bars, returns })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn bars(&self) -> &[OhlcvBar] {
        &self.bars
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn adj_closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.adj_close).collect()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.volume).collect()
    }
}

/// One bar per calendar month, dated on the month's final trading day.
///
/// The close is the final adjusted close, the open the first open, high and
/// low the extremes and volume the monthly total.
pub fn monthly_last(daily: &AssetSeries) -> Result<AssetSeries, MarketDataError> {
    if daily.is_empty() {
        return Err(MarketDataError::EmptyInput);
    }
    let mut out: Vec<OhlcvBar> = Vec::new();
    for bar in daily.bars() {
        match out.last_mut() {
            Some(last) if Month::of(last.date) == Month::of(bar.date) => {
                last.date = bar.date;
                last.high = last.high.max(bar.high);
                last.low = last.low.min(bar.low);
                last.adj_close = bar.adj_close;
                last.volume += bar.volume;
            }
            _ => out.push(*bar),
        }
    }
    AssetSeries::from_bars(daily.ticker(), out)
}

/// Monthly assets sharing one gap-free window of months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    assets: Vec<AssetSeries>,
    start: Month,
    end: Month,
}

impl Universe {
    /// Builds the universe over the widest window every asset covers.
    pub fn new(assets: Vec<AssetSeries>) -> Result<Self, MarketDataError> {
        Self::with_window(assets, None, None)
    }

    /// Builds the universe over the common window, optionally clipped to
    /// `[start, end]`. Assets with a missing month inside the window are
    /// rejected, never filled.
    pub fn with_window(
        mut assets: Vec<AssetSeries>,
        start: Option<Month>,
        end: Option<Month>,
    ) -> Result<Self, MarketDataError> {
        if assets.len() < 2 {
            return Err(MarketDataError::UniverseTooSmall(assets.len()));
        }
        assets.sort_by(|a, b| a.ticker.cmp(&b.ticker));
        for pair in assets.windows(2) {
            if pair[0].ticker == pair[1].ticker {
                return Err(MarketDataError::DuplicateTicker(pair[0].ticker.clone()));
            }
        }
        let mut window_start = start.unwrap_or(Month::new(i32::MIN / 24, 1).unwrap());
        let mut window_end = end.unwrap_or(Month::new(i32::MAX / 24, 12).unwrap());
        for asset in &assets {
            let (first, last) = match (asset.bars.first(), asset.bars.last()) {
                (Some(f), Some(l)) => (Month::of(f.date), Month::of(l.date)),
                _ => return Err(MarketDataError::EmptyInput),
            };
            window_start = window_start.max(first);
            window_end = window_end.min(last);
        }
        if window_start > window_end {
            return Err(MarketDataError::EmptyWindow {
                start: window_start,
                end: window_end,
            });
        }
        let months = window_end.since(window_start) as usize + 1;
        let mut clipped = Vec::with_capacity(assets.len());
        for asset in assets {
            let bars: Vec<OhlcvBar> = asset
                .bars
                .iter()
                .filter(|b| (window_start..=window_end).contains(&Month::of(b.date)))
                .copied()
                .collect();
            for (k, bar) in bars.iter().enumerate() {
                let expected = window_start.plus(k);
                let got = Month::of(bar.date);
                if got != expected {
                    return Err(if got < expected {
                        MarketDataError::NotMonthly {
                            ticker: asset.ticker.clone(),
                            month: got,
                        }
                    } else {
                        MarketDataError::AssetGap {
                            ticker: asset.ticker.clone(),
                            month: expected,
                        }
                    });
                }
            }
            if bars.len() != months {
                return Err(MarketDataError::AssetGap {
                    ticker: asset.ticker.clone(),
                    month: window_start.plus(bars.len()),
                });
            }
            clipped.push(AssetSeries::from_bars(asset.ticker, bars)?);
        }
        Ok(Self {
            assets: clipped,
            start: window_start,
            end: window_end,
        })
    }

    pub fn assets(&self) -> &[AssetSeries] {
        &self.assets
    }

    /// N₀, the number of assets.
    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// T, the number of months in the common window.
    pub fn n_months(&self) -> usize {
        self.end.since(self.start) as usize + 1
    }

    pub fn start(&self) -> Month {
        self.start
    }

    pub fn end(&self) -> Month {
        self.end
    }

    pub fn month(&self, t: usize) -> Month {
        self.start.plus(t)
    }

    pub fn tickers(&self) -> Vec<&str> {
        self.assets.iter().map(|a| a.ticker()).collect()
    }

    pub fn date(&self, t: usize) -> NaiveDate {
        self.assets[0].bars[t].date
    }

    /// Return of asset `asset` realised over month `m` (from `m - 1` to `m`), `m >= 1`.
    pub fn realized_return(&self, asset: usize, m: usize) -> f64 {
        self.assets[asset].returns[m - 1]
    }

    /// Cross-section of realised returns for month `m`, `m >= 1`.
    pub fn realized_returns(&self, m: usize) -> Vec<f64> {
        self.assets.iter().map(|a| a.returns[m - 1]).collect()
    }

    /// Keeps months `0..=last` only.
    pub fn truncated(&self, last: usize) -> Self {
        let assets = self
            .assets
            .iter()
            .map(|a| AssetSeries {
                ticker: a.ticker.clone(),
                bars: a.bars[..=last].to_vec(),
                returns: a.returns[..last].to_vec(),
            })
            .collect();
        Self {
            assets,
            start: self.start,
            end: self.start.plus(last),
        }
    }
}

/// Fractions used to split a window into train, validation and test months.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub is_fraction: f64,
    pub train_fraction_of_is: f64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            is_fraction: 0.70,
            train_fraction_of_is: 0.50,
        }
    }
}

/// Contiguous, chronological month index ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBoundaries {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl SplitBoundaries {
    /// Train plus validation.
    pub fn in_sample(&self) -> Range<usize> {
        self.train.start..self.validation.end
    }

    pub fn total(&self) -> usize {
        self.test.end
    }
}

impl SplitPlan {
    /// `|IS| = floor(is_fraction * T)`, `train = floor(train_fraction * |IS|)`;
    /// leftover months go to the later window.
    pub fn split_months(&self, months: usize) -> Result<SplitBoundaries, MarketDataError> {
        for f in [self.is_fraction, self.train_fraction_of_is] {
            if !(f > 0.0 && f < 1.0) {
                return Err(MarketDataError::InvalidFraction(f));
            }
        }
        if months < MIN_SPLIT_MONTHS {
            return Err(MarketDataError::WindowTooShort {
                months,
                min: MIN_SPLIT_MONTHS,
            });
        }
        // Products such as 0.7 * 30 land just below the integer in binary.
        let floor = |x: f64| libm::floor(x + 1e-9) as usize;
        let is_len = floor(self.is_fraction * months as f64);
        let train_len = floor(self.train_fraction_of_is * is_len as f64);
        if train_len == 0 || train_len == is_len || is_len == months {
            return Err(MarketDataError::WindowTooShort {
                months,
                min: MIN_SPLIT_MONTHS,
            });
        }
        Ok(SplitBoundaries {
            train: 0..train_len,
            validation: train_len..is_len,
            test: is_len..months,
        })
    }
}

/// Splits the universe's common window according to `plan`.
pub fn split(universe: &Universe, plan: &SplitPlan) -> Result<SplitBoundaries, MarketDataError> {
    plan.split_months(universe.n_months())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn bar(date: &str, price: f64) -> OhlcvBar {
        OhlcvBar {
            date: NaiveDate::parse_from_str(date, "%Y-%m-%d").unwrap(),
            open: price,
            high: price,
            low: price,
            adj_close: price,
            volume: 1000.0,
        }
    }

    fn monthly(ticker: &str, start: Month, prices: &[f64]) -> AssetSeries {
        let bars = prices
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let mut b = bar("2000-01-01", p);
                b.date = start.plus(k).last_day();
                b
            })
            .collect();
        AssetSeries::from_bars(ticker, bars).unwrap()
    }

    #[test]
    fn simple_return_examples() {
        assert!((simple_return(110.0, 100.0).unwrap() - 0.10).abs() < 1e-15);
        assert_eq!(simple_return(100.0, 100.0).unwrap(), 0.0);
        assert!((simple_return(95.0, 100.0).unwrap() + 0.05).abs() < 1e-15);
        assert!(simple_return(1.0, 0.0).is_err());
    }

    #[test]
    fn duplicate_dates_rejected() {
        let err = AssetSeries::from_bars("A", vec![bar("2020-01-02", 1.0), bar("2020-01-02", 2.0)]).unwrap_err();
        assert!(matches!(err, MarketDataError::NonMonotoneDates { .. }));
    }

    #[test]
    fn zero_price_rejected() {
        let err = AssetSeries::from_bars("A", vec![bar("2020-01-02", 1.0), bar("2020-01-03", 0.0)]).unwrap_err();
        assert!(matches!(err, MarketDataError::NonPositivePrice { .. }));
    }

    #[test]
    fn bars_are_sorted() {
        let s = AssetSeries::from_bars("A", vec![bar("2020-01-03", 2.0), bar("2020-01-02", 1.0)]).unwrap();
        assert_eq!(s.adj_closes(), vec![1.0, 2.0]);
        assert_eq!(s.returns(), &[1.0]);
    }

    #[test]
    fn monthly_last_single_month() {
        let bars = (1..=21).map(|d| bar(&alloc::format!("2020-01-{d:02}"), d as f64)).collect();
        let daily = AssetSeries::from_bars("A", bars).unwrap();
        let m = monthly_last(&daily).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.bars()[0].adj_close, 21.0);
    }

    #[test]
    fn monthly_last_three_months() {
        let daily = AssetSeries::from_bars(
            "A",
            vec![
                bar("2020-01-02", 1.0),
                bar("2020-01-31", 2.0),
                bar("2020-02-03", 3.0),
                bar("2020-02-28", 4.0),
                bar("2020-03-02", 5.0),
                bar("2020-03-30", 6.0),
            ],
        )
        .unwrap();
        let m = monthly_last(&daily).unwrap();
        let dates: Vec<_> = m.bars().iter().map(|b| b.date.to_string()).collect();
        assert_eq!(dates, ["2020-01-31", "2020-02-28", "2020-03-30"]);
        assert_eq!(m.adj_closes(), vec![2.0, 4.0, 6.0]);
        assert_eq!(m.bars()[1].open, 3.0);
        assert_eq!(m.volumes(), vec![2000.0, 2000.0, 2000.0]);
        assert_eq!(monthly_last(&m).unwrap(), m);
    }

    #[test]
    fn monthly_last_empty() {
        let empty = AssetSeries::from_bars("A", Vec::new()).unwrap();
        assert_eq!(monthly_last(&empty), Err(MarketDataError::EmptyInput));
    }

    #[test]
    fn split_examples() {
        let plan = SplitPlan::default();
        let b = plan.split_months(100).unwrap();
        assert_eq!((b.train, b.validation, b.test), (0..35, 35..70, 70..100));
        let b = plan.split_months(10).unwrap();
        assert_eq!((b.train, b.validation, b.test), (0..3, 3..7, 7..10));
        assert!(matches!(plan.split_months(9), Err(MarketDataError::WindowTooShort { .. })));
        // 0.7 * 30 is 20.999999999999996 in binary.
        assert_eq!(plan.split_months(30).unwrap().test, 21..30);
    }

    #[test]
    fn universe_common_window_and_gap() {
        let a = monthly("B", Month::new(2000, 1).unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        let b = monthly("A", Month::new(2000, 2).unwrap(), &[1.0, 1.5, 2.0, 2.5, 3.0]);
        let u = Universe::new(vec![a.clone(), b]).unwrap();
        assert_eq!(u.tickers(), ["A", "B"]);
        assert_eq!((u.start(), u.end()), (Month::new(2000, 2).unwrap(), Month::new(2000, 4).unwrap()));
        assert_eq!(u.n_months(), 3);
        assert_eq!(u.assets()[1].adj_closes(), vec![2.0, 3.0, 4.0]);

        let mut bars = a.bars().to_vec();
        bars.remove(2);
        let gappy = AssetSeries::from_bars("C", bars).unwrap();
        let err = Universe::new(vec![a, gappy]).unwrap_err();
        assert!(matches!(err, MarketDataError::AssetGap { .. }), "{err:?}");
    }

    #[test]
    fn universe_needs_two_assets() {
        let a = monthly("A", Month::new(2000, 1).unwrap(), &[1.0, 2.0]);
        assert_eq!(Universe::new(vec![a]), Err(MarketDataError::UniverseTooSmall(1)));
    }

    #[test]
    fn month_parsing() {
        let m: Month = "1997-01".parse().unwrap();
        assert_eq!(m, Month::new(1997, 1).unwrap());
        assert_eq!(m.plus(13).to_string(), "1998-02");
        assert!("1997-13".parse::<Month>().is_err());
        assert_eq!(Month::new(2020, 2).unwrap().last_day().to_string(), "2020-02-29");
    }

    proptest! {
        #[test]
        fn returns_recompute_exactly(prices in prop::collection::vec(0.01f64..1e4, 2..60)) {
            let s = monthly("A", Month::new(1990, 1).unwrap(), &prices);
            prop_assert_eq!(s.returns().len(), s.len() - 1);
            for k in 1..prices.len() {
                prop_assert_eq!(s.returns()[k - 1], prices[k] / prices[k - 1] - 1.0);
            }
        }

        #[test]
        fn split_is_a_partition(months in 10usize..2000) {
            let b = SplitPlan::default().split_months(months).unwrap();
            prop_assert_eq!(b.train.start, 0);
            prop_assert_eq!(b.train.end, b.validation.start);
            prop_assert_eq!(b.validation.end, b.test.start);
            prop_assert_eq!(b.test.end, months);
            prop_assert!(!b.train.is_empty() && !b.validation.is_empty() && !b.test.is_empty());
            let expected_is = (7 * months) / 10;
            prop_assert_eq!(b.validation.end, expected_is);
            prop_assert_eq!(b.train.end, expected_is / 2);
        }

        #[test]
        fn universe_is_order_independent(seed in 0u64..1000) {
            let start = Month::new(2001, 1).unwrap();
            let mut assets: Vec<_> = (0..4)
                .map(|i| {
                    let prices: Vec<f64> = (0..12).map(|k| 10.0 + ((seed + i * 7 + k) % 5) as f64).collect();
                    monthly(&alloc::format!("T{i}"), start, &prices)
                })
                .collect();
            let forward = Universe::new(assets.clone()).unwrap();
            assets.reverse();
            prop_assert_eq!(forward, Universe::new(assets).unwrap());
        }
    }
}
