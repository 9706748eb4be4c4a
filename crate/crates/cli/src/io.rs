//! Market data on disk: per-ticker OHLCV CSV files and the binary universe
//! cache.
//!
//! OHLCV CSV has the header `date,open,high,low,adj_close,volume`, one row
//! per bar, dates as `YYYY-MM-DD`. Extra columns are ignored. Daily files are
//! resampled to month-end bars on load.
//!
//! `universe.bin` is little-endian: the magic `DEWSPUNI`, a `u32` format
//! version, a `u32` asset count, then per asset a `u32`-length UTF-8 ticker,
//! a `u32` bar count and per bar an `i32` day number (days from 0001-01-01,
//! CE) followed by open, high, low, adj_close and volume as `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use dewsp_core::market_data::{monthly_last, AssetSeries, MarketDataError, Month, OhlcvBar, Universe};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 8] = b"DEWSPUNI";
const FORMAT_VERSION: u32 = 1;
const OHLCV_COLUMNS: [&str; 6] = ["date", "open", "high", "low", "adj_close", "volume"];

fn data_err(path: &Path, err: impl std::fmt::Display) -> CliError {
    CliError::io("ingest", path, err)
}

/// Parses OHLCV CSV text into bars.
pub fn parse_ohlcv(text: &[u8]) -> Result<Vec<OhlcvBar>, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text);
    let headers = reader
        .headers()
        .map_err(|e| MarketDataError::UnparseableRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let mut index = [0usize; 6];
    for (slot, name) in index.iter_mut().zip(OHLCV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| MarketDataError::MissingColumn(name.into()))?;
    }
    let mut bars = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let bad = |reason: String| MarketDataError::UnparseableRow { line, reason };
        let record = record.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| record.get(index[i]).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d").map_err(|e| bad(format!("date `{}`: {e}", field(0))))?;
        let mut values = [0.0; 5];
        for (j, v) in values.iter_mut().enumerate() {
            let raw = field(j + 1);
            *v = raw
                .parse::<f64>()
                .map_err(|_| bad(format!("{} `{raw}` is not a number", OHLCV_COLUMNS[j + 1])))?;
        }
        bars.push(OhlcvBar {
            date,
            open: values[0],
            high: values[1],
            low: values[2],
            adj_close: values[3],
            volume: values[4],
        });
    }
    Ok(bars)
}

/// Writes bars as OHLCV CSV.
pub fn write_ohlcv(path: &Path, bars: &[OhlcvBar]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| data_err(path, e))?;
    w.write_record(OHLCV_COLUMNS).map_err(|e| data_err(path, e))?;
    for b in bars {
        w.write_record([
            b.date.format("%Y-%m-%d").to_string(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.adj_close.to_string(),
            b.volume.to_string(),
        ])
        .map_err(|e| data_err(path, e))?;
    }
    w.flush().map_err(|e| data_err(path, e))
}

/// Loads one ticker's CSV, resampling to month-end bars if needed.
pub fn load_series(path: &Path, ticker: &str) -> CliResult<AssetSeries> {
    let text = fs::read(path).map_err(|e| data_err(path, e))?;
    let bars = parse_ohlcv(&text).map_err(|e| data_err(path, e))?;
    let series = AssetSeries::from_bars(ticker, bars).map_err(|e| data_err(path, e))?;
    monthly_last(&series).map_err(|e| data_err(path, e))
}

/// CSV files in `dir`, restricted to `tickers` when given, sorted by ticker.
pub fn ticker_files(dir: &Path, tickers: &[String]) -> CliResult<Vec<(String, PathBuf)>> {
    if !tickers.is_empty() {
        return Ok(tickers.iter().map(|t| (t.clone(), dir.join(format!("{t}.csv")))).collect());
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| data_err(dir, e))? {
        let path = entry.map_err(|e| data_err(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.push((stem.to_string(), path));
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::data("ingest", format!("no CSV files in {}", dir.display())));
    }
    Ok(files)
}

/// Loads a universe from a directory of per-ticker CSV files.
pub fn load_universe_dir(dir: &Path, tickers: &[String], start: Option<Month>, end: Option<Month>) -> CliResult<Universe> {
    let mut assets = Vec::new();
    for (ticker, path) in ticker_files(dir, tickers)? {
        assets.push(load_series(&path, &ticker)?);
    }
    Universe::with_window(assets, start, end).map_err(|e| CliError::core("ingest", e))
}

/// Writes each asset of `universe` as `<dir>/<TICKER>.csv`.
pub fn write_universe_dir(dir: &Path, universe: &Universe) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
    let mut paths = Vec::new();
    for asset in universe.assets() {
        let path = dir.join(format!("{}.csv", asset.ticker()));
        write_ohlcv(&path, asset.bars())?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn encode_universe(universe: &Universe) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(universe.n_assets() as u32).to_le_bytes());
    for asset in universe.assets() {
        let ticker = asset.ticker().as_bytes();
        out.extend_from_slice(&(ticker.len() as u32).to_le_bytes());
        out.extend_from_slice(ticker);
        out.extend_from_slice(&(asset.len() as u32).to_le_bytes());
        for b in asset.bars() {
            out.extend_from_slice(&b.date.num_days_from_ce().to_le_bytes());
            for v in [b.open, b.high, b.low, b.adj_close, b.volume] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().map_err(|_| "truncated file")?))
    }

    fn i32(&mut self) -> Result<i32, String> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().map_err(|_| "truncated file")?))
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().map_err(|_| "truncated file")?))
    }
}

pub fn decode_universe(bytes: &[u8]) -> Result<Universe, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err("not a universe file (bad magic)".into());
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported universe format version {version}"));
    }
    let n_assets = c.u32()? as usize;
    let mut assets = Vec::with_capacity(n_assets.min(4096));
    for _ in 0..n_assets {
        let len = c.u32()? as usize;
        let ticker = std::str::from_utf8(c.take(len)?).map_err(|e| e.to_string())?.to_string();
        let n_bars = c.u32()? as usize;
        let mut bars = Vec::with_capacity(n_bars.min(1 << 20));
        for _ in 0..n_bars {
            let days = c.i32()?;
            let date = NaiveDate::from_num_days_from_ce_opt(days).ok_or("invalid date")?;
            bars.push(OhlcvBar {
                date,
                open: c.f64()?,
                high: c.f64()?,
                low: c.f64()?,
                adj_close: c.f64()?,
                volume: c.f64()?,
            });
        }
        assets.push(AssetSeries::from_bars(ticker, bars).map_err(|e| e.to_string())?);
    }
    if c.pos != bytes.len() {
        return Err("trailing bytes after universe".into());
    }
    Universe::new(assets).map_err(|e| e.to_string())
}

pub fn write_universe_bin(path: &Path, universe: &Universe) -> CliResult<()> {
    write_bytes(path, &encode_universe(universe))
}

pub fn read_universe_bin(path: &Path) -> CliResult<Universe> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| data_err(path, e))?;
    decode_universe(&bytes).map_err(|e| data_err(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io("write", parent, e))?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| CliError::io("write", path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io("hash", path, e))?;
    Ok(sha256_hex(&bytes))
}

/// `YYYY-MM` for a month-end date.
pub fn month_label(date: NaiveDate) -> String {
    format!("{:04}-{:02}", date.year(), date.month())
}
