//! Result files: features, weights, returns, summaries, trials, models and
//! the metrics report.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value reads back bit-identical and reruns produce byte-identical files.

use std::path::Path;

use dewsp_core::backtest::{BacktestResult, CurvePoint, PerformanceCurve};
use dewsp_core::experiment::Models;
use dewsp_core::hpo::Trial;
use dewsp_core::indicators::{FeatureMatrix, SignalSpec};
use dewsp_core::market_data::{SplitBoundaries, Universe};
use dewsp_core::metrics::MetricsReport;
use dewsp_core::portfolio::{PortfolioKind, PortfolioWeights};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::write_bytes;

pub const MODEL_FORMAT: &str = "dewsp-model";
pub const MODEL_VERSION: u32 = 1;

fn csv_err(path: &Path, err: impl std::fmt::Display) -> CliError {
    CliError::io("write", path, err)
}

fn write_csv(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(path, e))?;
    write_bytes(path, &bytes)
}

/// `ticker,date,<signals>,target`; the target is empty for the final month.
pub fn write_features(path: &Path, features: &FeatureMatrix) -> CliResult<()> {
    let mut header = vec!["ticker".to_string(), "date".to_string()];
    header.extend(features.column_names());
    header.push("target".into());
    let rows = features.rows.iter().map(|r| {
        let mut row = vec![features.tickers[r.asset].clone(), r.date.to_string()];
        row.extend(r.signals.iter().map(|s| s.to_string()));
        row.push(r.target.map(|t| t.to_string()).unwrap_or_default());
        row
    });
    write_csv(path, header, rows)
}

/// `date,kind,N,<one column per ticker>`.
pub fn write_weights(path: &Path, universe: &Universe, weights: &[PortfolioWeights]) -> CliResult<()> {
    let mut header = vec!["date".to_string(), "kind".into(), "N".into()];
    header.extend(universe.tickers().iter().map(|t| t.to_string()));
    let rows = weights.iter().map(|w| {
        let mut row = vec![universe.date(w.month).to_string(), w.kind.to_string(), w.n.to_string()];
        row.extend(w.w.iter().map(|x| x.to_string()));
        row
    });
    write_csv(path, header, rows)
}

/// Long form `family,N,date,return`.
pub fn write_returns(path: &Path, results: &[BacktestResult]) -> CliResult<()> {
    let header = ["family", "N", "date", "return"].map(String::from).to_vec();
    let rows = results.iter().flat_map(|r| {
        r.dates
            .iter()
            .zip(&r.returns)
            .map(|(d, x)| vec![r.kind.to_string(), r.n.to_string(), d.to_string(), x.to_string()])
    });
    write_csv(path, header, rows)
}

/// `family,N,r,sigma,SR`; SR is empty when undefined.
pub fn write_summary(path: &Path, curves: &[PerformanceCurve]) -> CliResult<()> {
    let header = ["family", "N", "r", "sigma", "SR"].map(String::from).to_vec();
    let rows = curves.iter().flat_map(|c| {
        c.points.iter().map(|p| {
            vec![
                c.kind.to_string(),
                p.n.to_string(),
                p.mean.to_string(),
                p.vol.to_string(),
                p.sharpe.map(|s| s.to_string()).unwrap_or_default(),
            ]
        })
    });
    write_csv(path, header, rows)
}

#[derive(Deserialize)]
struct SummaryRow {
    family: String,
    #[serde(rename = "N")]
    n: usize,
    r: f64,
    sigma: f64,
    #[serde(rename = "SR")]
    sr: Option<f64>,
}

/// Reads a summary file back into curves, in file order.
pub fn read_summary(path: &Path) -> CliResult<Vec<PerformanceCurve>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io("report", path, e))?;
    let mut curves: Vec<PerformanceCurve> = Vec::new();
    for row in reader.deserialize::<SummaryRow>() {
        let row = row.map_err(|e| CliError::io("report", path, e))?;
        let kind: PortfolioKind = row.family.parse().map_err(|e: String| CliError::io("report", path, e))?;
        let point = CurvePoint {
            n: row.n,
            mean: row.r,
            vol: row.sigma,
            sharpe: row.sr,
        };
        match curves.iter_mut().find(|c| c.kind == kind) {
            Some(c) => c.points.push(point),
            None => curves.push(PerformanceCurve {
                kind,
                points: vec![point],
            }),
        }
    }
    Ok(curves)
}

/// `trial,loss,wall_time,<hyperparameter columns>`.
pub fn write_trials(path: &Path, trials: &[Trial]) -> CliResult<()> {
    let header = [
        "trial",
        "loss",
        "wall_time",
        "n_hidden_layers",
        "n_hidden_units",
        "init_std",
        "dropout_rate",
        "batch_size",
        "optimizer",
        "activation",
        "seed",
    ]
    .map(String::from)
    .to_vec();
    let rows = trials.iter().map(|t| {
        let hp = &t.hyperparameters;
        vec![
            t.index.to_string(),
            t.validation_mse.to_string(),
            format!("{:.6}", t.wall_time),
            hp.n_hidden_layers.to_string(),
            hp.n_hidden_units.to_string(),
            hp.init_std.to_string(),
            hp.dropout_rate.to_string(),
            hp.batch_size.to_string(),
            hp.optimizer.to_string(),
            hp.activation.to_string(),
            t.seed.to_string(),
        ]
    });
    write_csv(path, header, rows)
}

/// Versioned model file: the fitted network(s) plus what is needed to
/// rebuild their inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub specs: Vec<SignalSpec>,
    pub warmup: usize,
    pub split: SplitBoundaries,
    pub models: Models,
}

impl ModelFile {
    pub fn new(specs: Vec<SignalSpec>, warmup: usize, split: SplitBoundaries, models: Models) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            specs,
            warmup,
            split,
            models,
        }
    }
}

pub fn write_model(path: &Path, model: &ModelFile) -> CliResult<()> {
    let json = serde_json::to_vec_pretty(model).map_err(|e| csv_err(path, e))?;
    write_bytes(path, &json)
}

pub fn read_model(path: &Path) -> CliResult<ModelFile> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io("model", path, e))?;
    let model: ModelFile = serde_json::from_slice(&bytes).map_err(|e| CliError::io("model", path, e))?;
    if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
        return Err(CliError::data(
            "model",
            format!("{}: unsupported model format {} v{}", path.display(), model.format, model.version),
        ));
    }
    Ok(model)
}

/// Metrics report for both evaluation windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub in_sample: MetricsReport,
    pub out_of_sample: MetricsReport,
}

pub fn write_report(path: &Path, report: &ReportFile) -> CliResult<()> {
    let json = serde_json::to_vec_pretty(report).map_err(|e| csv_err(path, e))?;
    write_bytes(path, &json)
}
