//! Portfolio construction.
//!
//! Subset portfolios rank assets by a forecast and hold the top `N` at `1/N`
//! each. The optimised benchmarks (max-Sharpe and minimum-variance, both
//! long-only and fully invested) are solved by spectral projected gradient
//! on the simplex with several starting points.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indicators::FeatureMatrix;
use crate::linalg::{dot, project_simplex, SquareMatrix};
use crate::market_data::{SplitBoundaries, Universe};
use crate::neural::{self, NeuralError, TrainedModel};
use crate::rng::seeded;

/// Eigenvalue floor below which a covariance matrix is ridge-regularised.
pub const MIN_EIGENVALUE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PortfolioError {
    #[error("forecast for asset {0} is not finite")]
    NonFiniteForecast(usize),
    #[error("subset size {n} outside 1..={n0}")]
    InvalidSubsetSize { n: usize, n0: usize },
    #[error("empty estimation window")]
    EmptyWindow,
    #[error("covariance needs at least 2 months, got {0}")]
    WindowTooShort(usize),
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("optimiser did not converge to a finite point")]
    SolverDiverged,
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Portfolio families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PortfolioKind {
    /// Top-N by deep-learning forecast.
    Dewsp,
    /// Top-N by historical mean over train + validation.
    HewspTv,
    /// Top-N by historical mean over train.
    HewspT,
    /// Top-N by historical mean over validation.
    HewspV,
    /// Random N-subset.
    Rewsp,
    /// Equal weight over the whole universe.
    Ewwp,
    /// Long-only maximum Sharpe ratio.
    Msrp,
    /// Long-only minimum variance.
    Mvp,
}

impl PortfolioKind {
    pub const ALL: [PortfolioKind; 8] = [
        PortfolioKind::Dewsp,
        PortfolioKind::HewspTv,
        PortfolioKind::HewspT,
        PortfolioKind::HewspV,
        PortfolioKind::Rewsp,
        PortfolioKind::Ewwp,
        PortfolioKind::Msrp,
        PortfolioKind::Mvp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PortfolioKind::Dewsp => "DEWSP",
            PortfolioKind::HewspTv => "HEWSP-TV",
            PortfolioKind::HewspT => "HEWSP-T",
            PortfolioKind::HewspV => "HEWSP-V",
            PortfolioKind::Rewsp => "REWSP",
            PortfolioKind::Ewwp => "EWWP",
            PortfolioKind::Msrp => "MSRP",
            PortfolioKind::Mvp => "MVP",
        }
    }

    /// Families swept over subset sizes `N = 1..=N₀`.
    pub fn is_subset_family(self) -> bool {
        matches!(
            self,
            PortfolioKind::Dewsp | PortfolioKind::HewspTv | PortfolioKind::HewspT | PortfolioKind::HewspV | PortfolioKind::Rewsp
        )
    }

    pub fn historical_scope(self) -> Option<HistoricalScope> {
        match self {
            PortfolioKind::HewspTv => Some(HistoricalScope::TrainValidation),
            PortfolioKind::HewspT => Some(HistoricalScope::Train),
            PortfolioKind::HewspV => Some(HistoricalScope::Validation),
            _ => None,
        }
    }
}

impl fmt::Display for PortfolioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PortfolioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PortfolioKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| alloc::format!("unknown portfolio family `{s}`"))
    }
}

impl TryFrom<String> for PortfolioKind {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<PortfolioKind> for String {
    fn from(kind: PortfolioKind) -> Self {
        kind.name().into()
    }
}

/// In-sample window used to estimate historical mean returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoricalScope {
    TrainValidation,
    Validation,
    Train,
}

impl HistoricalScope {
    /// Realised-return months covered by the scope (month 0 has no return).
    pub fn months(self, split: &SplitBoundaries) -> Range<usize> {
        let r = match self {
            HistoricalScope::TrainValidation => split.in_sample(),
            HistoricalScope::Validation => split.validation.clone(),
            HistoricalScope::Train => split.train.clone(),
        };
        r.start.max(1)..r.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastSource {
    Deep,
    Historical(HistoricalScope),
}

/// Expected next-month return per asset, formed at month `month`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnForecast {
    pub month: usize,
    pub mu: Vec<f64>,
    pub source: ForecastSource,
}

/// Long-only weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioWeights {
    pub month: usize,
    pub kind: PortfolioKind,
    pub n: usize,
    pub w: Vec<f64>,
}

/// Asset indices sorted by descending forecast, ties by ticker.
pub fn rank_assets(mu: &[f64], tickers: &[&str]) -> Result<Vec<usize>, PortfolioError> {
    if mu.len() != tickers.len() {
        return Err(PortfolioError::DimensionMismatch(alloc::format!(
            "{} forecasts for {} tickers",
            mu.len(),
            tickers.len()
        )));
    }
    if let Some(i) = mu.iter().position(|m| !m.is_finite()) {
        return Err(PortfolioError::NonFiniteForecast(i));
    }
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&a, &b| mu[b].total_cmp(&mu[a]).then_with(|| tickers[a].cmp(tickers[b])));
    Ok(order)
}

/// `1/N` on the first `n` entries of `ordering`, zero elsewhere.
pub fn subset_equal_weights(ordering: &[usize], n: usize, n0: usize) -> Result<Vec<f64>, PortfolioError> {
    if n == 0 || n > n0 || ordering.len() != n0 {
        return Err(PortfolioError::InvalidSubsetSize { n, n0 });
    }
    let mut w = vec![0.0; n0];
    let share = 1.0 / n as f64;
    for &i in &ordering[..n] {
        w[i] = share;
    }
    Ok(w)
}

/// `1/N₀` everywhere.
pub fn equal_whole(n0: usize) -> Vec<f64> {
    vec![1.0 / n0 as f64; n0]
}

/// Uniformly random `n`-subset held at equal weights.
pub fn random_subset(n: usize, n0: usize, seed: u64) -> Result<Vec<f64>, PortfolioError> {
    if n == 0 || n > n0 {
        return Err(PortfolioError::InvalidSubsetSize { n, n0 });
    }
    let mut rng = seeded(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n0, n).into_vec();
    chosen.sort_unstable();
    // Same subset, ordered, keeps the 1/N assignment independent of draw order.
    let mut w = vec![0.0; n0];
    let share = 1.0 / n as f64;
    for i in chosen {
        w[i] = share;
    }
    Ok(w)
}

/// Realised returns for months in `months`, one row per month.
pub fn returns_matrix(universe: &Universe, months: Range<usize>) -> Vec<Vec<f64>> {
    months.map(|m| universe.realized_returns(m)).collect()
}

/// Per-asset arithmetic mean of the rows of `returns`.
pub fn historical_mean(returns: &[Vec<f64>]) -> Result<Vec<f64>, PortfolioError> {
    let first = returns.first().ok_or(PortfolioError::EmptyWindow)?;
    let mut mean = vec![0.0; first.len()];
    for row in returns {
        for (m, r) in mean.iter_mut().zip(row) {
            *m += r;
        }
    }
    let t = returns.len() as f64;
    mean.iter_mut().for_each(|m| *m /= t);
    Ok(mean)
}

/// Historical mean forecast over the scope's in-sample months.
pub fn historical_mean_forecast(
    universe: &Universe,
    split: &SplitBoundaries,
    scope: HistoricalScope,
) -> Result<ReturnForecast, PortfolioError> {
    let months = scope.months(split);
    let mu = historical_mean(&returns_matrix(universe, months.clone()))?;
    Ok(ReturnForecast {
        month: months.end.saturating_sub(1),
        mu,
        source: ForecastSource::Historical(scope),
    })
}

/// Deep-learning model(s) producing return forecasts.
#[derive(Debug, Clone, Copy)]
pub enum Forecaster<'a> {
    /// One model shared by every asset.
    Pooled(&'a TrainedModel),
    /// One model per asset, in universe order.
    PerAsset(&'a [TrainedModel]),
}

/// Forecasts for every asset from the feature rows of month `t`.
pub fn deep_forecast(forecaster: Forecaster<'_>, features: &FeatureMatrix, t: usize) -> Result<ReturnForecast, PortfolioError> {
    let rows = features.rows_at(t);
    let mu = match forecaster {
        Forecaster::Pooled(model) => neural::predict(model, &rows)?,
        Forecaster::PerAsset(models) => {
            if models.len() != rows.len() {
                return Err(PortfolioError::DimensionMismatch(alloc::format!(
                    "{} models for {} rows",
                    models.len(),
                    rows.len()
                )));
            }
            let mut mu = Vec::with_capacity(rows.len());
            for (model, row) in models.iter().zip(&rows) {
                mu.push(neural::predict(model, &[*row])?[0]);
            }
            mu
        }
    };
    Ok(ReturnForecast {
        month: t,
        mu,
        source: ForecastSource::Deep,
    })
}

/// Forecasts keyed by formation month.
pub type ForecastBook = BTreeMap<usize, ReturnForecast>;

/// Symmetric positive-definite covariance of monthly returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMatrix {
    pub sigma: SquareMatrix,
    pub estimation_window: Range<usize>,
    /// Ridge added to the diagonal, zero when none was needed.
    pub ridge: f64,
}

impl CovarianceMatrix {
    /// Validates symmetry (1e-12) and semidefiniteness (-1e-10), symmetrises,
    /// and adds a ridge if the smallest eigenvalue is below [`MIN_EIGENVALUE`].
    pub fn new(mut sigma: SquareMatrix, estimation_window: Range<usize>) -> Result<Self, PortfolioError> {
        let asym = sigma.max_asymmetry();
        if !(asym <= 1e-12) {
            return Err(PortfolioError::NotSymmetric(asym));
        }
        let n = sigma.dim();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (sigma.get(i, j) + sigma.get(j, i));
                sigma.set(i, j, v);
                sigma.set(j, i, v);
            }
        }
        let min_eig = sigma.symmetric_eigenvalues().first().copied().unwrap_or(0.0);
        if !(min_eig >= -1e-10) {
            return Err(PortfolioError::NotPositiveSemidefinite(min_eig));
        }
        let mut ridge = 0.0;
        if min_eig < MIN_EIGENVALUE {
            let scale = (sigma.trace() / n.max(1) as f64).max(MIN_EIGENVALUE);
            ridge = MIN_EIGENVALUE - min_eig + 1e-8 * scale;
            for i in 0..n {
                sigma.set(i, i, sigma.get(i, i) + ridge);
            }
            log::warn!("covariance is near-singular (smallest eigenvalue {min_eig:e}); added ridge {ridge:e}");
        }
        Ok(Self {
            sigma,
            estimation_window,
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }
}

/// Unbiased sample covariance of the rows of `returns`.
pub fn sample_covariance(returns: &[Vec<f64>], window: Range<usize>) -> Result<CovarianceMatrix, PortfolioError> {
    if returns.len() < 2 {
        return Err(PortfolioError::WindowTooShort(returns.len()));
    }
    let mean = historical_mean(returns)?;
    let n = mean.len();
    let mut sigma = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = returns.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum();
            let v = s / (returns.len() - 1) as f64;
            sigma.set(i, j, v);
            sigma.set(j, i, v);
        }
    }
    CovarianceMatrix::new(sigma, window)
}

/// Spectral projected gradient (non-monotone, Barzilai–Borwein steps) on the simplex.
fn spg_minimize(objective: &dyn Fn(&[f64]) -> (f64, Vec<f64>), start: &[f64]) -> (Vec<f64>, f64) {
    const MEMORY: usize = 10;
    const MAX_ITER: usize = 20_000;
    const SUFFICIENT_DECREASE: f64 = 1e-4;
    const STATIONARITY_TOL: f64 = 1e-13;
    // Objective-change tolerance; stops only after a run of stalled steps.
    const CHANGE_TOL: f64 = 1e-10;
    const STALL_LIMIT: usize = 5;

    let mut x = project_simplex(start);
    let (mut f, mut g) = objective(&x);
    let mut recent = vec![f; 1];
    let mut step = {
        let d: Vec<f64> = project_simplex(&sub_scaled(&x, &g, 1.0));
        let norm = d.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if norm > 0.0 {
            (1.0 / norm).min(1e10)
        } else {
            1.0
        }
    };
    let mut stalled = 0;
    for _ in 0..MAX_ITER {
        let unit = project_simplex(&sub_scaled(&x, &g, 1.0));
        let stationarity = unit.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if stationarity <= STATIONARITY_TOL || !f.is_finite() {
            break;
        }
        let target = project_simplex(&sub_scaled(&x, &g, step));
        let d: Vec<f64> = target.iter().zip(&x).map(|(t, xi)| t - xi).collect();
        let slope = dot(&g, &d);
        if slope >= 0.0 {
            // Step too long to be a descent direction after projection rounding.
            step = 1.0;
            continue;
        }
        let f_ref = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lambda = 1.0;
        let (x_new, f_new, g_new) = loop {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + lambda * di).collect();
            let (fc, gc) = objective(&cand);
            if fc <= f_ref + SUFFICIENT_DECREASE * lambda * slope || lambda < 1e-12 {
                break (cand, fc, gc);
            }
            lambda *= 0.5;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-12, 1e12) } else { 1e12 };
        if (f - f_new).abs() <= CHANGE_TOL * f.abs().max(f64::MIN_POSITIVE) * 1e-5 {
            stalled += 1;
        } else {
            stalled = 0;
        }
        x = x_new;
        f = f_new;
        g = g_new;
        recent.push(f);
        if recent.len() > MEMORY {
            recent.remove(0);
        }
        if stalled >= STALL_LIMIT {
            break;
        }
    }
    let x = project_simplex(&x);
    let f = objective(&x).0;
    (x, f)
}

fn sub_scaled(x: &[f64], g: &[f64], step: f64) -> Vec<f64> {
    x.iter().zip(g).map(|(xi, gi)| xi - step * gi).collect()
}

/// Uniform start plus four random points on the simplex, fixed seed.
fn starting_points(n: usize) -> Vec<Vec<f64>> {
    let mut rng = seeded(0x5eed);
    let mut starts = vec![vec![1.0 / n as f64; n]];
    for _ in 0..4 {
        let raw: Vec<f64> = (0..n).map(|_| -libm::log(1.0 - rng.random::<f64>())).collect();
        let total: f64 = raw.iter().sum();
        starts.push(raw.iter().map(|v| v / total).collect());
    }
    starts
}

fn multi_start(n: usize, objective: &dyn Fn(&[f64]) -> (f64, Vec<f64>)) -> Result<Vec<f64>, PortfolioError> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starting_points(n) {
        let (x, f) = spg_minimize(objective, &start);
        if f.is_finite() && best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    best.map(|(x, _)| x).ok_or(PortfolioError::SolverDiverged)
}

/// Sharpe ratio `wᵀμ / √(wᵀΣw)`.
pub fn portfolio_sharpe(w: &[f64], mu: &[f64], sigma: &SquareMatrix) -> f64 {
    dot(w, mu) / libm::sqrt(sigma.quad_form(w))
}

/// Long-only, fully invested weights maximising the Sharpe ratio.
pub fn msrp_weights(mu: &[f64], covariance: &CovarianceMatrix) -> Result<Vec<f64>, PortfolioError> {
    let n = covariance.dim();
    if mu.len() != n {
        return Err(PortfolioError::DimensionMismatch(alloc::format!("{} forecasts for a {n}×{n} covariance", mu.len())));
    }
    if let Some(i) = mu.iter().position(|m| !m.is_finite()) {
        return Err(PortfolioError::NonFiniteForecast(i));
    }
    if mu.iter().all(|&m| m <= 0.0) {
        log::warn!("every forecast is non-positive; returning the least negative Sharpe portfolio");
    }
    let sigma = &covariance.sigma;
    let objective = |w: &[f64]| {
        let sw = sigma.mul_vec(w);
        let var = dot(w, &sw);
        let sd = libm::sqrt(var);
        let ret = dot(w, mu);
        let grad = mu
            .iter()
            .zip(&sw)
            .map(|(m, s)| -(m / sd - ret * s / (var * sd)))
            .collect();
        (-ret / sd, grad)
    };
    multi_start(n, &objective)
}

/// Long-only, fully invested weights minimising variance.
pub fn mvp_weights(covariance: &CovarianceMatrix) -> Result<Vec<f64>, PortfolioError> {
    let n = covariance.dim();
    let sigma = &covariance.sigma;
    // Scale to unit average variance so the tolerances are scale-free.
    let scale = 1.0 / (sigma.trace() / n as f64);
    let objective = |w: &[f64]| {
        let sw = sigma.mul_vec(w);
        (scale * dot(w, &sw), sw.iter().map(|s| 2.0 * scale * s).collect())
    };
    multi_start(n, &objective)
}
