//! Synthetic monthly market with planted, known predictability.
//!
//! Asset `i` earns `r(i,t) = alpha_i + momentum * D(i,t-1) + f_t + noise_vol * e(i,t)`,
//! where `D` is the sign (+1 on ties) of the asset's previous monthly return,
//! `f_t ~ N(0, market_vol²)` is a common factor and `e ~ N(0, 1)`. Alphas are
//! evenly spaced over `[alpha_low, alpha_high]`, so both a persistent level
//! and a one-month momentum effect are available to a forecaster.

use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{AssetSeries, MarketDataError, Month, OhlcvBar, Universe};
use crate::rng::{derive_seed, seeded};

/// Returns are floored here so prices stay positive.
const MIN_RETURN: f64 = -0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic market spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_assets: usize,
    pub n_months: usize,
    pub start: Month,
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub momentum: f64,
    pub noise_vol: f64,
    pub market_vol: f64,
    pub base_volume: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_assets: 12,
            n_months: 420,
            start: Month::new(1985, 1).unwrap_or_else(|| unreachable!()),
            alpha_low: 0.0,
            alpha_high: 0.01,
            momentum: 0.02,
            noise_vol: 0.05,
            market_vol: 0.03,
            base_volume: 1.0e6,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::InvalidSpec(msg.into()));
        if self.n_assets < 2 {
            return bad("n_assets must be at least 2");
        }
        if self.n_assets > 999 {
            return bad("n_assets must be at most 999");
        }
        if self.n_months < 2 {
            return bad("n_months must be at least 2");
        }
        let finite = [
            self.alpha_low,
            self.alpha_high,
            self.momentum,
            self.noise_vol,
            self.market_vol,
            self.base_volume,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite");
        }
        if self.alpha_low > self.alpha_high {
            return bad("alpha_low exceeds alpha_high");
        }
        if self.noise_vol < 0.0 || self.market_vol < 0.0 {
            return bad("volatilities must be non-negative");
        }
        if self.base_volume <= 0.0 {
            return bad("base_volume must be positive");
        }
        Ok(())
    }

    /// Planted per-asset drift, in asset order.
    pub fn alphas(&self) -> Vec<f64> {
        let step = (self.alpha_high - self.alpha_low) / (self.n_assets - 1) as f64;
        (0..self.n_assets).map(|i| self.alpha_low + step * i as f64).collect()
    }

    pub fn ticker(&self, i: usize) -> String {
        if self.n_assets < 100 {
            alloc::format!("S{:02}", i + 1)
        } else {
            alloc::format!("S{:03}", i + 1)
        }
    }
}

/// Generates the market for `spec`; identical seeds give identical universes.
pub fn synth_market(spec: &SynthSpec, seed: u64) -> Result<Universe, SynthError> {
    spec.validate()?;
    let alphas = spec.alphas();
    let mut returns_rng = seeded(derive_seed(seed, 0));
    let mut bar_rng = seeded(derive_seed(seed, 1));
    let normal = |rng: &mut crate::rng::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut returns = alloc::vec![alloc::vec![0.0; spec.n_assets]; spec.n_months];
    let mut direction = alloc::vec![1.0; spec.n_assets];
    for row in returns.iter_mut().skip(1) {
        let factor = spec.market_vol * normal(&mut returns_rng);
        for (i, r) in row.iter_mut().enumerate() {
            let raw = alphas[i] + spec.momentum * direction[i] + factor + spec.noise_vol * normal(&mut returns_rng);
            *r = raw.max(MIN_RETURN);
            direction[i] = if *r >= 0.0 { 1.0 } else { -1.0 };
        }
    }

    let mut assets = Vec::with_capacity(spec.n_assets);
    for i in 0..spec.n_assets {
        let mut bars = Vec::with_capacity(spec.n_months);
        let mut close = 100.0;
        for (t, row) in returns.iter().enumerate() {
            let open = close;
            if t > 0 {
                close *= 1.0 + row[i];
            }
            let wick_up = 1.0 + 0.02 * libm::fabs(normal(&mut bar_rng));
            let wick_down = 1.0 - 0.02 * libm::fabs(normal(&mut bar_rng)).min(10.0);
            let volume = spec.base_volume * libm::exp(0.3 * normal(&mut bar_rng));
            bars.push(OhlcvBar {
                date: spec.start.plus(t).last_day(),
                open,
                high: open.max(close) * wick_up,
                low: open.min(close) * wick_down.max(0.5),
                adj_close: close,
                volume,
            });
        }
        assets.push(AssetSeries::from_bars(spec.ticker(i), bars)?);
    }
    Ok(Universe::new(assets)?)
}
