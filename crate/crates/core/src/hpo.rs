//! Tree-structured Parzen Estimator over the categorical hyperparameter grid.
//!
//! Every searched dimension is a finite set, so each density is a smoothed
//! categorical histogram: `(count + 1) / (n + K)` over `K` choices. After
//! `n_startup` uniform draws, the history is split at the `gamma` quantile
//! of losses; candidates are sampled from the good-set density `l(x)` and the
//! one maximising `l(x) / g(x)` is proposed.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{self, Activation, Dataset, Hyperparameters, NeuralError, OptimizerKind, TrainedModel};
use crate::rng::{derive_seed, seeded, ChaCha8Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HpoError {
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("every trial diverged")]
    AllTrialsDiverged,
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Number of choices per searched dimension: layers, units, init std,
/// dropout, batch size, optimizer, activation.
pub const DIMENSIONS: [usize; 7] = [2, 4, 3, 3, 3, 3, 3];

/// One index into each dimension of [`DIMENSIONS`].
pub type Point = [usize; 7];

pub fn hyperparameters_at(point: &Point) -> Hyperparameters {
    Hyperparameters {
        n_hidden_layers: Hyperparameters::HIDDEN_LAYERS[point[0]],
        n_hidden_units: Hyperparameters::HIDDEN_UNITS[point[1]],
        init_std: Hyperparameters::INIT_STDS[point[2]],
        dropout_rate: Hyperparameters::DROPOUT_RATES[point[3]],
        batch_size: Hyperparameters::BATCH_SIZES[point[4]],
        optimizer: OptimizerKind::ALL[point[5]],
        activation: Activation::ALL[point[6]],
        learning_rate: Hyperparameters::LEARNING_RATE,
        max_epochs: Hyperparameters::MAX_EPOCHS,
        patience: Hyperparameters::PATIENCE,
    }
}

/// Inverse of [`hyperparameters_at`]; `None` outside the grid.
pub fn point_of(hp: &Hyperparameters) -> Option<Point> {
    fn index<T: PartialEq>(set: &[T], v: &T) -> Option<usize> {
        set.iter().position(|x| x == v)
    }
    if !hp.in_search_space() {
        return None;
    }
    Some([
        index(&Hyperparameters::HIDDEN_LAYERS, &hp.n_hidden_layers)?,
        index(&Hyperparameters::HIDDEN_UNITS, &hp.n_hidden_units)?,
        index(&Hyperparameters::INIT_STDS, &hp.init_std)?,
        index(&Hyperparameters::DROPOUT_RATES, &hp.dropout_rate)?,
        index(&Hyperparameters::BATCH_SIZES, &hp.batch_size)?,
        index(&OptimizerKind::ALL, &hp.optimizer)?,
        index(&Activation::ALL, &hp.activation)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            n_startup: 10,
            gamma: 0.25,
            n_candidates: 24,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<(), HpoError> {
        if self.n_startup == 0 {
            return Err(HpoError::InvalidConfig("n_startup must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(HpoError::InvalidConfig("gamma must lie in (0, 1)".into()));
        }
        if self.n_candidates == 0 {
            return Err(HpoError::InvalidConfig("n_candidates must be at least 1".into()));
        }
        Ok(())
    }
}

/// One completed evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub hyperparameters: Hyperparameters,
    /// `+∞` when training diverged.
    pub validation_mse: f64,
    pub seed: u64,
    pub wall_time: f64,
}

/// Trial history plus a pointer to the best trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub config: TpeConfig,
    history: Vec<Trial>,
    best: Option<usize>,
}

impl SearchState {
    pub fn new(config: TpeConfig) -> Result<Self, HpoError> {
        config.validate()?;
        Ok(Self {
            config,
            history: Vec::new(),
            best: None,
        })
    }

    pub fn history(&self) -> &[Trial] {
        &self.history
    }

    /// Lowest loss, earliest trial on ties.
    pub fn best(&self) -> Option<&Trial> {
        self.best.map(|i| &self.history[i])
    }

    pub fn record(&mut self, mut trial: Trial) {
        if trial.validation_mse.is_nan() {
            trial.validation_mse = f64::INFINITY;
        }
        let improves = match self.best() {
            None => true,
            Some(b) => trial.validation_mse < b.validation_mse,
        };
        self.history.push(trial);
        if improves {
            self.best = Some(self.history.len() - 1);
        }
    }
}

fn uniform_point(dims: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    dims.iter().map(|&k| rng.random_range(0..k)).collect()
}

/// Smoothed categorical density of one dimension.
fn density(values: impl Iterator<Item = usize>, k: usize) -> Vec<f64> {
    let mut counts = alloc::vec![1.0; k];
    let mut n = 0.0;
    for v in values {
        counts[v] += 1.0;
        n += 1.0;
    }
    counts.iter().map(|c| c / (n + k as f64)).collect()
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// TPE proposal over an arbitrary categorical space.
///
/// `history` pairs past points with their losses in trial order.
pub fn tpe_suggest_point(history: &[(Vec<usize>, f64)], dims: &[usize], config: &TpeConfig, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    if history.len() < config.n_startup {
        return uniform_point(dims, &mut rng);
    }
    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&a, &b| history[a].1.total_cmp(&history[b].1).then(a.cmp(&b)));
    let n_good = (libm::ceil(config.gamma * history.len() as f64) as usize).clamp(1, history.len());
    let (good, bad) = order.split_at(n_good);

    let l: Vec<Vec<f64>> = dims
        .iter()
        .enumerate()
        .map(|(d, &k)| density(good.iter().map(|&i| history[i].0[d]), k))
        .collect();
    let g: Vec<Vec<f64>> = dims
        .iter()
        .enumerate()
        .map(|(d, &k)| density(bad.iter().map(|&i| history[i].0[d]), k))
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..config.n_candidates {
        let candidate: Vec<usize> = l.iter().map(|p| sample_categorical(p, &mut rng)).collect();
        let score: f64 = candidate
            .iter()
            .enumerate()
            .map(|(d, &c)| libm::log(l[d][c]) - libm::log(g[d][c]))
            .sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, candidate));
        }
    }
    best.map(|(_, c)| c).unwrap_or_else(|| uniform_point(dims, &mut rng))
}

/// Next hyperparameters to evaluate given the search so far.
pub fn tpe_suggest(state: &SearchState, seed: u64) -> Hyperparameters {
    let history: Vec<(Vec<usize>, f64)> = state
        .history
        .iter()
        .filter_map(|t| point_of(&t.hyperparameters).map(|p| (p.to_vec(), t.validation_mse)))
        .collect();
    let p = tpe_suggest_point(&history, &DIMENSIONS, &state.config, seed);
    hyperparameters_at(&[p[0], p[1], p[2], p[3], p[4], p[5], p[6]])
}

/// Source of elapsed seconds for trial timing.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Clock that always reads zero.
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Runs `n_evals` sequential trials of `evaluate`, which returns the
/// validation loss and, optionally, an artefact to keep if the trial is best.
///
/// Trial `i` is proposed with seed `derive_seed(seed, 2i)` and trained with
/// `derive_seed(seed, 2i + 1)`, so the search replays exactly.
pub fn run_search<M, F>(
    n_evals: usize,
    seed: u64,
    config: TpeConfig,
    clock: &dyn Clock,
    mut evaluate: F,
) -> Result<(SearchState, Option<M>), HpoError>
where
    F: FnMut(&Hyperparameters, u64) -> Result<(f64, Option<M>), HpoError>,
{
    if n_evals == 0 {
        return Err(HpoError::InvalidConfig("n_evals must be at least 1".into()));
    }
    let mut state = SearchState::new(config)?;
    let mut best_artifact = None;
    for index in 0..n_evals {
        let hp = tpe_suggest(&state, derive_seed(seed, 2 * index as u64));
        let trial_seed = derive_seed(seed, 2 * index as u64 + 1);
        let started = clock.seconds();
        let (loss, artifact) = evaluate(&hp, trial_seed)?;
        let before = state.best;
        state.record(Trial {
            index,
            hyperparameters: hp,
            validation_mse: loss,
            seed: trial_seed,
            wall_time: clock.seconds() - started,
        });
        if state.best != before {
            best_artifact = artifact;
        }
    }
    Ok((state, best_artifact))
}

/// Searches network hyperparameters, training one model per trial.
///
/// Diverged trials score `+∞` and are never selected.
pub fn tune(
    train_set: &Dataset,
    val_set: &Dataset,
    n_evals: usize,
    seed: u64,
    config: TpeConfig,
    clock: &dyn Clock,
) -> Result<(TrainedModel, Vec<Trial>), HpoError> {
    let (state, model) = run_search(n_evals, seed, config, clock, |hp, trial_seed| {
        let model = neural::init_model(hp, train_set.width(), trial_seed)?;
        match neural::train(model, train_set, val_set) {
            Ok((trained, report)) => Ok((report.best_validation_mse, Some(trained))),
            Err(NeuralError::NonFiniteLoss { .. }) => Ok((f64::INFINITY, None)),
            Err(e) => Err(e.into()),
        }
    })?;
    let best = state.best().filter(|t| t.validation_mse.is_finite());
    match (best, model) {
        (Some(_), Some(model)) => Ok((model, state.history)),
        _ => Err(HpoError::AllTrialsDiverged),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn grid_round_trip() {
        let mut count = 0;
        for a in 0..2 {
            for b in 0..4 {
                for c in 0..3 {
                    let p = [a, b, c, (a + b) % 3, c, (b + c) % 3, (a + c) % 3];
                    assert_eq!(point_of(&hyperparameters_at(&p)), Some(p));
                    count += 1;
                }
            }
        }
        assert_eq!(count, 24);
        assert_eq!(point_of(&Hyperparameters { init_std: 0.1, ..Hyperparameters::default() }), None);
    }

    #[test]
    fn empty_history_suggests_grid_point() {
        let state = SearchState::new(TpeConfig::default()).unwrap();
        for seed in 0..50 {
            assert!(tpe_suggest(&state, seed).in_search_space());
        }
    }

    #[test]
    fn flat_history_still_in_grid() {
        let mut state = SearchState::new(TpeConfig::default()).unwrap();
        for i in 0..50 {
            state.record(Trial {
                index: i,
                hyperparameters: tpe_suggest(&state, i as u64),
                validation_mse: 1.0,
                seed: 0,
                wall_time: 0.0,
            });
        }
        assert_eq!(state.best().unwrap().index, 0);
        for seed in 0..20 {
            assert!(tpe_suggest(&state, seed).in_search_space());
        }
    }

    #[test]
    fn config_validation() {
        assert!(TpeConfig { n_startup: 0, ..TpeConfig::default() }.validate().is_err());
        assert!(TpeConfig { gamma: 1.0, ..TpeConfig::default() }.validate().is_err());
        assert!(TpeConfig { gamma: 0.0, ..TpeConfig::default() }.validate().is_err());
    }

    #[test]
    fn exploits_good_region() {
        // After startup, proposals should concentrate on the good set's values.
        let dims = [3usize, 3];
        let mut history = Vec::new();
        let others = [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2], [2, 0], [2, 2]];
        for i in 0..40 {
            if i % 4 == 0 {
                history.push((vec![2, 1], 0.0));
            } else {
                history.push((others[i % others.len()].to_vec(), 1.0 + i as f64));
            }
        }
        let config = TpeConfig::default();
        let hits = (0..50)
            .filter(|&s| tpe_suggest_point(&history, &dims, &config, s) == vec![2, 1])
            .count();
        assert!(hits > 10, "{hits}");
    }

    fn planted(point: &Point) -> f64 {
        let target: Point = [1, 2, 0, 1, 2, 1, 0];
        point.iter().zip(&target).filter(|(a, b)| a != b).count() as f64
    }

    #[test]
    fn search_bookkeeping() {
        let (state, best) = run_search(30, 4, TpeConfig::default(), &NoClock, |hp, seed| {
            let loss = planted(&point_of(hp).unwrap());
            Ok((loss, Some(seed)))
        })
        .unwrap();
        assert_eq!(state.history().len(), 30);
        let best_trial = state.best().unwrap();
        assert_eq!(best, Some(best_trial.seed));
        let min = state.history().iter().map(|t| t.validation_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(best_trial.validation_mse, min);
        let first_min = state.history().iter().position(|t| t.validation_mse == min).unwrap();
        assert_eq!(best_trial.index, first_min);

        let again = run_search(30, 4, TpeConfig::default(), &NoClock, |hp, seed| {
            Ok((planted(&point_of(hp).unwrap()), Some(seed)))
        })
        .unwrap();
        assert_eq!(state.history(), again.0.history());
    }

    #[test]
    fn single_evaluation_is_best() {
        let (state, best) = run_search(1, 9, TpeConfig::default(), &NoClock, |_, seed| Ok((3.0, Some(seed)))).unwrap();
        assert_eq!(state.history().len(), 1);
        assert_eq!(state.best().unwrap().index, 0);
        assert_eq!(best, Some(state.history()[0].seed));
    }

    #[test]
    fn diverged_trial_never_best() {
        let (state, best) = run_search(12, 1, TpeConfig::default(), &NoClock, |_, seed| {
            if seed % 2 == 0 {
                Ok((f64::INFINITY, None))
            } else {
                Ok((0.5, Some(seed)))
            }
        })
        .unwrap();
        let b = state.best().unwrap();
        assert!(b.validation_mse.is_finite());
        assert_eq!(best, Some(b.seed));
    }

    #[test]
    fn tune_runs_end_to_end() {
        let mut rng = seeded(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..60 {
            let row: Vec<f64> = (0..3).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            y.push(0.05 * row[1]);
            x.extend(row);
        }
        let set = Dataset::new(3, x, y).unwrap();
        let (model, trials) = tune(&set, &set, 3, 5, TpeConfig::default(), &NoClock).unwrap();
        assert_eq!(trials.len(), 3);
        let best = trials.iter().map(|t| t.validation_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(model.best_validation_mse, best);
    }
}
