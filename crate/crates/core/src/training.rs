//! Pieces shared by the surrogate and imputer training loops.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 500,
            patience: 50,
            validation_fraction: 0.1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |f: &str| format!("{prefix}{f}");
        if self.batch_size == 0 {
            return Err(Error::config(field("batch_size"), "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config(field("epochs"), "must be positive"));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::config("adam_beta", "betas must lie in [0, 1)"));
        }
        if !(self.adam.eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Splits `0..n` into (fit, validation) indices. With too few rows for a
/// holdout, validation falls back to the fitting rows.
pub(crate) fn holdout(n: usize, fraction: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = (fraction * n as f64).floor() as usize;
    if n_val == 0 || n_val >= n {
        return (idx.clone(), idx);
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Shuffled minibatches covering `indices` once. A trailing batch of one row
/// is folded into the previous batch so every batch has at least two rows
/// whenever the data allows it.
pub(crate) fn minibatches(indices: &[usize], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx = indices.to_vec();
    idx.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Best-so-far tracking with patience.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStopping<T> {
    patience: usize,
    pub best: Option<(f64, T)>,
    since_best: usize,
}

impl<T: Clone> EarlyStopping<T> {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Returns `true` when training should stop.
    pub fn observe(&mut self, value: f64, candidate: &T) -> bool {
        let improved = self.best.as_ref().map_or(true, |(b, _)| value < *b);
        if improved {
            self.best = Some((value, candidate.clone()));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.patience > 0 && self.since_best >= self.patience
    }

    pub fn best_value(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |(b, _)| *b)
    }
}
