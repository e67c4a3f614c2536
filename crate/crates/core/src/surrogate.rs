//! Forward strength model trained on complete, clean mix designs.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NormStats, N_DESIGN, STRENGTH};
use crate::error::{Error, Result};
use crate::nn::{backward, AdamState, Batch, LossKind, MlpParams};
use crate::rng::{self, stream};
use crate::training::{holdout, minibatches, EarlyStopping, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub hidden: Vec<usize>,
    pub training: TrainingConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            hidden: vec![64, 64],
            training: TrainingConfig::default(),
        }
    }
}

/// `8 -> hidden -> 1` network over normalized designs; outputs normalized
/// strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub net: MlpParams,
    pub norm: NormStats,
    pub config: SurrogateConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
}

/// Mean squared strength residual, `(1/N) Σ (y - ŷ)²`.
pub fn regression_loss(y: ArrayView1<f64>, y_hat: ArrayView1<f64>) -> f64 {
    let n = y.len() as f64;
    y.iter().zip(y_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

pub fn train_surrogate(
    train: &Dataset,
    norm: &NormStats,
    config: &SurrogateConfig,
    seed: u64,
) -> Result<(SurrogateModel, Vec<SurrogateEpoch>)> {
    if train.is_empty() {
        return Err(Error::Contract("surrogate needs training rows".into()));
    }
    config.training.validate("surrogate_")?;
    let data = norm.normalize_dataset(train);
    let x = data.slice(s![.., ..N_DESIGN]).to_owned();
    let y = data.slice(s![.., STRENGTH..STRENGTH + 1]).to_owned();

    let mut sizes = vec![N_DESIGN];
    sizes.extend(&config.hidden);
    sizes.push(1);
    let mut net = MlpParams::init(&sizes, seed)?;
    let mut adam = AdamState::new(&net, config.training.adam);

    let (fit_idx, val_idx) = holdout(
        train.len(),
        config.training.validation_fraction,
        &mut rng::derived_rng(seed, &[stream::VALIDATION]),
    );
    let x_val = x.select(Axis(0), &val_idx);
    let y_val = y.select(Axis(0), &val_idx);
    let mut shuffle = rng::derived_rng(seed, &[stream::SHUFFLE]);
    let mut stopper = EarlyStopping::new(config.training.patience);
    let mut log = Vec::new();

    for epoch in 1..=config.training.max_epochs {
        let mut total = 0.0;
        for b in minibatches(&fit_idx, config.training.batch_size, &mut shuffle) {
            let batch = Batch::new(x.select(Axis(0), &b), y.select(Axis(0), &b))?;
            let (loss, grads) = backward(&net, &batch, LossKind::Mse).map_err(|e| Error::Training {
                epoch,
                message: e.to_string(),
            })?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "non-finite surrogate loss".into(),
                });
            }
            total += loss * b.len() as f64;
            adam.step(&mut net, &grads).map_err(|e| Error::Training {
                epoch,
                message: e.to_string(),
            })?;
        }
        let train_loss = total / fit_idx.len() as f64;
        let val_pred = net.forward(x_val.view())?;
        let val_loss = regression_loss(y_val.column(0), val_pred.column(0));
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "non-finite validation loss".into(),
            });
        }
        let stop = stopper.observe(val_loss, &net);
        log.push(SurrogateEpoch {
            epoch,
            train_loss,
            val_loss,
            best_val_loss: stopper.best_value(),
        });
        if stop {
            break;
        }
    }
    let (_, best) = stopper.best.expect("at least one epoch ran");
    Ok((
        SurrogateModel {
            net: best,
            norm: norm.clone(),
            config: config.clone(),
            seed,
        },
        log,
    ))
}

impl SurrogateModel {
    /// Predicted normalized strength for each row of an `n x 8` normalized
    /// design matrix.
    pub fn predict_strength(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != N_DESIGN {
            return Err(Error::Contract(format!(
                "surrogate expects {N_DESIGN} design columns, got {}",
                x.ncols()
            )));
        }
        Ok(self.net.forward(x)?.column(0).to_owned())
    }

    /// Predicted strength in MPa for one raw-unit design.
    pub fn predict_mpa(&self, design_norm: &[f64; N_DESIGN]) -> Result<f64> {
        let x = Array2::from_shape_vec((1, N_DESIGN), design_norm.to_vec()).expect("shape");
        let v = self.predict_strength(x.view())?[0];
        Ok(self.norm.denormalize_value(STRENGTH, v))
    }

    /// Regression loss on a normalized `n x 9` matrix (designs plus strength).
    pub fn loss_on(&self, data: ArrayView2<f64>) -> Result<f64> {
        let pred = self.predict_strength(data.slice(s![.., ..N_DESIGN]))?;
        Ok(regression_loss(data.column(STRENGTH), pred.view()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fit_normalizer, MixDesign};
    use rand::Rng as _;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut r = rng::rng_from_seed(seed);
        let rows = (0..n)
            .map(|_| {
                let mut v = [0.0; 9];
                for x in v.iter_mut().take(8) {
                    *x = r.random_range(0.0..100.0);
                }
                v[7] = r.random_range(1.0..28.0);
                v[8] = 0.3 * v[0] + 0.1 * v[1] + r.random_range(0.0..5.0);
                MixDesign::from_values(v)
            })
            .collect();
        Dataset::new(rows, "toy").unwrap()
    }

    fn quick_config(epochs: usize) -> SurrogateConfig {
        SurrogateConfig {
            hidden: vec![16, 16],
            training: TrainingConfig {
                max_epochs: epochs,
                patience: 0,
                adam: crate::nn::AdamConfig {
                    lr: 1e-2,
                    ..Default::default()
                },
                ..Default::default()
            },
        }
    }

    #[test]
    fn memorises_five_rows() {
        let ds = toy(5, 1);
        let norm = fit_normalizer(&ds).unwrap();
        let (m, log) = train_surrogate(&ds, &norm, &quick_config(1500), 3).unwrap();
        let data = norm.normalize_dataset(&ds);
        let mse = m.loss_on(data.view()).unwrap();
        assert!(mse < 1e-4, "mse {mse}");
        let pred = m.predict_strength(data.slice(s![.., ..8])).unwrap();
        for (p, t) in pred.iter().zip(data.column(8)) {
            assert!((p - t).abs() < 1e-2);
        }
        assert!(log.windows(2).all(|w| w[1].best_val_loss <= w[0].best_val_loss));
    }

    #[test]
    fn eq1_loss_matches_brute_force() {
        let ds = toy(30, 2);
        let norm = fit_normalizer(&ds).unwrap();
        let (m, _) = train_surrogate(&ds, &norm, &quick_config(5), 0).unwrap();
        let data = norm.normalize_dataset(&ds);
        let mut brute = 0.0;
        for i in 0..data.nrows() {
            let row: Vec<f64> = data.row(i).iter().take(8).copied().collect();
            let mut a = row;
            for l in &m.net.layers {
                a = (0..l.outputs())
                    .map(|o| {
                        let s: f64 = l.bias[o] + (0..l.inputs()).map(|k| l.weight[[o, k]] * a[k]).sum::<f64>();
                        if l.activation == crate::nn::Activation::Relu { s.max(0.0) } else { s }
                    })
                    .collect();
            }
            brute += (data[[i, 8]] - a[0]).powi(2);
        }
        brute /= data.nrows() as f64;
        assert!((m.loss_on(data.view()).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn batch_equals_rowwise_and_duplicates() {
        let ds = toy(20, 4);
        let norm = fit_normalizer(&ds).unwrap();
        let (m, _) = train_surrogate(&ds, &norm, &quick_config(3), 1).unwrap();
        let x = norm.normalize_dataset(&ds).slice(s![.., ..8]).to_owned();
        let batch = m.predict_strength(x.view()).unwrap();
        for i in 0..x.nrows() {
            let one = m.predict_strength(x.slice(s![i..i + 1, ..])).unwrap();
            assert!((one[0] - batch[i]).abs() < 1e-12);
        }
        let dup = ndarray::concatenate(Axis(0), &[x.slice(s![0..1, ..]), x.slice(s![0..1, ..])]).unwrap();
        let p = m.predict_strength(dup.view()).unwrap();
        assert_eq!(p[0], p[1]);
        assert!(m.predict_strength(Array2::zeros((2, 7)).view()).is_err());
    }

    #[test]
    fn retraining_is_reproducible() {
        let ds = toy(40, 5);
        let norm = fit_normalizer(&ds).unwrap();
        let a = train_surrogate(&ds, &norm, &quick_config(10), 9).unwrap().0;
        let b = train_surrogate(&ds, &norm, &quick_config(10), 9).unwrap().0;
        assert_eq!(a.net, b.net);
    }
}
