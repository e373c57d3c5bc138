use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{default_dims, Mlp, MlpModel, Normalizer, Scratch, TrainingSample};
use crate::error::{Error, Result};
use crate::geometry::RangingMode;

/// Mini-batch gradient descent settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Samples with |target| above this are dropped before training, meters.
    pub xi_threshold: f64,
    /// Fraction of the filtered set used for training; the rest validates.
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 64,
            epochs: 300,
            xi_threshold: 0.7,
            split_fraction: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("train: learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("train: batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("train: epochs must be >= 1".into()));
        }
        if !(self.xi_threshold > 0.0) {
            return Err(Error::InvalidConfig("train: xi_threshold must be > 0".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidConfig("train: split_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean of the mini-batch losses seen during the epoch.
    pub train_loss: f64,
    /// MSE on the validation split after the epoch.
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLoss>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochLoss> {
        self.epochs.get(self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        s
    }
}

/// Keeps samples with |target| <= xi, in order.
pub fn filter_training_set(samples: &[TrainingSample], xi: f64) -> Vec<TrainingSample> {
    samples.iter().filter(|s| s.target_bias.abs() <= xi).cloned().collect()
}

/// Dense row-major copy of a sample set.
struct Table {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Table {
    fn row(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }

    fn len(&self) -> usize {
        self.y.len()
    }
}

fn mse(model: &MlpModel, table: &Table) -> f64 {
    let net = model.net();
    let mut z = vec![0.0; table.dim];
    let mut sum = 0.0;
    for k in 0..table.len() {
        model.normalize(table.row(k), &mut z);
        let e = net.predict(&z) - table.y[k];
        sum += e * e;
    }
    sum / table.len() as f64
}

/// Trains a bias estimator: Xi filter, seeded shuffle and split, normalizer
/// fit on the training split, then plain mini-batch gradient descent. The
/// returned model carries the weights of the best validation epoch.
pub fn train(samples: &[TrainingSample], config: &TrainConfig) -> Result<(MlpModel, TrainHistory)> {
    config.validate()?;
    let filtered = filter_training_set(samples, config.xi_threshold);
    let needed = 10 * config.batch_size;
    if filtered.len() < needed {
        return Err(Error::TooFewSamples {
            needed,
            available: filtered.len(),
        });
    }
    let mode: RangingMode = filtered[0].feature.mode();
    if let Some(bad) = filtered.iter().find(|s| s.feature.mode() != mode) {
        return Err(Error::ModeMismatch {
            expected: mode,
            found: bad.feature.mode(),
        });
    }
    let dim = mode.feature_len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..filtered.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((filtered.len() as f64 * config.split_fraction).round() as usize).clamp(1, filtered.len() - 1);

    let table = |idx: &[usize]| Table {
        dim,
        x: idx
            .iter()
            .flat_map(|&k| filtered[k].feature.values().iter().copied())
            .collect(),
        y: idx.iter().map(|&k| filtered[k].target_bias).collect(),
    };
    let train_set = table(&order[..n_train]);
    let val_set = table(&order[n_train..]);

    let normalizer = Normalizer::fit((0..train_set.len()).map(|k| train_set.row(k)), dim);
    let net = Mlp::he_uniform(&default_dims(mode), &mut rng)?;
    let mut model = MlpModel::new(mode, normalizer, net)?;

    // Normalize once; the normalizer is frozen during training.
    let mut train_z = vec![0.0; train_set.x.len()];
    for k in 0..train_set.len() {
        model.normalize(train_set.row(k), &mut train_z[k * dim..(k + 1) * dim]);
    }

    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, model.net().clone());
    let mut scratch = Scratch::new(model.net());
    let mut grad = vec![0.0; model.net().num_params()];
    let mut idx: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.epochs {
        idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in idx.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &k in chunk {
                let z = &train_z[k * dim..(k + 1) * dim];
                loss += model.accumulate(z, train_set.y[k], scale, &mut grad, &mut scratch);
            }
            let loss = loss * scale;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            for (p, g) in model.net_mut().params_mut().iter_mut().zip(&grad) {
                *p -= config.learning_rate * g;
            }
            loss_sum += loss;
            batches += 1;
        }
        if !model.net().is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let val_loss = mse(&model, &val_set);
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.epochs.push(EpochLoss {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, model.net().clone());
            history.best_epoch = epoch;
        }
    }

    *model.net_mut() = best.1;
    Ok((model, history))
}
