//! Mini-batch SGD, data splitting and accuracy evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use crate::datasets::DatasetSplit;
use crate::error::{Error, Result};
use crate::pruning::PruneMask;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// 1-based epoch from which the learning rate is multiplied by `lr_decay`.
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay: f32,
    pub val_split: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 128,
            learning_rate: 0.3,
            lr_decay_epoch: Some(9),
            lr_decay: 0.1,
            val_split: 0.3,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_split) {
            return Err(Error::InvalidConfig(format!(
                "val_split {} outside [0, 1)",
                self.val_split
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch index.
    pub fn learning_rate_at(&self, epoch: usize) -> f32 {
        match self.lr_decay_epoch {
            Some(start) if epoch + 1 >= start => self.learning_rate * self.lr_decay,
            _ => self.learning_rate,
        }
    }
}

/// Seeded disjoint split; `|val| = round(fraction * N)`. Both parts keep
/// ascending source order.
pub fn split_train_val(
    data: &DatasetSplit,
    fraction: f64,
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit)> {
    let (train_idx, val_idx) = split_indices(data.len(), fraction, seed)?;
    Ok((data.subset(&train_idx), data.subset(&val_idx)))
}

pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction {fraction} outside [0, 1)"
        )));
    }
    let n_val = (fraction * n as f64).round() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Percentage of examples whose argmax prediction (lowest index on ties)
/// matches the label.
pub fn evaluate_accuracy(model: &Model, data: &DatasetSplit) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.num_classes();
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let probs = model.forward(&data.images.rows(start, end))?;
        for (row, &label) in probs
            .data()
            .chunks_exact(classes)
            .zip(&data.labels[start..end])
        {
            if argmax(row) == label as usize {
                correct += 1;
            }
        }
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs SGD epochs over a fixed train/validation split.
pub struct Trainer {
    cfg: TrainConfig,
    train: DatasetSplit,
    val: DatasetSplit,
}

impl Trainer {
    pub fn new(data: &DatasetSplit, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, val) = split_train_val(data, cfg.val_split, cfg.seed)?;
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if cfg.batch_size > train.len() {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} exceeds {} training examples",
                cfg.batch_size,
                train.len()
            )));
        }
        Ok(Self { cfg, train, val })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn validation(&self) -> &DatasetSplit {
        &self.val
    }

    /// One pass over the training split in a per-epoch shuffled order.
    /// With a mask, masked weights are zeroed after every update.
    pub fn run_epoch(
        &self,
        model: &mut Model,
        epoch: usize,
        mask: Option<&PruneMask>,
    ) -> Result<f32> {
        let lr = self.cfg.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Tensor = self.train.images.gather_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| self.train.labels[i] as usize).collect();
            let (loss, grads) = model.loss_and_grad(&batch, &labels).map_err(|e| match e {
                Error::NonFiniteLoss(loss) => Error::Diverged {
                    epoch: epoch + 1,
                    batch: b,
                    loss,
                },
                other => other,
            })?;
            for (id, g) in &grads {
                let p = model.params.get_mut(id).expect("grad keys match params");
                for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= lr * d;
                }
            }
            if let Some(mask) = mask {
                mask.apply(&mut model.params);
            }
            loss_sum += loss as f64;
            batches += 1;
        }
        model.epochs += 1;
        Ok((loss_sum / batches as f64) as f32)
    }

    pub fn log_epoch(&self, model: &Model, epoch: usize, loss: f32) -> Result<()> {
        if !log::log_enabled!(log::Level::Info) {
            return Ok(());
        }
        if self.val.is_empty() {
            log::info!("epoch {:>2}: loss {loss:.4}", epoch + 1);
        } else {
            let acc = evaluate_accuracy(model, &self.val)?;
            log::info!("epoch {:>2}: loss {loss:.4}, val acc {acc:.2}%", epoch + 1);
        }
        Ok(())
    }
}

/// Trains `model` for `cfg.epochs` epochs. Bit-deterministic in
/// `(model, data, cfg)`.
pub fn train(
    model: &Model,
    data: &DatasetSplit,
    cfg: &TrainConfig,
    mask: Option<&PruneMask>,
) -> Result<Model> {
    let trainer = Trainer::new(data, cfg.clone())?;
    let mut model = model.clone();
    if let Some(mask) = mask {
        mask.check_matches(&model.params)?;
        mask.apply(&mut model.params);
    }
    for epoch in 0..cfg.epochs {
        let loss = trainer.run_epoch(&mut model, epoch, mask)?;
        trainer.log_epoch(&model, epoch, loss)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_disjointness() {
        let (train, val) = split_indices(60_000, 0.3, 1).unwrap();
        assert_eq!(val.len(), 18_000);
        assert_eq!(train.len(), 42_000);
        let mut all: Vec<_> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60_000).collect::<Vec<_>>());
        assert_eq!(split_indices(60_000, 0.3, 1).unwrap().1, val);
        assert_ne!(split_indices(60_000, 0.3, 2).unwrap().1, val);
    }

    #[test]
    fn zero_fraction_gives_empty_validation() {
        let (train, val) = split_indices(10, 0.0, 5).unwrap();
        assert!(val.is_empty());
        assert_eq!(train.len(), 10);
        assert!(split_indices(10, 1.0, 5).is_err());
    }

    #[test]
    fn config_rejects_zero_epochs() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn learning_rate_decays_from_ninth_epoch() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(7), 0.3);
        assert!((cfg.learning_rate_at(8) - 0.03).abs() < 1e-7);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.1; 10]), 0);
    }
}
