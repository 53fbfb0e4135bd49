//! Magnitude pruning with per-tensor thresholds and a cubic sparsity ramp.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::datasets::DatasetSplit;
use crate::error::{Error, Result};
use crate::nn::{Model, ParamId, ParamMap, TrainConfig, Trainer};
use crate::tensor::Tensor;

/// Initial sparsity of the gradual pruning ramp.
pub const INITIAL_SPARSITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMask {
    pub shape: Vec<usize>,
    /// `true` keeps the weight.
    pub keep: Vec<bool>,
}

impl TensorMask {
    pub fn pruned(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    pub fn apply(&self, weights: &mut Tensor) {
        for (w, &k) in weights.data_mut().iter_mut().zip(&self.keep) {
            if !k {
                *w = 0.0;
            }
        }
    }
}

fn check_sparsity(sparsity: f64) -> Result<()> {
    if (0.0..1.0).contains(&sparsity) {
        Ok(())
    } else {
        Err(Error::BadSparsity(sparsity))
    }
}

/// Number of weights removed at `sparsity` out of `len`.
pub fn pruned_count(sparsity: f64, len: usize) -> usize {
    (sparsity * len as f64).floor() as usize
}

/// Keeps all but the `floor(sparsity * M)` smallest-magnitude weights.
/// Equal magnitudes are removed in ascending flat-index order.
pub fn magnitude_threshold(weights: &Tensor, sparsity: f64) -> Result<TensorMask> {
    check_sparsity(sparsity)?;
    let data = weights.data();
    let k = pruned_count(sparsity, data.len());
    let mut keep = vec![true; data.len()];
    if k > 0 {
        let order = |&a: &usize, &b: &usize| -> Ordering {
            data[a].abs().total_cmp(&data[b].abs()).then(a.cmp(&b))
        };
        let mut idx: Vec<usize> = (0..data.len()).collect();
        if k < idx.len() {
            idx.select_nth_unstable_by(k, order);
        }
        for &i in &idx[..k] {
            keep[i] = false;
        }
    }
    Ok(TensorMask {
        shape: weights.shape().to_vec(),
        keep,
    })
}

/// Per-parameter masks over the weight tensors of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    pub masks: BTreeMap<ParamId, TensorMask>,
    pub target_sparsity: f64,
}

impl PruneMask {
    /// Thresholds every weight tensor of `params` independently.
    pub fn from_magnitudes(params: &ParamMap, sparsity: f64) -> Result<Self> {
        check_sparsity(sparsity)?;
        let masks = params
            .iter()
            .filter(|(id, _)| id.is_weight())
            .map(|(id, t)| Ok((*id, magnitude_threshold(t, sparsity)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            masks,
            target_sparsity: sparsity,
        })
    }

    pub fn apply(&self, params: &mut ParamMap) {
        for (id, mask) in &self.masks {
            if let Some(t) = params.get_mut(id) {
                mask.apply(t);
            }
        }
    }

    pub fn check_matches(&self, params: &ParamMap) -> Result<()> {
        for (id, mask) in &self.masks {
            let t = params
                .get(id)
                .ok_or_else(|| Error::MissingParam(id.to_string()))?;
            if t.shape() != mask.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    layer: id.layer,
                    kind: "mask",
                    expected: format!("{:?}", mask.shape),
                    found: format!("{:?}", t.shape()),
                });
            }
        }
        Ok(())
    }

    /// Fraction of masked-out entries over all masked tensors.
    pub fn achieved_sparsity(&self) -> f64 {
        let (pruned, total) = self
            .masks
            .values()
            .fold((0, 0), |(p, t), m| (p + m.pruned(), t + m.keep.len()));
        if total == 0 {
            0.0
        } else {
            pruned as f64 / total as f64
        }
    }
}

/// Cubic ramp `s(t) = s_f + (s_i - s_f)(1 - t/T)^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsitySchedule {
    pub initial: f64,
    pub target: f64,
    pub total_steps: usize,
}

impl SparsitySchedule {
    pub fn new(initial: f64, target: f64, total_steps: usize) -> Result<Self> {
        check_sparsity(initial)?;
        check_sparsity(target)?;
        if initial > target {
            return Err(Error::InvalidConfig(format!(
                "initial sparsity {initial} exceeds target {target}"
            )));
        }
        Ok(Self {
            initial,
            target,
            total_steps,
        })
    }

    pub fn at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::InvalidConfig(format!(
                "step {step} beyond schedule length {}",
                self.total_steps
            )));
        }
        if self.total_steps == 0 {
            return Ok(self.target);
        }
        let remaining = 1.0 - step as f64 / self.total_steps as f64;
        Ok(self.target + (self.initial - self.target) * remaining.powi(3))
    }
}

/// Gradually prunes a trained model to `target` sparsity while fine-tuning.
///
/// The mask is recomputed at the start of each epoch from the current
/// weights; the first epoch prunes to `min(0.5, target)` and the last runs
/// entirely at `target`.
pub fn prune_and_finetune(
    model: &Model,
    data: &DatasetSplit,
    cfg: &TrainConfig,
    target: f64,
) -> Result<(Model, PruneMask)> {
    check_sparsity(target)?;
    let trainer = Trainer::new(data, cfg.clone())?;
    let schedule = SparsitySchedule::new(INITIAL_SPARSITY.min(target), target, cfg.epochs - 1)?;
    let mut model = model.clone();
    let mut mask = PruneMask::from_magnitudes(&model.params, 0.0)?;
    for epoch in 0..cfg.epochs {
        let sparsity = schedule.at(epoch)?;
        mask = PruneMask::from_magnitudes(&model.params, sparsity)?;
        mask.target_sparsity = target;
        mask.apply(&mut model.params);
        let loss = trainer.run_epoch(&mut model, epoch, Some(&mask))?;
        log::debug!("prune epoch {}: sparsity {sparsity:.4}", epoch + 1);
        trainer.log_epoch(&model, epoch, loss)?;
    }
    Ok((model, mask))
}

/// Fraction of exactly-zero entries across the `scope` tensors.
pub fn measure_sparsity(params: &ParamMap, scope: &[ParamId]) -> Result<f64> {
    if scope.is_empty() {
        return Err(Error::InvalidConfig("sparsity scope is empty".into()));
    }
    let mut zeros = 0usize;
    let mut total = 0usize;
    for id in scope {
        let t = params
            .get(id)
            .ok_or_else(|| Error::MissingParam(id.to_string()))?;
        zeros += t.data().iter().filter(|&&v| v == 0.0).count();
        total += t.len();
    }
    if total == 0 {
        return Err(Error::InvalidConfig("sparsity scope has no entries".into()));
    }
    Ok(zeros as f64 / total as f64)
}

/// Sparsity over all weight tensors of a model.
pub fn model_sparsity(model: &Model) -> Result<f64> {
    measure_sparsity(&model.params, &model.weight_ids())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn zero_sparsity_keeps_everything() {
        let m = magnitude_threshold(&t(&[0.0, 1.0, -2.0]), 0.0).unwrap();
        assert!(m.keep.iter().all(|&k| k));
    }

    #[test]
    fn prunes_smallest_magnitudes() {
        let m = magnitude_threshold(&t(&[0.1, -0.5, 0.3, 0.05]), 0.5).unwrap();
        assert_eq!(m.keep, vec![false, true, true, false]);
    }

    #[test]
    fn ties_fall_in_index_order() {
        let m = magnitude_threshold(&t(&[1.0, -1.0, 1.0, 1.0]), 0.5).unwrap();
        assert_eq!(m.keep, vec![false, false, true, true]);
    }

    #[test]
    fn rejects_out_of_range_sparsity() {
        assert!(magnitude_threshold(&t(&[1.0]), 1.0).is_err());
        assert!(magnitude_threshold(&t(&[1.0]), -0.1).is_err());
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = SparsitySchedule::new(0.5, 0.9, 10).unwrap();
        assert_eq!(s.at(0).unwrap(), 0.5);
        assert!((s.at(10).unwrap() - 0.9).abs() < 1e-12);
        assert!((s.at(5).unwrap() - 0.85).abs() < 1e-12);
        assert!(s.at(11).is_err());
        let mut prev = 0.0;
        for step in 0..=10 {
            let v = s.at(step).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn measure_counts_exact_zeros() {
        let mut params = ParamMap::new();
        params.insert(ParamId::weight(0), t(&[0.0; 4]));
        params.insert(ParamId::weight(1), t(&[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(
            measure_sparsity(&params, &[ParamId::weight(0)]).unwrap(),
            1.0
        );
        assert_eq!(
            measure_sparsity(&params, &[ParamId::weight(1)]).unwrap(),
            0.0
        );
        let both = [ParamId::weight(0), ParamId::weight(1)];
        assert_eq!(measure_sparsity(&params, &both).unwrap(), 0.5);
        assert!(measure_sparsity(&params, &[]).is_err());
    }

    #[test]
    fn mask_application_is_idempotent() {
        let mut params = ParamMap::new();
        params.insert(ParamId::weight(0), t(&[0.3, -0.1, 0.7, 0.2]));
        params.insert(ParamId::bias(0), t(&[0.01]));
        let mask = PruneMask::from_magnitudes(&params, 0.5).unwrap();
        let mut once = params.clone();
        mask.apply(&mut once);
        let mut twice = once.clone();
        mask.apply(&mut twice);
        assert_eq!(once, twice);
        assert_eq!(once[&ParamId::weight(0)].data(), &[0.3, 0.0, 0.7, 0.0]);
        // Biases are never pruned.
        assert_eq!(once[&ParamId::bias(0)].data(), &[0.01]);
    }
}
