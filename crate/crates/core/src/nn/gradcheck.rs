//! Finite-difference gradient checking in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{loss_and_grad_with, Model, ParamId, ParamMap};
use crate::error::Result;
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub worst: Option<ParamId>,
}

/// Compares the analytic gradient of `model` with central differences on
/// `samples` coordinates (every parameter tensor at least once), using a
/// random batch and random non-zero biases.
pub fn check_gradients(
    model: &Model,
    batch_size: usize,
    samples: usize,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: ParamMap<f64> = model
        .params
        .iter()
        .map(|(id, t)| (*id, t.cast::<f64>()))
        .collect();
    for (id, t) in params.iter_mut() {
        if !id.is_weight() {
            t.data_mut()
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
    let mut shape = vec![batch_size];
    shape.extend_from_slice(&model.input_shape);
    let len: usize = shape.iter().product();
    let batch = Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let classes = model.num_classes();
    let labels: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..classes)).collect();
    let loss = |p: &ParamMap<f64>| -> Result<f64> {
        Ok(loss_and_grad_with(&model.layers, p, &model.input_shape, &batch, &labels)?.0)
    };

    let (_, grads) =
        loss_and_grad_with(&model.layers, &params, &model.input_shape, &batch, &labels)?;
    let ids: Vec<ParamId> = params.keys().copied().collect();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        coordinates: 0,
        worst: None,
    };
    for s in 0..samples.max(ids.len()) {
        let id = if s < ids.len() {
            ids[s]
        } else {
            ids[rng.gen_range(0..ids.len())]
        };
        let coord = rng.gen_range(0..params[&id].len());
        let orig = params[&id].data()[coord];
        params.get_mut(&id).expect("sampled id").data_mut()[coord] = orig + FD_STEP;
        let up = loss(&params)?;
        params.get_mut(&id).expect("sampled id").data_mut()[coord] = orig - FD_STEP;
        let down = loss(&params)?;
        params.get_mut(&id).expect("sampled id").data_mut()[coord] = orig;

        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads[&id].data()[coord];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(id);
        }
        report.coordinates += 1;
    }
    Ok(report)
}
