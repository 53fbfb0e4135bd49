use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Parameter name `"{layer}.weight"` / `"{layer}.bias"`.
///
/// Ordering is by layer index, then weight before bias, which is the
/// canonical iteration and serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    pub layer: usize,
    pub kind: ParamKind,
}

impl ParamId {
    pub fn weight(layer: usize) -> Self {
        Self {
            layer,
            kind: ParamKind::Weight,
        }
    }

    pub fn bias(layer: usize) -> Self {
        Self {
            layer,
            kind: ParamKind::Bias,
        }
    }

    pub fn is_weight(&self) -> bool {
        self.kind == ParamKind::Weight
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ParamKind::Weight => write!(f, "{}.weight", self.layer),
            ParamKind::Bias => write!(f, "{}.bias", self.layer),
        }
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::MissingParam(format!("malformed parameter name `{s}`"));
        let (layer, kind) = s.split_once('.').ok_or_else(bad)?;
        let layer = layer.parse().map_err(|_| bad())?;
        let kind = match kind {
            "weight" => ParamKind::Weight,
            "bias" => ParamKind::Bias,
            _ => return Err(bad()),
        };
        Ok(Self { layer, kind })
    }
}

pub type ParamMap<T = f32> = BTreeMap<ParamId, Tensor<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    /// Architecture id, e.g. `mnist-cnn`.
    pub arch: String,
    /// Per-example input shape `[H, W, C]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub params: ParamMap,
    pub seed: u64,
    /// Epochs of training this model has seen.
    pub epochs: usize,
}

impl Model {
    /// Builds a model with seeded Glorot-uniform weights and zero biases.
    pub fn new(
        arch: impl Into<String>,
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        seed: u64,
    ) -> Result<Self> {
        check_layers(&layers, &input_shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamMap::new();
        for (i, layer) in layers.iter().enumerate() {
            let (Some((wshape, bshape)), Some((fan_in, fan_out))) =
                (layer.param_shapes(), layer.fans())
            else {
                continue;
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let len: usize = wshape.iter().product();
            let w = (0..len).map(|_| rng.gen_range(-limit..=limit)).collect();
            params.insert(ParamId::weight(i), Tensor::new(wshape, w)?);
            params.insert(ParamId::bias(i), Tensor::zeros(bshape));
        }
        Ok(Self {
            arch: arch.into(),
            input_shape,
            layers,
            params,
            seed,
            epochs: 0,
        })
    }

    /// Replaces the parameter set, checking every required tensor is present
    /// with the right shape.
    pub fn with_params(mut self, params: ParamMap) -> Result<Self> {
        check_params(&self.layers, &params)?;
        self.params = params;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Dense { outputs, .. } => Some(*outputs),
                _ => None,
            })
            .unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Names of weight tensors (the pruning and quantization scope).
    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.params
            .keys()
            .copied()
            .filter(ParamId::is_weight)
            .collect()
    }

    /// Class probabilities for a batch `[N, H, W, C]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        forward_with(&self.layers, &self.params, &self.input_shape, batch)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &Tensor, labels: &[usize]) -> Result<(f32, ParamMap)> {
        loss_and_grad_with(&self.layers, &self.params, &self.input_shape, batch, labels)
    }
}

pub(crate) fn check_layers(layers: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<usize>> {
    let mut shape = input_shape.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        if *layer == LayerSpec::Softmax && i + 1 != layers.len() {
            return Err(Error::ShapeMismatch {
                layer: i,
                kind: "softmax",
                expected: "softmax as the final layer".into(),
                found: format!("{} more layer(s) after it", layers.len() - i - 1),
            });
        }
        shape = layer.output_shape(i, &shape)?;
    }
    if layers.last() != Some(&LayerSpec::Softmax) {
        return Err(Error::ShapeMismatch {
            layer: layers.len().saturating_sub(1),
            kind: layers.last().map_or("none", LayerSpec::kind),
            expected: "softmax as the final layer".into(),
            found: "no trailing softmax".into(),
        });
    }
    Ok(shape)
}

pub(crate) fn check_params<T: Scalar>(layers: &[LayerSpec], params: &ParamMap<T>) -> Result<()> {
    let mut expected = 0;
    for (i, layer) in layers.iter().enumerate() {
        let Some((wshape, bshape)) = layer.param_shapes() else {
            continue;
        };
        for (id, shape) in [(ParamId::weight(i), wshape), (ParamId::bias(i), bshape)] {
            let t = params
                .get(&id)
                .ok_or_else(|| Error::MissingParam(id.to_string()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    layer: i,
                    kind: layer.kind(),
                    expected: format!("{id} {shape:?}"),
                    found: format!("{:?}", t.shape()),
                });
            }
            expected += 1;
        }
    }
    if params.len() != expected {
        return Err(Error::MissingParam(format!(
            "{} unexpected parameter tensor(s)",
            params.len() - expected
        )));
    }
    Ok(())
}

/// Intermediate activations kept for the backward pass.
struct Trace<T> {
    /// `acts[i]` is the input of layer `i`; the last entry is the model output.
    acts: Vec<Tensor<T>>,
    pool_args: Vec<Option<Vec<u32>>>,
}

fn param<T>(params: &ParamMap<T>, id: ParamId) -> Result<&Tensor<T>> {
    params
        .get(&id)
        .ok_or_else(|| Error::MissingParam(id.to_string()))
}

fn check_batch<T: Scalar>(input_shape: &[usize], batch: &Tensor<T>) -> Result<()> {
    if batch.shape().len() != input_shape.len() + 1 || &batch.shape()[1..] != input_shape {
        return Err(Error::ShapeMismatch {
            layer: 0,
            kind: "input",
            expected: format!("[N, {input_shape:?}]"),
            found: format!("{:?}", batch.shape()),
        });
    }
    Ok(())
}

fn forward_trace<T: Scalar>(
    layers: &[LayerSpec],
    params: &ParamMap<T>,
    input_shape: &[usize],
    batch: &Tensor<T>,
    stop_before_softmax: bool,
) -> Result<Trace<T>> {
    check_batch(input_shape, batch)?;
    let mut acts = vec![batch.clone()];
    let mut pool_args = Vec::with_capacity(layers.len());
    let mut shape = input_shape.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        shape = layer.output_shape(i, &shape)?;
        let x = acts.last().expect("trace has input");
        let mut arg = None;
        let y = match layer {
            LayerSpec::Conv2d { .. } => layers::conv2d_forward(
                x,
                param(params, ParamId::weight(i))?,
                param(params, ParamId::bias(i))?,
            ),
            LayerSpec::Dense { .. } => layers::dense_forward(
                x,
                param(params, ParamId::weight(i))?,
                param(params, ParamId::bias(i))?,
            ),
            LayerSpec::MaxPool2x2 => {
                let (y, a) = layers::maxpool_forward(x);
                arg = Some(a);
                y
            }
            LayerSpec::Flatten => {
                let n = x.shape()[0];
                x.clone().reshape(vec![n, shape[0]])?
            }
            LayerSpec::Relu => layers::relu_forward(x),
            LayerSpec::Softmax => {
                if stop_before_softmax {
                    break;
                }
                layers::softmax_forward(x)
            }
        };
        pool_args.push(arg);
        acts.push(y);
    }
    Ok(Trace { acts, pool_args })
}

/// Forward pass over explicit layers and parameters, in any scalar type.
pub fn forward_with<T: Scalar>(
    layers: &[LayerSpec],
    params: &ParamMap<T>,
    input_shape: &[usize],
    batch: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut trace = forward_trace(layers, params, input_shape, batch, false)?;
    Ok(trace.acts.pop().expect("trace has output"))
}

/// Mean cross-entropy of the softmax output against `labels`, with gradients
/// for every parameter. Generic so it can be checked in double precision.
pub fn loss_and_grad_with<T: Scalar>(
    layers: &[LayerSpec],
    params: &ParamMap<T>,
    input_shape: &[usize],
    batch: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, ParamMap<T>)> {
    let trace = forward_trace(layers, params, input_shape, batch, true)?;
    let logits = trace.acts.last().expect("trace has logits");
    let (n, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            layer: layers.len() - 1,
            kind: "softmax",
            expected: format!("{n} labels"),
            found: format!("{} labels", labels.len()),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }

    // Softmax and cross-entropy fused: d loss / d logits = (p - onehot) / N.
    let inv_n = T::one() / T::of(n as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
        let lse = max + sum.ln();
        loss = loss + (lse - row[label]);
        for (c, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            let target = if c == label { T::one() } else { T::zero() };
            grad.push((p - target) * inv_n);
        }
    }
    let loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(loss.as_f64()));
    }

    let mut g = Tensor::new(logits.shape().to_vec(), grad)?;
    let mut grads = ParamMap::new();
    let last = layers.len() - 1;
    for i in (0..last).rev() {
        let x = &trace.acts[i];
        let need_input_grad = i > 0;
        g = match layers[i] {
            LayerSpec::Conv2d { .. } => {
                let w = param(params, ParamId::weight(i))?;
                let (din, dw, db) = layers::conv2d_backward(x, w, &g, need_input_grad);
                grads.insert(ParamId::weight(i), dw);
                grads.insert(ParamId::bias(i), db);
                match din {
                    Some(d) => d,
                    None => break,
                }
            }
            LayerSpec::Dense { .. } => {
                let w = param(params, ParamId::weight(i))?;
                let (din, dw, db) = layers::dense_backward(x, w, &g, need_input_grad);
                grads.insert(ParamId::weight(i), dw);
                grads.insert(ParamId::bias(i), db);
                match din {
                    Some(d) => d,
                    None => break,
                }
            }
            LayerSpec::MaxPool2x2 => {
                let arg = trace.pool_args[i].as_ref().expect("pool trace");
                layers::maxpool_backward(x.shape(), arg, &g)
            }
            LayerSpec::Flatten => g.reshape(x.shape().to_vec())?,
            LayerSpec::Relu => layers::relu_backward(x, &g),
            LayerSpec::Softmax => unreachable!("softmax is validated to be last"),
        };
    }
    Ok((loss, grads))
}
