//! Layer descriptions and their forward/backward kernels.
//!
//! Activations are laid out NHWC. Convolution kernels are stored
//! `[k, k, in_channels, out_channels]` and dense weights `[inputs, outputs]`
//! so the innermost loops always run over contiguous output channels.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Valid (unpadded) stride-1 convolution with bias.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    /// 2×2 max pooling with stride 2; odd trailing rows/cols are dropped.
    MaxPool2x2,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2x2 => "maxpool2x2",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// `(weight shape, bias shape)` for trainable layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                vec![kernel, kernel, in_channels, out_channels],
                vec![out_channels],
            )),
            LayerSpec::Dense { inputs, outputs } => Some((vec![inputs, outputs], vec![outputs])),
            _ => None,
        }
    }

    /// `(fan_in, fan_out)` used by the uniform initializer.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                kernel * kernel * in_channels,
                kernel * kernel * out_channels,
            )),
            LayerSpec::Dense { inputs, outputs } => Some((inputs, outputs)),
            _ => None,
        }
    }

    /// Per-example output shape for a per-example input shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: String| Error::ShapeMismatch {
            layer: index,
            kind: self.kind(),
            expected,
            found: format!("{input:?}"),
        };
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => match *input {
                [h, w, c] if c == in_channels && h >= kernel && w >= kernel => {
                    Ok(vec![h - kernel + 1, w - kernel + 1, out_channels])
                }
                _ => Err(mismatch(format!(
                    "[H>={kernel}, W>={kernel}, {in_channels}]"
                ))),
            },
            LayerSpec::MaxPool2x2 => match *input {
                [h, w, c] if h >= 2 && w >= 2 => Ok(vec![h / 2, w / 2, c]),
                _ => Err(mismatch("[H>=2, W>=2, C]".into())),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { inputs, outputs } => match *input {
                [n] if n == inputs => Ok(vec![outputs]),
                _ => Err(mismatch(format!("[{inputs}]"))),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Softmax => match *input {
                [n] if n > 0 => Ok(vec![n]),
                _ => Err(mismatch("[classes]".into())),
            },
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => write!(f, "conv2d {kernel}x{kernel} {in_channels}->{out_channels}"),
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense {inputs}->{outputs}"),
            other => f.write_str(other.kind()),
        }
    }
}

/// Batched NHWC convolution.
pub(crate) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Tensor<T> {
    let (n, h, w, c) = nhwc(input.shape());
    let k = weight.shape()[0];
    let o = weight.shape()[3];
    let (oh, ow) = (h - k + 1, w - k + 1);
    let inp = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = vec![T::zero(); n * oh * ow * o];
    for (pix, acc) in out.chunks_exact_mut(o).enumerate() {
        let x = pix % ow;
        let y = (pix / ow) % oh;
        let img = pix / (ow * oh);
        acc.copy_from_slice(b);
        for ky in 0..k {
            for kx in 0..k {
                let ibase = ((img * h + y + ky) * w + x + kx) * c;
                let wbase = (ky * k + kx) * c * o;
                for ci in 0..c {
                    let v = inp[ibase + ci];
                    let row = &wt[wbase + ci * o..wbase + (ci + 1) * o];
                    for (a, &wv) in acc.iter_mut().zip(row) {
                        *a = *a + v * wv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow, o], out).expect("conv output shape")
}

/// Returns `(d_input, d_weight, d_bias)`; `d_input` is skipped when not needed.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, h, w, c) = nhwc(input.shape());
    let k = weight.shape()[0];
    let o = weight.shape()[3];
    let (oh, ow) = (h - k + 1, w - k + 1);
    let inp = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let mut dw = vec![T::zero(); wt.len()];
    let mut db = vec![T::zero(); o];
    let mut din = if need_input_grad {
        vec![T::zero(); inp.len()]
    } else {
        Vec::new()
    };
    for (pix, gout) in g.chunks_exact(o).enumerate() {
        let x = pix % ow;
        let y = (pix / ow) % oh;
        let img = pix / (ow * oh);
        for (d, &gv) in db.iter_mut().zip(gout) {
            *d = *d + gv;
        }
        for ky in 0..k {
            for kx in 0..k {
                let ibase = ((img * h + y + ky) * w + x + kx) * c;
                let wbase = (ky * k + kx) * c * o;
                for ci in 0..c {
                    let v = inp[ibase + ci];
                    let range = wbase + ci * o..wbase + (ci + 1) * o;
                    for (d, &gv) in dw[range.clone()].iter_mut().zip(gout) {
                        *d = *d + v * gv;
                    }
                    if need_input_grad {
                        let mut s = T::zero();
                        for (&wv, &gv) in wt[range].iter().zip(gout) {
                            s = s + wv * gv;
                        }
                        din[ibase + ci] = din[ibase + ci] + s;
                    }
                }
            }
        }
    }
    let din = need_input_grad.then(|| Tensor::new(vec![n, h, w, c], din).expect("conv din"));
    (
        din,
        Tensor::new(weight.shape().to_vec(), dw).expect("conv dw"),
        Tensor::new(vec![o], db).expect("conv db"),
    )
}

/// Returns the pooled tensor and, per output element, the flat input index
/// of the selected maximum (first in scan order on ties).
pub(crate) fn maxpool_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (n, h, w, c) = nhwc(input.shape());
    let (oh, ow) = (h / 2, w / 2);
    let inp = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for img in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                for ci in 0..c {
                    let mut best = usize::MAX;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = ((img * h + 2 * y + dy) * w + 2 * x + dx) * c + ci;
                        if best == usize::MAX || inp[idx] > inp[best] {
                            best = idx;
                        }
                    }
                    out.push(inp[best]);
                    arg.push(best as u32);
                }
            }
        }
    }
    (
        Tensor::new(vec![n, oh, ow, c], out).expect("pool output shape"),
        arg,
    )
}

pub(crate) fn maxpool_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut din = Tensor::zeros(input_shape.to_vec());
    let d = din.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i as usize] = d[i as usize] + g;
    }
    din
}

pub(crate) fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Tensor<T> {
    let n = input.shape()[0];
    let (i_dim, o_dim) = (weight.shape()[0], weight.shape()[1]);
    let wt = weight.data();
    let mut out = Vec::with_capacity(n * o_dim);
    for row in input.data().chunks_exact(i_dim) {
        let start = out.len();
        out.extend_from_slice(bias.data());
        let acc = &mut out[start..];
        for (i, &v) in row.iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(&wt[i * o_dim..(i + 1) * o_dim]) {
                *a = *a + v * wv;
            }
        }
    }
    Tensor::new(vec![n, o_dim], out).expect("dense output shape")
}

pub(crate) fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let n = input.shape()[0];
    let (i_dim, o_dim) = (weight.shape()[0], weight.shape()[1]);
    let wt = weight.data();
    let mut dw = vec![T::zero(); wt.len()];
    let mut db = vec![T::zero(); o_dim];
    let mut din = if need_input_grad {
        vec![T::zero(); n * i_dim]
    } else {
        Vec::new()
    };
    for (s, (row, g)) in input
        .data()
        .chunks_exact(i_dim)
        .zip(grad_out.data().chunks_exact(o_dim))
        .enumerate()
    {
        for (d, &gv) in db.iter_mut().zip(g) {
            *d = *d + gv;
        }
        for (i, &v) in row.iter().enumerate() {
            let range = i * o_dim..(i + 1) * o_dim;
            for (d, &gv) in dw[range.clone()].iter_mut().zip(g) {
                *d = *d + v * gv;
            }
            if need_input_grad {
                let mut acc = T::zero();
                for (&wv, &gv) in wt[range].iter().zip(g) {
                    acc = acc + wv * gv;
                }
                din[s * i_dim + i] = acc;
            }
        }
    }
    let din = need_input_grad.then(|| Tensor::new(vec![n, i_dim], din).expect("dense din"));
    (
        din,
        Tensor::new(weight.shape().to_vec(), dw).expect("dense dw"),
        Tensor::new(vec![o_dim], db).expect("dense db"),
    )
}

pub(crate) fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::new(input.shape().to_vec(), data).expect("relu shape")
}

pub(crate) fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("relu shape")
}

/// Row-wise softmax over `[N, classes]`.
pub(crate) fn softmax_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let classes = input.shape()[1];
    let mut out = Vec::with_capacity(input.len());
    for row in input.data().chunks_exact(classes) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let start = out.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (v - max).exp();
            sum = sum + e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p = *p / sum;
        }
    }
    Tensor::new(input.shape().to_vec(), out).expect("softmax shape")
}

fn nhwc(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_all_ones_kernel_sums_window() {
        let input = Tensor::new(vec![1, 3, 3, 1], vec![1.0f32; 9]).unwrap();
        let weight = Tensor::new(vec![2, 2, 1, 1], vec![1.0f32; 4]).unwrap();
        let bias = Tensor::zeros(vec![1]);
        let out = conv2d_forward(&input, &weight, &bias);
        assert_eq!(out.shape(), &[1, 2, 2, 1]);
        assert_eq!(out.data(), &[4.0; 4]);
    }

    #[test]
    fn dense_identity_passes_input_through() {
        let input = Tensor::new(vec![1, 3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let mut eye = vec![0.0f32; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let weight = Tensor::new(vec![3, 3], eye).unwrap();
        let out = dense_forward(&input, &weight, &Tensor::zeros(vec![3]));
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn maxpool_picks_first_maximum_and_routes_gradient() {
        let input = Tensor::new(vec![1, 2, 2, 1], vec![3.0f32, 3.0, 1.0, 2.0]).unwrap();
        let (out, arg) = maxpool_forward(&input);
        assert_eq!(out.data(), &[3.0]);
        assert_eq!(arg, vec![0]);
        let g = Tensor::new(vec![1, 1, 1, 1], vec![5.0f32]).unwrap();
        let din = maxpool_backward(input.shape(), &arg, &g);
        assert_eq!(din.data(), &[5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_drops_odd_edge() {
        let spec = LayerSpec::MaxPool2x2;
        assert_eq!(spec.output_shape(0, &[13, 13, 4]).unwrap(), vec![6, 6, 4]);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let input = Tensor::new(vec![2, 3], vec![1000.0f32, 0.0, -1000.0, 0.1, 0.2, 0.3]).unwrap();
        let out = softmax_forward(&input);
        for row in out.data().chunks(3) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let spec = LayerSpec::Dense {
            inputs: 4,
            outputs: 2,
        };
        let err = spec.output_shape(3, &[5]).unwrap_err().to_string();
        assert!(err.contains("layer 3"), "{err}");
        assert!(err.contains("dense"), "{err}");
    }
}
