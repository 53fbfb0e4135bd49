//! Post-training weight quantization.
//!
//! 8-bit uses a per-tensor affine map `w ≈ scale * (q - zero_point)`, either
//! symmetric (`q ∈ [-127, 127]`, zero point 0) or asymmetric
//! (`q ∈ [0, 255]`). 16-bit is IEEE binary16. Biases always stay `f32`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use half::f16;

use crate::error::{Error, Result};
use crate::nn::{Model, ParamId, ParamMap};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Int8Mode {
    Symmetric,
    Asymmetric,
}

impl Int8Mode {
    pub fn id(self) -> &'static str {
        match self {
            Int8Mode::Symmetric => "symmetric",
            Int8Mode::Asymmetric => "asymmetric",
        }
    }
}

impl fmt::Display for Int8Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Int8Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(Int8Mode::Symmetric),
            "asymmetric" => Ok(Int8Mode::Asymmetric),
            other => Err(Error::Quantization(format!("unknown int8 mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    Symmetric,
    Asymmetric,
    Float16,
}

impl From<Int8Mode> for QuantMode {
    fn from(m: Int8Mode) -> Self {
        match m {
            Int8Mode::Symmetric => QuantMode::Symmetric,
            Int8Mode::Asymmetric => QuantMode::Asymmetric,
        }
    }
}

/// Weight precision of a whole model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Float32,
    Float16,
    Int8(Int8Mode),
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::Float32 => 32,
            Precision::Float16 => 16,
            Precision::Int8(_) => 8,
        }
    }

    pub fn from_bits(bits: u32, mode: Int8Mode) -> Result<Self> {
        match bits {
            32 => Ok(Precision::Float32),
            16 => Ok(Precision::Float16),
            8 => Ok(Precision::Int8(mode)),
            other => Err(Error::Quantization(format!(
                "unsupported precision {other} bits (expected 8, 16 or 32)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub bits: u8,
    pub mode: QuantMode,
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.mode {
            QuantMode::Symmetric => self.bits == 8 && self.zero_point == 0,
            QuantMode::Asymmetric => self.bits == 8 && (0..=255).contains(&self.zero_point),
            QuantMode::Float16 => self.bits == 16,
        };
        if !ok || !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Quantization(format!("invalid parameters {self:?}")));
        }
        Ok(())
    }

    fn code_range(&self) -> (i32, i32) {
        match self.mode {
            QuantMode::Symmetric => (-127, 127),
            _ => (0, 255),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantPayload {
    /// Asymmetric codes in `[0, 255]`.
    Unsigned(Vec<u8>),
    /// Symmetric codes in `[-127, 127]`.
    Signed(Vec<i8>),
    Half(Vec<f16>),
}

impl QuantPayload {
    pub fn len(&self) -> usize {
        match self {
            QuantPayload::Unsigned(v) => v.len(),
            QuantPayload::Signed(v) => v.len(),
            QuantPayload::Half(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub params: QuantParams,
    pub payload: QuantPayload,
}

/// Per-tensor scale and zero point for 8-bit quantization.
///
/// The asymmetric range is widened to include 0 so that zero weights map to
/// an exact code. An all-zero tensor gets scale 1.
pub fn compute_quant_params(weights: &Tensor, bits: u8, mode: Int8Mode) -> Result<QuantParams> {
    if bits != 8 {
        return Err(Error::Quantization(format!(
            "integer quantization supports 8 bits, got {bits}"
        )));
    }
    let data = weights.data();
    if data.is_empty() {
        return Err(Error::Quantization("empty tensor".into()));
    }
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Quantization(format!("non-finite weight {v}")));
    }
    let params = match mode {
        Int8Mode::Symmetric => {
            let max_abs = data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            let scale = if max_abs > 0.0 { max_abs / 127.0 } else { 1.0 };
            QuantParams {
                bits,
                mode: QuantMode::Symmetric,
                scale,
                zero_point: 0,
            }
        }
        Int8Mode::Asymmetric => {
            let min = data.iter().fold(0.0f32, |m, &v| m.min(v));
            let max = data.iter().fold(0.0f32, |m, &v| m.max(v));
            let (scale, zero_point) = if max > min {
                let scale = (max - min) / 255.0;
                let zp = (-min / scale).round_ties_even() as i32;
                (scale, zp.clamp(0, 255))
            } else {
                (1.0, 0)
            };
            QuantParams {
                bits,
                mode: QuantMode::Asymmetric,
                scale,
                zero_point,
            }
        }
    };
    params.validate()?;
    Ok(params)
}

/// Integer quantization with round-half-to-even and saturation.
pub fn quantize_tensor(weights: &Tensor, params: QuantParams) -> Result<QuantizedTensor> {
    params.validate()?;
    if params.mode == QuantMode::Float16 {
        return Err(Error::Quantization(
            "float16 tensors are produced by convert_float16".into(),
        ));
    }
    let (lo, hi) = params.code_range();
    let codes = weights.data().iter().map(|&w| {
        // Dividing in f64 keeps the code choice exact up to the final f32
        // product in dequantization. `as i32` saturates for huge ratios.
        let q = (w as f64 / params.scale as f64).round_ties_even() as i32;
        q.saturating_add(params.zero_point).clamp(lo, hi)
    });
    let payload = match params.mode {
        QuantMode::Symmetric => QuantPayload::Signed(codes.map(|q| q as i8).collect()),
        _ => QuantPayload::Unsigned(codes.map(|q| q as u8).collect()),
    };
    Ok(QuantizedTensor {
        shape: weights.shape().to_vec(),
        params,
        payload,
    })
}

pub fn dequantize_tensor(q: &QuantizedTensor) -> Tensor {
    let p = q.params;
    let affine = |code: i32| (code - p.zero_point) as f32 * p.scale;
    let data = match &q.payload {
        QuantPayload::Unsigned(v) => v.iter().map(|&c| affine(c as i32)).collect(),
        QuantPayload::Signed(v) => v.iter().map(|&c| affine(c as i32)).collect(),
        QuantPayload::Half(v) => v.iter().map(|h| h.to_f32()).collect(),
    };
    Tensor::new(q.shape.clone(), data).expect("payload length matches shape")
}

/// Rounds to binary16 (nearest-even). `name` labels overflow errors.
pub fn convert_float16(name: &str, weights: &Tensor) -> Result<QuantizedTensor> {
    let max = f16::MAX.to_f32();
    if let Some(&v) = weights.data().iter().find(|v| v.is_nan() || v.abs() > max) {
        return Err(Error::HalfOverflow {
            name: name.to_string(),
            value: v,
        });
    }
    Ok(QuantizedTensor {
        shape: weights.shape().to_vec(),
        params: QuantParams {
            bits: 16,
            mode: QuantMode::Float16,
            scale: 1.0,
            zero_point: 0,
        },
        payload: QuantPayload::Half(weights.data().iter().map(|&v| f16::from_f32(v)).collect()),
    })
}

/// A parameter as stored in an archive.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredParam {
    Full(Tensor),
    Quantized(QuantizedTensor),
}

impl StoredParam {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredParam::Full(t) => t.shape(),
            StoredParam::Quantized(q) => &q.shape,
        }
    }

    pub fn dequantize(&self) -> Tensor {
        match self {
            StoredParam::Full(t) => t.clone(),
            StoredParam::Quantized(q) => dequantize_tensor(q),
        }
    }
}

/// Parameters of a model at a given storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub arch: String,
    pub params: BTreeMap<ParamId, StoredParam>,
}

impl QuantizedModel {
    pub fn full_precision(model: &Model) -> Self {
        Self {
            arch: model.arch.clone(),
            params: model
                .params
                .iter()
                .map(|(id, t)| (*id, StoredParam::Full(t.clone())))
                .collect(),
        }
    }

    pub fn dequantize(&self) -> ParamMap {
        self.params
            .iter()
            .map(|(id, p)| (*id, p.dequantize()))
            .collect()
    }
}

/// Quantizes every weight tensor; returns the stored form and a model
/// carrying the dequantized weights for accuracy measurement.
pub fn quantize_model(model: &Model, precision: Precision) -> Result<(QuantizedModel, Model)> {
    let mut stored = BTreeMap::new();
    for (id, t) in &model.params {
        let p = match precision {
            _ if !id.is_weight() => StoredParam::Full(t.clone()),
            Precision::Float32 => StoredParam::Full(t.clone()),
            Precision::Float16 => StoredParam::Quantized(convert_float16(&id.to_string(), t)?),
            Precision::Int8(mode) => {
                let params = compute_quant_params(t, 8, mode)?;
                StoredParam::Quantized(quantize_tensor(t, params)?)
            }
        };
        stored.insert(*id, p);
    }
    let quantized = QuantizedModel {
        arch: model.arch.clone(),
        params: stored,
    };
    let mut eval = model.clone();
    eval.params = quantized.dequantize();
    Ok((quantized, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn asymmetric_params_closed_form() {
        let p = compute_quant_params(&t(&[-1.0, 0.5, 3.0]), 8, Int8Mode::Asymmetric).unwrap();
        assert!((p.scale - 4.0 / 255.0).abs() < 1e-7);
        assert_eq!(p.zero_point, 64);
    }

    #[test]
    fn symmetric_params_closed_form() {
        let p = compute_quant_params(&t(&[-2.0, 0.5, 1.0]), 8, Int8Mode::Symmetric).unwrap();
        assert!((p.scale - 2.0 / 127.0).abs() < 1e-7);
        assert_eq!(p.zero_point, 0);
    }

    #[test]
    fn all_zero_tensor_is_degenerate() {
        let p = compute_quant_params(&t(&[0.0; 5]), 8, Int8Mode::Asymmetric).unwrap();
        assert_eq!((p.scale, p.zero_point), (1.0, 0));
        let q = quantize_tensor(&t(&[0.0; 5]), p).unwrap();
        assert_eq!(dequantize_tensor(&q).data(), &[0.0; 5]);
    }

    #[test]
    fn rejects_non_finite_and_wrong_bits() {
        assert!(compute_quant_params(&t(&[f32::NAN]), 8, Int8Mode::Symmetric).is_err());
        assert!(compute_quant_params(&t(&[1.0]), 4, Int8Mode::Symmetric).is_err());
    }

    #[test]
    fn zero_maps_to_zero_point_and_back() {
        let p = QuantParams {
            bits: 8,
            mode: QuantMode::Asymmetric,
            scale: 4.0 / 255.0,
            zero_point: 64,
        };
        let q = quantize_tensor(&t(&[0.0, 100.0, -100.0]), p).unwrap();
        assert_eq!(q.payload, QuantPayload::Unsigned(vec![64, 255, 0]));
        assert_eq!(dequantize_tensor(&q).data()[0], 0.0);
    }

    #[test]
    fn symmetric_endpoint_dequantizes_to_127_scale() {
        let s = 0.01f32;
        let p = QuantParams {
            bits: 8,
            mode: QuantMode::Symmetric,
            scale: s,
            zero_point: 0,
        };
        let q = quantize_tensor(&t(&[5.0, -5.0]), p).unwrap();
        assert_eq!(q.payload, QuantPayload::Signed(vec![127, -127]));
        assert_eq!(dequantize_tensor(&q).data(), &[127.0 * s, -127.0 * s]);
    }

    #[test]
    fn rounding_is_half_to_even() {
        let p = QuantParams {
            bits: 8,
            mode: QuantMode::Symmetric,
            scale: 1.0,
            zero_point: 0,
        };
        let q = quantize_tensor(&t(&[0.5, 1.5, 2.5, -0.5]), p).unwrap();
        assert_eq!(q.payload, QuantPayload::Signed(vec![0, 2, 2, 0]));
    }

    #[test]
    fn float16_bit_patterns() {
        let q = convert_float16("w", &t(&[1.0, 0.0])).unwrap();
        match &q.payload {
            QuantPayload::Half(h) => {
                assert_eq!(h[0].to_bits(), 0x3C00);
                assert_eq!(h[1].to_bits(), 0x0000);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(dequantize_tensor(&q).data(), &[1.0, 0.0]);
    }

    #[test]
    fn float16_overflow_names_parameter() {
        let err = convert_float16("4.weight", &t(&[70000.0])).unwrap_err();
        assert!(err.to_string().contains("4.weight"), "{err}");
        assert!(convert_float16("w", &t(&[65504.0])).is_ok());
    }

    #[test]
    fn precision_bits() {
        assert_eq!(
            Precision::from_bits(16, Int8Mode::Asymmetric).unwrap(),
            Precision::Float16
        );
        assert_eq!(Precision::Int8(Int8Mode::Symmetric).bits(), 8);
        assert!(Precision::from_bits(4, Int8Mode::Asymmetric).is_err());
    }
}
