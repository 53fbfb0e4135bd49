use std::collections::BTreeMap;

use half::f16;
use mcbench_core::metrics::{compression_term, quality_metric};
use mcbench_core::nn::ParamId;
use mcbench_core::pruning::{magnitude_threshold, pruned_count};
use mcbench_core::quantization::{
    compute_quant_params, convert_float16, dequantize_tensor, quantize_tensor, Int8Mode,
    QuantPayload, StoredParam,
};
use mcbench_core::sizing::{parse_params, serialize_params};
use mcbench_core::Tensor;
use proptest::prelude::*;

fn weights() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0f32), 4 => -1.0f32..1.0], 1..400)
}

/// Few distinct magnitudes, so many entries tie at the cutoff.
fn tied_weights() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(
        prop::sample::select(vec![0.0f32, 0.25, -0.25, 0.5, -0.5, 1.0, -1.0]),
        1..200,
    )
}

fn tensor(data: Vec<f32>) -> Tensor {
    Tensor::new(vec![data.len()], data).unwrap()
}

fn sort_oracle(data: &[f32], sparsity: f64) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_by(|&a, &b| data[a].abs().total_cmp(&data[b].abs()).then(a.cmp(&b)));
    let mut keep = vec![true; data.len()];
    for &i in &idx[..(sparsity * data.len() as f64).floor() as usize] {
        keep[i] = false;
    }
    keep
}

fn mode() -> impl Strategy<Value = Int8Mode> {
    prop_oneof![Just(Int8Mode::Symmetric), Just(Int8Mode::Asymmetric)]
}

proptest! {
    #[test]
    fn threshold_matches_sort_oracle(data in prop_oneof![weights(), tied_weights()], s in 0.0f64..1.0) {
        let mask = magnitude_threshold(&tensor(data.clone()), s).unwrap();
        prop_assert_eq!(&mask.keep, &sort_oracle(&data, s));
        prop_assert_eq!(mask.pruned(), pruned_count(s, data.len()));
        let achieved = mask.pruned() as f64 / data.len() as f64;
        prop_assert!((achieved - s).abs() <= 1.0 / data.len() as f64);
    }

    #[test]
    fn masks_nest_as_sparsity_grows(data in tied_weights(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t = tensor(data);
        let m_lo = magnitude_threshold(&t, lo).unwrap();
        let m_hi = magnitude_threshold(&t, hi).unwrap();
        for (k_lo, k_hi) in m_lo.keep.iter().zip(&m_hi.keep) {
            prop_assert!(*k_lo || !*k_hi);
        }
    }

    #[test]
    fn applying_a_mask_is_idempotent(data in weights(), s in 0.0f64..1.0) {
        let mut t = tensor(data);
        let mask = magnitude_threshold(&t, s).unwrap();
        mask.apply(&mut t);
        let once = t.clone();
        mask.apply(&mut t);
        prop_assert_eq!(once, t);
    }

    #[test]
    fn int8_round_trip(data in weights(), mode in mode()) {
        let t = tensor(data);
        let params = compute_quant_params(&t, 8, mode).unwrap();
        let q = quantize_tensor(&t, params).unwrap();
        let back = dequantize_tensor(&q);
        let lo = (if mode == Int8Mode::Symmetric { -127 } else { 0 } - params.zero_point) as f32 * params.scale;
        let hi = (if mode == Int8Mode::Symmetric { 127 } else { 255 } - params.zero_point) as f32 * params.scale;
        for (&w, &d) in t.data().iter().zip(back.data()) {
            if w == 0.0 {
                prop_assert_eq!(d, 0.0);
            } else if w < lo {
                prop_assert_eq!(d, lo);
            } else if w > hi {
                prop_assert_eq!(d, hi);
            } else {
                let err = (w as f64 - d as f64).abs();
                prop_assert!(err <= params.scale as f64 / 2.0 + 1e-7, "w={} d={} scale={}", w, d, params.scale);
            }
        }
        let again = quantize_tensor(&back, params).unwrap();
        prop_assert_eq!(&again.payload, &q.payload);
        if mode == Int8Mode::Symmetric {
            prop_assert_eq!(params.zero_point, 0);
        } else {
            let (min, max) = t.data().iter().fold((0.0f32, 0.0f32), |(a, b), &v| (a.min(v), b.max(v)));
            prop_assert!(params.scale * 255.0 >= (max - min) * (1.0 - 1e-6));
        }
    }

    #[test]
    fn float16_error_within_half_ulp(data in prop::collection::vec(-4.0f32..4.0, 1..200)) {
        let t = tensor(data);
        let q = convert_float16("w", &t).unwrap();
        let back = dequantize_tensor(&q);
        for (&w, &d) in t.data().iter().zip(back.data()) {
            let bound = 2f64.powi(-11) * (w.abs() as f64).max(2f64.powi(-14));
            prop_assert!((w as f64 - d as f64).abs() <= bound);
        }
        // Widening is exact: converting the widened values again is lossless.
        let again = convert_float16("w", &back).unwrap();
        prop_assert_eq!(again.payload, q.payload);
    }

    #[test]
    fn archive_round_trip_is_bit_exact(a in weights(), b in weights(), mode in mode()) {
        let mut params = BTreeMap::new();
        let ta = tensor(a);
        let tb = tensor(b);
        let qp = compute_quant_params(&tb, 8, mode).unwrap();
        params.insert(ParamId::weight(0), StoredParam::Quantized(convert_float16("0.weight", &ta).unwrap()));
        params.insert(ParamId::bias(0), StoredParam::Full(ta.clone()));
        params.insert(ParamId::weight(2), StoredParam::Quantized(quantize_tensor(&tb, qp).unwrap()));
        let bytes = serialize_params(&params).unwrap();
        let parsed = parse_params(&bytes).unwrap();
        prop_assert_eq!(serialize_params(&parsed).unwrap(), bytes);
        for (id, p) in &params {
            let r = &parsed[id];
            prop_assert_eq!(
                p.dequantize().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                r.dequantize().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn raw_size_depends_only_on_shapes(a in weights(), seed in any::<u32>()) {
        let other: Vec<f32> = a.iter().enumerate()
            .map(|(i, _)| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / u32::MAX as f32)
            .collect();
        let size = |data: Vec<f32>| {
            let mut params = BTreeMap::new();
            params.insert(ParamId::weight(0), StoredParam::Full(tensor(data)));
            serialize_params(&params).unwrap().len()
        };
        prop_assert_eq!(size(a), size(other));
    }

    #[test]
    fn quality_is_bounded(s in 0.0f64..0.999, p in prop::sample::select(vec![8u32, 16, 32]),
                          r in 0.01f64..100.0, d in -100.0f64..100.0) {
        let q = quality_metric(s, p, r, d).unwrap();
        prop_assert!(q.abs() < 1.0);
        prop_assert!(q.abs() <= compression_term(s, p));
    }

    #[test]
    fn quality_orders_with_reduction_and_precision(s in 0.0f64..0.99, r in 0.5f64..20.0,
                                                   dr in 0.01f64..5.0, d in 0.05f64..10.0) {
        for delta in [d, -d] {
            let sign = delta.signum();
            let q = |p, r| quality_metric(s, p, r, delta).unwrap();
            prop_assert!(sign * q(16, r + dr) > sign * q(16, r));
            prop_assert!(sign * q(16, r) > sign * q(32, r));
            prop_assert!(sign * q(8, r) > sign * q(16, r));
        }
    }

    #[test]
    fn scaling_reductions_keeps_sign(s in 0.0f64..0.99, r in 0.5f64..20.0, k in 1.0f64..50.0, d in -10.0f64..10.0) {
        let a = quality_metric(s, 8, r, d).unwrap();
        let b = quality_metric(s, 8, r * k, d).unwrap();
        prop_assert_eq!(a.signum(), b.signum());
    }
}

#[test]
fn half_bit_patterns() {
    let q = convert_float16("w", &tensor(vec![1.0, 0.0, -2.0])).unwrap();
    let QuantPayload::Half(h) = q.payload else {
        panic!("expected float16 payload")
    };
    assert_eq!(
        h.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        [0x3C00, 0x0000, 0xC000]
    );
    assert_eq!(h[0], f16::ONE);
}
