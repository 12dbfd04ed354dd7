//! Symmetric per-vector INT8 quantization: `scale = max|v| / 127`,
//! `code = round(v / scale)` clamped to `[-127, 127]`.

use crate::error::{AnnError, Result};

pub fn quantize_int8(v: &[f32]) -> Result<(Vec<i8>, f32)> {
    if let Some(i) = v.iter().position(|x| x.is_nan()) {
        return Err(AnnError::NaN(i));
    }
    let max = v.iter().fold(0.0f32, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return Ok((vec![0; v.len()], 0.0));
    }
    let scale = max / 127.0;
    let codes = v
        .iter()
        .map(|&x| (x / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    Ok((codes, scale))
}

pub fn dequantize(codes: &[i8], scale: f32) -> Vec<f32> {
    codes.iter().map(|&c| c as f32 * scale).collect()
}

/// Inner product of an f32 query with a quantized vector.
#[inline]
pub fn dot_quantized(query: &[f32], codes: &[i8], scale: f32) -> f32 {
    let mut acc = 0.0f32;
    for (q, &c) in query.iter().zip(codes) {
        acc += q * c as f32;
    }
    acc * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_vector() {
        let (codes, scale) = quantize_int8(&[0.0; 4]).unwrap();
        assert_eq!(codes, vec![0; 4]);
        assert_eq!(scale, 0.0);
        assert_eq!(dequantize(&codes, scale), vec![0.0; 4]);
    }

    #[test]
    fn endpoints_map_to_full_range() {
        let s = 0.37f32;
        let (codes, scale) = quantize_int8(&[127.0 * s, -127.0 * s]).unwrap();
        assert_eq!(codes, vec![127, -127]);
        assert!((scale - s).abs() < 1e-7);
    }

    #[test]
    fn nan_is_rejected() {
        assert!(matches!(quantize_int8(&[1.0, f32::NAN]), Err(AnnError::NaN(1))));
    }

    proptest! {
        #[test]
        fn reconstruction_within_half_step(v in prop::collection::vec(-10.0f32..10.0, 32)) {
            let (codes, scale) = quantize_int8(&v).unwrap();
            for (x, y) in v.iter().zip(dequantize(&codes, scale)) {
                prop_assert!((x - y).abs() <= scale / 2.0 + 1e-6);
            }
        }
    }
}
