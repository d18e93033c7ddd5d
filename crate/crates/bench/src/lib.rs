//! Deterministic inputs shared by the benchmarks.

use ffc_core::Tensor;

/// Values in `[-1, 1)` from a fixed integer hash, so runs compare like for like.
pub fn filled(shape: &[usize], salt: u64) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |i| {
        let mut x = (i as u64 ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_add(1);
        x ^= x >> 33;
        x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
        x ^= x >> 33;
        (x >> 40) as f32 / (1u64 << 23) as f32 - 1.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filled_is_deterministic_and_bounded() {
        let a = filled(&[7, 9], 3);
        assert_eq!(a, filled(&[7, 9], 3));
        assert_ne!(a, filled(&[7, 9], 4));
        assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
    }
}
