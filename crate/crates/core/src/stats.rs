//! Small order-statistics helpers shared by the fitters.

use crate::scalar::Real;

/// Median of a slice (averaged middle pair for even lengths). Empty input
/// returns NaN.
pub fn median<R: Real>(values: &[R]) -> R {
    if values.is_empty() {
        return R::nan();
    }
    let mut v: Vec<R> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / R::of(2.0)
    }
}

pub fn mean<R: Real>(values: &[R]) -> R {
    if values.is_empty() {
        return R::nan();
    }
    values.iter().copied().sum::<R>() / R::of(values.len() as f64)
}

/// Robust noise estimate from successive differences: for white noise of
/// standard deviation sigma riding on a slowly varying signal,
/// `median(|x[i+1]-x[i]|) = sigma * sqrt(2) * 0.6745...`, so dividing by
/// that constant recovers sigma while staying insensitive to isolated dips.
pub fn noise_rms_from_diffs<R: Real>(values: &[R]) -> R {
    if values.len() < 3 {
        return R::zero();
    }
    let diffs: Vec<R> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    median(&diffs) / R::of(std::f64::consts::SQRT_2 * 0.674_489_75)
}

/// FNV-1a 64-bit hash, used for input provenance stamps.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median::<f64>(&[]).is_nan());
    }

    #[test]
    fn noise_estimate_recovers_sigma() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0f64, 0.02).unwrap();
        let samples: Vec<f64> = (0..4000).map(|_| 1.0 + normal.sample(&mut rng)).collect();
        let est = noise_rms_from_diffs(&samples);
        assert!((est - 0.02).abs() < 0.002, "est = {est}");
    }

    #[test]
    fn fnv_is_stable() {
        // Reference value for "a" from the FNV-1a specification.
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
