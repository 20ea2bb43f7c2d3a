//! Seeded data generators and proptest strategies.

use std::sync::Arc;

use hyperem::nn::Tensor;
use hyperem::rng::SplitMix64;
use hyperem::synthrtm::{PARAM_NAMES, PARAM_RANGES};
use hyperem::{HyperspectralCube, ParameterMap};
use proptest::prelude::*;

/// `400, 410, ...` nm.
pub fn test_wavelengths(bands: usize) -> Arc<[f64]> {
    (0..bands).map(|i| 400.0 + 10.0 * i as f64).collect()
}

/// Uniform `[0, 1]` reflectances.
pub fn random_cube(seed: u64, height: usize, width: usize, bands: usize) -> HyperspectralCube {
    let mut rng = SplitMix64::new(seed);
    let values = (0..height * width * bands).map(|_| rng.next_f64() as f32).collect();
    HyperspectralCube::new(height, width, test_wavelengths(bands), values).unwrap()
}

/// Six RTM parameters drawn uniformly within their ranges, pixel by pixel.
pub fn random_map(seed: u64, height: usize, width: usize) -> ParameterMap {
    let mut rng = SplitMix64::new(seed);
    let mut values = Vec::with_capacity(height * width * PARAM_NAMES.len());
    for _ in 0..height * width {
        for (lo, hi) in PARAM_RANGES {
            values.push(rng.uniform(lo, hi));
        }
    }
    ParameterMap::new(
        height,
        width,
        PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        PARAM_RANGES.to_vec(),
        &values,
    )
    .unwrap()
}

pub fn random_tensor(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// Uniform in `±[margin, scale]`, so no entry sits near an activation kink.
pub fn kink_safe_tensor(seed: u64, shape: &[usize], scale: f64, margin: f64) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform(margin, scale);
            if rng.next_u64() & 1 == 0 {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Small cubes of arbitrary shape.
pub fn cube_strategy(max_side: usize, max_bands: usize) -> impl Strategy<Value = HyperspectralCube> {
    (any::<u64>(), 1..=max_side, 1..=max_side, 1..=max_bands).prop_map(|(s, h, w, b)| random_cube(s, h, w, b))
}

/// Two same-shape cubes.
pub fn cube_pair_strategy(
    max_side: usize,
    max_bands: usize,
) -> impl Strategy<Value = (HyperspectralCube, HyperspectralCube)> {
    (any::<u64>(), any::<u64>(), 1..=max_side, 1..=max_side, 1..=max_bands)
        .prop_map(|(s1, s2, h, w, b)| (random_cube(s1, h, w, b), random_cube(s2, h, w, b)))
}

/// Spectrum with every entry in `[lo, 1]`.
pub fn spectrum_strategy(len: std::ops::RangeInclusive<usize>, lo: f64) -> impl Strategy<Value = Vec<f64>> {
    len.prop_flat_map(move |n| prop::collection::vec(lo..=1.0f64, n))
}

pub fn map_strategy(max_side: usize) -> impl Strategy<Value = ParameterMap> {
    (any::<u64>(), 1..=max_side, 1..=max_side).prop_map(|(s, h, w)| random_map(s, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_cube() {
        assert_eq!(random_cube(5, 3, 4, 6), random_cube(5, 3, 4, 6));
        assert_ne!(random_cube(5, 3, 4, 6), random_cube(6, 3, 4, 6));
    }

    #[test]
    fn cube_values_in_unit_interval() {
        let c = random_cube(1, 8, 8, 16);
        assert!(c.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mean_of_a_million_samples() {
        let c = random_cube(42, 100, 100, 100);
        let mean = c.values().iter().map(|&v| v as f64).sum::<f64>() / 1e6;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn kink_margin_respected() {
        let t = kink_safe_tensor(3, &[1000], 1.0, 1e-3);
        assert!(t.data().iter().all(|v| v.abs() >= 1e-3 && v.abs() <= 1.0));
    }

    #[test]
    fn maps_within_ranges() {
        let m = random_map(9, 5, 7);
        for k in 0..m.n_params() {
            let (lo, hi) = m.ranges()[k];
            assert!(m
                .field(k)
                .iter()
                .all(|&v| v >= lo - 1e-5 * hi.abs().max(1.0) && v <= hi + 1e-5 * hi.abs().max(1.0)));
        }
    }
}
