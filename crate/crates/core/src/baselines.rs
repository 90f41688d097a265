//! Classical reference reconstructors.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_io::PatchSample;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Mirror about the edge pixel without repeating it (`d c b | a b c d | c b a`).
    #[default]
    Reflect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub kernel_t: usize,
    pub kernel_g: usize,
    pub boundary: Boundary,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            kernel_t: 8,
            kernel_g: 8,
            boundary: Boundary::Reflect,
        }
    }
}

/// Window offsets `[−k/2, k − 1 − k/2]`; for k = 8 that is `[−4, 3]`.
pub fn window_offsets(k: usize) -> (isize, isize) {
    let lo = -((k / 2) as isize);
    (lo, lo + k as isize - 1)
}

/// Mirror index into `0..n` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Sliding-window mean over valid pixels only; windows with no valid pixel
/// produce 0. Output has the patch's normalized units.
pub fn mean_filter<T: Scalar>(patch: &PatchSample<T>, config: &FilterConfig) -> Result<Array2<T>> {
    let (h, w) = patch.values.dim();
    let (kt, kg) = (config.kernel_t, config.kernel_g);
    if kt == 0 || kg == 0 {
        return Err(Error::Parameter("filter kernel sizes must be positive".into()));
    }
    if kt > h || kg > w {
        return Err(Error::Parameter(format!(
            "kernel {kt}x{kg} larger than patch {h}x{w}"
        )));
    }
    let (t_lo, t_hi) = window_offsets(kt);
    let (g_lo, g_hi) = window_offsets(kg);

    // separable box sums of value·valid and valid counts (counts kept in f64
    // so they stay exact)
    let masked = Array2::from_shape_fn((h, w), |p| {
        if patch.validity[p] {
            patch.values[p].as_f64()
        } else {
            0.0
        }
    });
    let valid = patch.validity.mapv(|v| v as u8 as f64);
    let box_sum = |a: &Array2<f64>| {
        let rows = Array2::from_shape_fn((h, w), |(i, j)| {
            (g_lo..=g_hi).map(|d| a[[i, reflect_index(j as isize + d, w)]]).sum::<f64>()
        });
        Array2::from_shape_fn((h, w), |(i, j)| {
            (t_lo..=t_hi).map(|d| rows[[reflect_index(i as isize + d, h), j]]).sum::<f64>()
        })
    };
    let sums = box_sum(&masked);
    let counts = box_sum(&valid);
    Ok(Array2::from_shape_fn((h, w), |p| {
        if counts[p] > 0.0 {
            T::of(sums[p] / counts[p])
        } else {
            T::zero()
        }
    }))
}

/// A method that reconstructs a normalized patch in normalized units.
pub trait Reconstructor<T>: Sync {
    fn id(&self) -> &str;
    fn reconstruct(&self, patch: &PatchSample<T>) -> Result<Array2<T>>;
}

/// The 8×8 reflect-boundary mean filter, registered as `meanfilter8`.
#[derive(Clone, Debug, Default)]
pub struct MeanFilter {
    pub config: FilterConfig,
}

impl<T: Scalar> Reconstructor<T> for MeanFilter {
    fn id(&self) -> &str {
        "meanfilter8"
    }

    fn reconstruct(&self, patch: &PatchSample<T>) -> Result<Array2<T>> {
        mean_filter(patch, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct per-pixel window average.
    fn naive(values: &Array2<f64>, valid: &Array2<bool>, kt: usize, kg: usize) -> Array2<f64> {
        let (h, w) = values.dim();
        let mut out = Array2::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                let (mut s, mut n) = (0.0, 0.0);
                for a in 0..kt {
                    for b in 0..kg {
                        let di = a as isize - (kt / 2) as isize;
                        let dj = b as isize - (kg / 2) as isize;
                        let p = [reflect_index(i as isize + di, h), reflect_index(j as isize + dj, w)];
                        if valid[p] {
                            s += values[p];
                            n += 1.0;
                        }
                    }
                }
                out[[i, j]] = if n > 0.0 { s / n } else { 0.0 };
            }
        }
        out
    }

    fn random_patch(size: usize, seed: u64, invalid: f64) -> PatchSample<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((size, size), |_| rng.gen_range(-1.0..1.0));
        let validity = Array2::from_shape_fn((size, size), |_| rng.gen::<f64>() >= invalid);
        PatchSample {
            values,
            validity,
            t_origin: 0,
            g_origin: 0,
        }
    }

    #[test]
    fn reflect_does_not_repeat_edge() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(window_offsets(8), (-4, 3));
        assert_eq!(window_offsets(7), (-3, 3));
    }

    #[test]
    fn matches_naive_oracle() {
        for seed in 0..10 {
            let p = random_patch(16, seed, 0.2);
            let fast = mean_filter(&p, &FilterConfig::default()).unwrap();
            let slow = naive(&p.values, &p.validity, 8, 8);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn constant_field_is_fixed_point() {
        let p = PatchSample::from_values(Array2::from_elem((16, 12), 0.37f64));
        let out = mean_filter(&p, &FilterConfig::default()).unwrap();
        assert!(out.iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn impulse_spreads_to_one_sixty_fourth() {
        let mut values = Array2::<f64>::zeros((32, 32));
        values[[16, 16]] = 1.0;
        let out = mean_filter(&PatchSample::from_values(values), &FilterConfig::default()).unwrap();
        // offsets [-4, 3]: pixel (i, j) sees the impulse when 16 - i lies in [-4, 3]
        for i in 0..32usize {
            for j in 0..32usize {
                let di = 16 - i as isize;
                let dj = 16 - j as isize;
                let inside = (-4..=3).contains(&di) && (-4..=3).contains(&dj);
                let expect = if inside { 1.0 / 64.0 } else { 0.0 };
                assert!((out[[i, j]] - expect).abs() < 1e-15, "({i}, {j})");
            }
        }
    }

    #[test]
    fn linear_ramp_interior_shift() {
        let p = PatchSample::from_values(Array2::from_shape_fn((20, 20), |(i, _)| i as f64));
        let out = mean_filter(&p, &FilterConfig::default()).unwrap();
        // mean of offsets -4..=3 is -0.5
        for i in 4..16 {
            assert!((out[[i, 10]] - (i as f64 - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn all_invalid_window_gives_zero() {
        let mut p = random_patch(8, 1, 0.0);
        p.validity.fill(false);
        let out = mean_filter(&p, &FilterConfig::default()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oversized_kernel_rejected() {
        let p = random_patch(6, 1, 0.0);
        assert!(matches!(mean_filter(&p, &FilterConfig::default()), Err(Error::Parameter(_))));
    }

    proptest! {
        #[test]
        fn output_within_valid_range(seed in 0u64..1000, invalid in 0.0f64..0.9) {
            let p = random_patch(12, seed, invalid);
            let out = mean_filter(&p, &FilterConfig::default()).unwrap();
            let valid: Vec<f64> = p.values.iter().zip(p.validity.iter()).filter(|(_, &v)| v).map(|(&x, _)| x).collect();
            prop_assume!(!valid.is_empty());
            let lo = valid.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
            let hi = valid.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
            prop_assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }
}
