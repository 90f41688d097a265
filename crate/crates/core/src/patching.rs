//! 2×2 micro-patch tokenization, random token masks and the mask-ratio
//! curriculum.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_io::PatchSample;
use crate::scalar::Scalar;

/// Micro-patch edge length in pixels.
pub const MICRO_PATCH: usize = 2;
/// Pixels per token.
pub const TOKEN_DIM: usize = MICRO_PATCH * MICRO_PATCH;

/// Row-major sequence of flattened 2×2 micro-patches.
///
/// Token `k = i * grid_w + j` holds pixels `(2i, 2j), (2i, 2j+1), (2i+1, 2j),
/// (2i+1, 2j+1)` in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid<T> {
    pub tokens: Array2<T>,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl<T> TokenGrid<T> {
    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn to_tokens<E: Copy>(image: &Array2<E>) -> Result<(Array2<E>, usize, usize)> {
    let (h, w) = image.dim();
    if h % MICRO_PATCH != 0 || w % MICRO_PATCH != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "patch {h}x{w} is not tileable by {MICRO_PATCH}x{MICRO_PATCH} micro-patches"
        )));
    }
    let (gh, gw) = (h / MICRO_PATCH, w / MICRO_PATCH);
    let tokens = Array2::from_shape_fn((gh * gw, TOKEN_DIM), |(k, e)| {
        let (i, j) = (k / gw, k % gw);
        image[[MICRO_PATCH * i + e / MICRO_PATCH, MICRO_PATCH * j + e % MICRO_PATCH]]
    });
    Ok((tokens, gh, gw))
}

pub fn tokenize<T: Scalar>(patch: &PatchSample<T>) -> Result<TokenGrid<T>> {
    tokenize_array(&patch.values)
}

pub fn tokenize_array<T: Scalar>(values: &Array2<T>) -> Result<TokenGrid<T>> {
    let (tokens, grid_h, grid_w) = to_tokens(values)?;
    Ok(TokenGrid {
        tokens,
        grid_h,
        grid_w,
    })
}

/// Validity laid out in token order, shape (L, 4).
pub fn tokenize_validity(validity: &Array2<bool>) -> Result<Array2<bool>> {
    Ok(to_tokens(validity)?.0)
}

pub fn untokenize<T: Scalar>(grid: &TokenGrid<T>) -> Result<Array2<T>> {
    let (l, d) = grid.tokens.dim();
    if l != grid.grid_h * grid.grid_w || d != TOKEN_DIM {
        return Err(Error::Shape(format!(
            "token array {l}x{d} inconsistent with grid {}x{}",
            grid.grid_h, grid.grid_w
        )));
    }
    let gw = grid.grid_w;
    Ok(Array2::from_shape_fn(
        (grid.grid_h * MICRO_PATCH, gw * MICRO_PATCH),
        |(r, c)| {
            let k = (r / MICRO_PATCH) * gw + c / MICRO_PATCH;
            grid.tokens[[k, (r % MICRO_PATCH) * MICRO_PATCH + c % MICRO_PATCH]]
        },
    ))
}

/// One token-visibility draw.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskRealization {
    /// `true` = token is shown to the encoder.
    pub visible: Vec<bool>,
    pub ratio: f64,
    pub seed: u64,
}

impl MaskRealization {
    /// Builds a mask from an explicit visibility pattern.
    pub fn from_visible(visible: Vec<bool>, seed: u64) -> Self {
        let hidden = visible.iter().filter(|v| !**v).count();
        let ratio = hidden as f64 / visible.len().max(1) as f64;
        Self {
            visible,
            ratio,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.visible.len()).filter(|&k| self.visible[k]).collect()
    }

    pub fn hidden_indices(&self) -> Vec<usize> {
        (0..self.visible.len()).filter(|&k| !self.visible[k]).collect()
    }

    pub fn hidden_count(&self) -> usize {
        self.visible.iter().filter(|v| !**v).count()
    }
}

/// Number of hidden tokens for a ratio, rounding half away from zero.
pub fn hidden_count_for(len: usize, ratio: f64) -> usize {
    (ratio * len as f64).round() as usize
}

/// Hides exactly `round(ratio · len)` tokens: a seeded shuffle of `0..len`
/// whose first entries become hidden.
pub fn sample_mask(len: usize, ratio: f64, seed: u64) -> Result<MaskRealization> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Parameter(format!("mask ratio must lie in [0, 1), got {ratio}")));
    }
    if len == 0 {
        return Err(Error::Parameter("mask length must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut visible = vec![true; len];
    for &k in &order[..hidden_count_for(len, ratio)] {
        visible[k] = false;
    }
    Ok(MaskRealization {
        visible,
        ratio,
        seed,
    })
}

/// Mask-ratio curriculum: hold `r_start`, half-cosine ramp, hold `r_end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumSchedule {
    pub enabled: bool,
    pub r_start: f64,
    pub r_end: f64,
    pub hold_epochs: usize,
    pub ramp_end_epoch: usize,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            enabled: true,
            r_start: 0.5,
            r_end: 0.7,
            hold_epochs: 5,
            ramp_end_epoch: 30,
        }
    }
}

impl CurriculumSchedule {
    /// Fixed-ratio configuration (`r_end` for every epoch).
    pub fn fixed() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.r_start && self.r_start <= self.r_end && self.r_end < 1.0) {
            return Err(Error::Parameter(format!(
                "curriculum needs 0 <= r_start ({}) <= r_end ({}) < 1",
                self.r_start, self.r_end
            )));
        }
        if self.hold_epochs >= self.ramp_end_epoch {
            return Err(Error::Parameter(format!(
                "curriculum needs hold_epochs ({}) < ramp_end_epoch ({})",
                self.hold_epochs, self.ramp_end_epoch
            )));
        }
        Ok(())
    }
}

pub fn mask_ratio_at(schedule: &CurriculumSchedule, epoch: i64) -> Result<f64> {
    if epoch < 0 {
        return Err(Error::Parameter(format!("epoch must be >= 0, got {epoch}")));
    }
    schedule.validate()?;
    if !schedule.enabled {
        return Ok(schedule.r_end);
    }
    let e = epoch as usize;
    Ok(if e < schedule.hold_epochs {
        schedule.r_start
    } else if e >= schedule.ramp_end_epoch {
        schedule.r_end
    } else {
        let span = (schedule.ramp_end_epoch - schedule.hold_epochs) as f64;
        let phase = std::f64::consts::PI * (e - schedule.hold_epochs) as f64 / span;
        schedule.r_start + (schedule.r_end - schedule.r_start) * (1.0 - phase.cos()) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_by_four_layout() {
        let p = Array2::from_shape_fn((4, 4), |(r, c)| (r * 4 + c) as f64);
        let g = tokenize_array(&p).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.tokens.row(0).to_vec(), vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(g.tokens.row(3).to_vec(), vec![10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn default_window_has_1024_tokens() {
        let g = tokenize_array(&Array2::<f32>::zeros((64, 64))).unwrap();
        assert_eq!((g.len(), g.grid_h, g.grid_w), (1024, 32, 32));
        let g = tokenize_array(&Array2::<f32>::zeros((256, 64))).unwrap();
        assert_eq!(g.len(), 4096);
    }

    #[test]
    fn odd_dimensions_rejected() {
        assert!(matches!(
            tokenize_array(&Array2::<f64>::zeros((5, 4))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn untokenize_places_first_token() {
        let mut tokens = Array2::<f64>::zeros((4, 4));
        tokens.row_mut(0).assign(&ndarray::arr1(&[1.0, 2.0, 3.0, 4.0]));
        let img = untokenize(&TokenGrid {
            tokens,
            grid_h: 2,
            grid_w: 2,
        })
        .unwrap();
        assert_eq!(img[[0, 0]], 1.0);
        assert_eq!(img[[0, 1]], 2.0);
        assert_eq!(img[[1, 0]], 3.0);
        assert_eq!(img[[1, 1]], 4.0);
        assert_eq!(img.iter().filter(|&&v| v != 0.0).count(), 4);
        let zero = untokenize(&TokenGrid {
            tokens: Array2::<f64>::zeros((6, 4)),
            grid_h: 2,
            grid_w: 3,
        })
        .unwrap();
        assert_eq!(zero, Array2::<f64>::zeros((4, 6)));
    }

    #[test]
    fn inconsistent_grid_rejected() {
        let g = TokenGrid {
            tokens: Array2::<f64>::zeros((5, 4)),
            grid_h: 2,
            grid_w: 2,
        };
        assert!(matches!(untokenize(&g), Err(Error::Shape(_))));
    }

    #[test]
    fn mask_counts() {
        let m = sample_mask(1024, 0.7, 1).unwrap();
        assert_eq!(m.hidden_count(), 717);
        assert_eq!(m.visible_indices().len(), 307);
        assert_eq!(sample_mask(10, 0.0, 1).unwrap().hidden_count(), 0);
        assert_eq!(sample_mask(10, 0.25, 1).unwrap().hidden_count(), 3);
        assert!(matches!(sample_mask(10, 1.0, 1), Err(Error::Parameter(_))));
        assert!(matches!(sample_mask(10, -0.1, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn mask_determinism() {
        assert_eq!(sample_mask(1024, 0.7, 9).unwrap(), sample_mask(1024, 0.7, 9).unwrap());
        assert_ne!(
            sample_mask(1024, 0.7, 9).unwrap().visible,
            sample_mask(1024, 0.7, 10).unwrap().visible
        );
    }

    #[test]
    fn mask_uniformity() {
        let mut hits = [0usize; 16];
        let draws = 10_000;
        for seed in 0..draws {
            let m = sample_mask(16, 0.5, seed).unwrap();
            for k in m.hidden_indices() {
                hits[k] += 1;
            }
        }
        for h in hits {
            let f = h as f64 / draws as f64;
            assert!((f - 0.5).abs() <= 0.02, "hidden frequency {f}");
        }
    }

    #[test]
    fn curriculum_values() {
        let s = CurriculumSchedule::default();
        for e in 0..5 {
            assert_eq!(mask_ratio_at(&s, e).unwrap(), 0.5);
        }
        assert_eq!(mask_ratio_at(&s, 30).unwrap(), 0.7);
        assert_eq!(mask_ratio_at(&s, 499).unwrap(), 0.7);
        // 0.5 + 0.2 * (1 - cos(pi * 12 / 25)) / 2 evaluated independently
        assert!((mask_ratio_at(&s, 17).unwrap() - 0.593_720_948_047_068_7).abs() < 1e-9);
        assert!((mask_ratio_at(&s, 18).unwrap() - 0.606_279_051_952_931_3).abs() < 1e-9);
        assert!(matches!(mask_ratio_at(&s, -1), Err(Error::Parameter(_))));
        let fixed = CurriculumSchedule::fixed();
        assert!((0..50).all(|e| mask_ratio_at(&fixed, e).unwrap() == 0.7));
    }

    proptest! {
        #[test]
        fn roundtrip(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Array2::from_shape_fn((2 * h, 2 * w), |_| rng.gen::<f64>());
            let g = tokenize_array(&p).unwrap();
            prop_assert_eq!(untokenize(&g).unwrap(), p);
        }

        #[test]
        fn hidden_count_exact(len in 1usize..3000, ratio in 0.0f64..0.999, seed in any::<u64>()) {
            let m = sample_mask(len, ratio, seed).unwrap();
            prop_assert_eq!(m.hidden_count(), (ratio * len as f64).round() as usize);
        }

        #[test]
        fn curriculum_monotone(a in 0i64..600, b in 0i64..600) {
            let s = CurriculumSchedule::default();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(mask_ratio_at(&s, lo).unwrap() <= mask_ratio_at(&s, hi).unwrap());
        }
    }
}
