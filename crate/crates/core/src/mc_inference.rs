//! Monte Carlo mask-ensemble inference: repeated reconstructions under
//! independent random masks, reduced to a per-pixel mean and population
//! standard deviation.

use ndarray::{Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_io::{denormalize, PatchSample, VELOCITY_SCALE};
use crate::mae_model::MaeModel;
use crate::patching::{sample_mask, tokenize, untokenize, MaskRealization, TokenGrid, MICRO_PATCH};
use crate::scalar::Scalar;

/// How a full field is assembled from decoder output and the input patch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    /// Valid pixels of visible tokens are copied from the input; everything
    /// else comes from the decoder.
    #[default]
    PasteVisible,
    /// Decoder output everywhere.
    FullDecode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub members: usize,
    pub base_seed: u64,
    pub composition: Composition,
    pub mask_ratio: f64,
    /// Clamp reconstructions to ±[`VELOCITY_SCALE`] m/s after denormalizing.
    pub clamp_output: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            members: 50,
            base_seed: 0,
            composition: Composition::PasteVisible,
            mask_ratio: 0.7,
            clamp_output: true,
        }
    }
}

/// Anything that maps a token grid and mask to per-token predictions in
/// normalized units. Implemented by the trained model; tests use stubs.
pub trait TokenPredictor<T>: Sync {
    fn predict(&self, grid: &TokenGrid<T>, mask: &MaskRealization) -> Result<Array2<T>>;
}

impl<T: Scalar> TokenPredictor<T> for MaeModel<T> {
    fn predict(&self, grid: &TokenGrid<T>, mask: &MaskRealization) -> Result<Array2<T>> {
        Ok(self.forward(grid, mask)?.predicted_tokens)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult<T> {
    /// Posterior mean, m/s.
    pub mean: Array2<T>,
    /// Population standard deviation across members, m/s.
    pub sigma: Array2<T>,
    pub n_members: usize,
    pub member_seeds: Vec<u64>,
}

/// One reconstruction in m/s under an explicit mask.
pub fn reconstruct_with_mask<T: Scalar, P: TokenPredictor<T> + ?Sized>(
    patch: &PatchSample<T>,
    predictor: &P,
    mask: &MaskRealization,
    config: &InferenceConfig,
) -> Result<Array2<T>> {
    let grid = tokenize(patch)?;
    let pred = predictor.predict(&grid, mask)?;
    if pred.dim() != grid.tokens.dim() {
        return Err(Error::Shape(format!(
            "predictor returned {:?}, expected {:?}",
            pred.dim(),
            grid.tokens.dim()
        )));
    }
    let mut out = untokenize(&TokenGrid {
        tokens: pred,
        grid_h: grid.grid_h,
        grid_w: grid.grid_w,
    })?;
    if config.composition == Composition::PasteVisible {
        for k in mask.visible_indices() {
            let (ti, tj) = (k / grid.grid_w, k % grid.grid_w);
            for di in 0..MICRO_PATCH {
                for dj in 0..MICRO_PATCH {
                    let px = [ti * MICRO_PATCH + di, tj * MICRO_PATCH + dj];
                    if patch.validity[px] {
                        out[px] = patch.values[px];
                    }
                }
            }
        }
    }
    let bound = T::of(VELOCITY_SCALE);
    out.mapv_inplace(|x| {
        let v = denormalize(x);
        if config.clamp_output {
            v.max(-bound).min(bound)
        } else {
            v
        }
    });
    Ok(out)
}

/// One reconstruction in m/s under the mask drawn from `mask_seed`.
pub fn reconstruct_once<T: Scalar, P: TokenPredictor<T> + ?Sized>(
    patch: &PatchSample<T>,
    predictor: &P,
    mask_seed: u64,
    config: &InferenceConfig,
) -> Result<Array2<T>> {
    let tokens = (patch.height() / MICRO_PATCH) * (patch.width() / MICRO_PATCH);
    let mask = sample_mask(tokens, config.mask_ratio, mask_seed)?;
    reconstruct_with_mask(patch, predictor, &mask, config)
}

/// Seeds `base_seed, base_seed + 1, …` for `n` members.
pub fn member_seeds(base_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base_seed.wrapping_add(i)).collect()
}

/// All member reconstructions, in seed order.
pub fn ensemble_members<T: Scalar, P: TokenPredictor<T> + ?Sized>(
    patch: &PatchSample<T>,
    predictor: &P,
    seeds: &[u64],
    config: &InferenceConfig,
) -> Result<Vec<Array2<T>>> {
    seeds
        .par_iter()
        .map(|&s| reconstruct_once(patch, predictor, s, config))
        .collect()
}

fn tree_sum<T: Scalar>(arrays: &[Array2<T>]) -> Array2<T> {
    match arrays {
        [] => unreachable!("caller guarantees at least one member"),
        [a] => a.clone(),
        _ => {
            let (l, r) = arrays.split_at(arrays.len() / 2);
            tree_sum(l) + tree_sum(r)
        }
    }
}

/// Two-pass mean and population standard deviation with pairwise-tree sums.
pub fn aggregate<T: Scalar>(members: &[Array2<T>], seeds: Vec<u64>) -> Result<EnsembleResult<T>> {
    let n = members.len();
    if n == 0 {
        return Err(Error::Parameter("ensemble needs at least one member".into()));
    }
    if seeds.len() != n {
        return Err(Error::Parameter(format!("{} seeds for {n} members", seeds.len())));
    }
    let dim = members[0].dim();
    if members.iter().any(|m| m.dim() != dim) {
        return Err(Error::Shape("ensemble members differ in shape".into()));
    }
    // shifting by the first member makes pixels on which every member
    // agrees come out with exactly that value and exactly zero spread
    let base = &members[0];
    let inv_n = T::one() / T::of(n as f64);
    let shifted: Vec<Array2<T>> = members.iter().map(|m| m - base).collect();
    let offset = tree_sum(&shifted) * inv_n;
    let sq: Vec<Array2<T>> = shifted
        .iter()
        .map(|d| {
            let mut d = d - &offset;
            d.mapv_inplace(|v| v * v);
            d
        })
        .collect();
    let mut sigma = tree_sum(&sq) * inv_n;
    sigma.mapv_inplace(|v| v.max(T::zero()).sqrt());
    let mean = base + &offset;
    Ok(EnsembleResult {
        mean,
        sigma,
        n_members: n,
        member_seeds: seeds,
    })
}

pub fn ensemble<T: Scalar, P: TokenPredictor<T> + ?Sized>(
    patch: &PatchSample<T>,
    predictor: &P,
    config: &InferenceConfig,
) -> Result<EnsembleResult<T>> {
    if config.members < 1 {
        return Err(Error::Parameter("ensemble size must be at least 1".into()));
    }
    let seeds = member_seeds(config.base_seed, config.members);
    let members = ensemble_members(patch, predictor, &seeds, config)?;
    aggregate(&members, seeds)
}

/// Pixelwise |mean − truth|.
pub fn absolute_error<T: Scalar>(mean: &Array2<T>, truth: &Array2<T>) -> Array2<T> {
    let mut e = Array2::zeros(mean.dim());
    Zip::from(&mut e)
        .and(mean)
        .and(truth)
        .for_each(|e, &m, &t| *e = (m - t).abs());
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mae_model::ModelConfig;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Emits a constant value per call, cycling through a list keyed by mask seed.
    struct SeedValue(Vec<(u64, f64)>);

    impl TokenPredictor<f64> for SeedValue {
        fn predict(&self, grid: &TokenGrid<f64>, mask: &MaskRealization) -> Result<Array2<f64>> {
            let v = self.0.iter().find(|(s, _)| *s == mask.seed).map(|p| p.1).unwrap_or(0.0);
            Ok(Array2::from_elem(grid.tokens.dim(), v))
        }
    }

    fn patch(size: usize, seed: u64) -> PatchSample<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PatchSample::from_values(Array2::from_shape_fn((size, size), |_| rng.gen_range(-0.9..0.9)))
    }

    fn tiny_model() -> MaeModel<f64> {
        let cfg = ModelConfig {
            encoder_layers: 1,
            decoder_layers: 1,
            encoder_dim: 8,
            decoder_dim: 8,
            encoder_heads: 2,
            decoder_heads: 2,
            mlp_ratio: 2.0,
            ..ModelConfig::default()
        };
        MaeModel::new(cfg, 3).unwrap()
    }

    #[test]
    fn two_member_population_sigma() {
        // normalized 0.2 and 0.6 become 1 and 3 m/s
        let stub = SeedValue(vec![(10, 0.2), (11, 0.6)]);
        let config = InferenceConfig {
            members: 2,
            base_seed: 10,
            composition: Composition::FullDecode,
            ..InferenceConfig::default()
        };
        let r = ensemble(&patch(4, 0), &stub, &config).unwrap();
        assert!(r.mean.iter().all(|&m| (m - 2.0).abs() < 1e-12));
        assert!(r.sigma.iter().all(|&s| (s - 1.0).abs() < 1e-12));
        assert_eq!(r.member_seeds, vec![10, 11]);
    }

    #[test]
    fn aggregate_exact_on_integers() {
        let members = vec![array![[1.0, 5.0]], array![[3.0, 5.0]]];
        let r = aggregate(&members, vec![0, 1]).unwrap();
        assert_eq!(r.mean, array![[2.0, 5.0]]);
        assert_eq!(r.sigma, array![[1.0, 0.0]]);
    }

    #[test]
    fn single_member_has_zero_sigma() {
        let config = InferenceConfig {
            members: 1,
            ..InferenceConfig::default()
        };
        let r = ensemble(&patch(8, 1), &tiny_model(), &config).unwrap();
        assert!(r.sigma.iter().all(|&s| s == 0.0));
        assert_eq!(r.n_members, 1);
    }

    #[test]
    fn zero_members_rejected() {
        let config = InferenceConfig {
            members: 0,
            ..InferenceConfig::default()
        };
        assert!(matches!(ensemble(&patch(4, 1), &tiny_model(), &config), Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_ratio_paste_visible_returns_input() {
        let p = patch(8, 2);
        let config = InferenceConfig {
            mask_ratio: 0.0,
            ..InferenceConfig::default()
        };
        let out = reconstruct_once(&p, &tiny_model(), 4, &config).unwrap();
        assert_eq!(out, p.physical());
    }

    #[test]
    fn invalid_pixels_always_come_from_decoder() {
        let mut p = patch(4, 3);
        p.validity[[0, 0]] = false;
        p.values[[0, 0]] = 0.0;
        let stub = SeedValue(vec![(0, 0.5)]);
        let config = InferenceConfig {
            mask_ratio: 0.0,
            ..InferenceConfig::default()
        };
        let out = reconstruct_once(&p, &stub, 0, &config).unwrap();
        assert!((out[[0, 0]] - 2.5).abs() < 1e-12);
        assert!((out[[1, 1]] - p.values[[1, 1]] * 5.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_is_deterministic_and_clamped() {
        let p = patch(8, 4);
        let model = tiny_model();
        let config = InferenceConfig::default();
        let a = reconstruct_once(&p, &model, 9, &config).unwrap();
        let b = reconstruct_once(&p, &model, 9, &config).unwrap();
        assert_eq!(a, b);
        let huge = SeedValue(vec![(1, 40.0)]);
        let full = InferenceConfig {
            composition: Composition::FullDecode,
            ..config
        };
        let c = reconstruct_once(&p, &huge, 1, &full).unwrap();
        assert!(c.iter().all(|&v| v.abs() <= 5.0));
    }

    #[test]
    fn always_visible_pixels_have_zero_sigma() {
        let p = patch(4, 5);
        let model = tiny_model();
        let config = InferenceConfig::default();
        // token 0 visible in every member, the others vary
        let masks = [
            vec![true, false, true, false],
            vec![true, true, false, false],
            vec![true, false, false, true],
        ];
        let members: Vec<_> = masks
            .iter()
            .enumerate()
            .map(|(s, v)| {
                let m = MaskRealization::from_visible(v.clone(), s as u64);
                reconstruct_with_mask(&p, &model, &m, &config).unwrap()
            })
            .collect();
        let r = aggregate(&members, vec![0, 1, 2]).unwrap();
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(r.sigma[[i, j]], 0.0);
        }
        assert!(r.sigma.iter().any(|&s| s > 0.0));
    }

    #[test]
    fn seed_permutation_leaves_result_unchanged() {
        let p = patch(8, 6);
        let model = tiny_model();
        let config = InferenceConfig::default();
        let seeds = member_seeds(20, 7);
        let mut shuffled = seeds.clone();
        shuffled.reverse();
        shuffled.swap(1, 4);
        let a = aggregate(&ensemble_members(&p, &model, &seeds, &config).unwrap(), seeds.clone()).unwrap();
        let b = aggregate(&ensemble_members(&p, &model, &shuffled, &config).unwrap(), shuffled).unwrap();
        Zip::from(&a.mean).and(&b.mean).for_each(|x, y| assert!((x - y).abs() < 1e-12));
        Zip::from(&a.sigma).and(&b.sigma).for_each(|x, y| assert!((x - y).abs() < 1e-12));
    }
}
