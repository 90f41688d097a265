//! How well predicted uncertainty tracks realized error.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOPK_PERCENTS: [f64; 4] = [1.0, 5.0, 10.0, 20.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub pearson_per_patch_mean: f64,
    pub pearson_per_patch_std: f64,
    /// Patches whose correlation is undefined (constant σ or error).
    pub patches_excluded: usize,
    pub excluded_patch_ids: Vec<String>,
    pub pearson_global: f64,
    pub spearman_global: f64,
    /// Mean absolute error in ten equal-count σ bins, lowest σ first.
    pub decile_mae: Vec<f64>,
    /// `(percent, share of total absolute error)` for the highest-σ pixels.
    pub topk_error_capture: Vec<(f64, f64)>,
}

/// Pearson correlation with population moments; `None` if either input is
/// constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.is_empty() || x.len() != y.len() {
        return None;
    }
    // centred on the first sample so constant inputs give exactly zero spread
    let (x0, y0) = (x[0], y[0]);
    let mx = x.iter().map(|v| v - x0).sum::<f64>() / n;
    let my = y.iter().map(|v| v - y0).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - x0 - mx, b - y0 - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Pixel indices ordered by ascending σ, ties kept in index order.
fn ascending_order(sigma: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sigma.len()).collect();
    idx.sort_by(|&a, &b| sigma[a].total_cmp(&sigma[b]));
    idx
}

/// Equal-count σ bins (sizes differ by at most one) and their mean error.
pub fn decile_mae(errors: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    let n = errors.len();
    if n < 10 {
        return Err(Error::Parameter(format!("decile binning needs >= 10 pixels, got {n}")));
    }
    let order = ascending_order(sigma);
    Ok((0..10)
        .map(|b| {
            let bin = &order[b * n / 10..(b + 1) * n / 10];
            bin.iter().map(|&k| errors[k]).sum::<f64>() / bin.len() as f64
        })
        .collect())
}

/// Share of total absolute error held by the top `percent`% of pixels by σ
/// (`ceil` of the pixel count; ties broken by index order).
pub fn topk_capture(errors: &[f64], sigma: &[f64], percent: f64) -> f64 {
    let n = errors.len();
    let total: f64 = errors.iter().sum();
    if n == 0 || total <= 0.0 {
        return 0.0;
    }
    let k = ((percent / 100.0) * n as f64).ceil().min(n as f64) as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    idx[..k].iter().map(|&i| errors[i]).sum::<f64>() / total
}

/// Per-patch and pooled agreement between σ and |error|.
pub fn uncertainty_diagnostics(
    errors: &[Array2<f64>],
    sigmas: &[Array2<f64>],
    patch_ids: &[String],
) -> Result<CalibrationReport> {
    if errors.len() != sigmas.len() || errors.len() != patch_ids.len() {
        return Err(Error::Shape(format!(
            "{} error maps, {} sigma maps, {} ids",
            errors.len(),
            sigmas.len(),
            patch_ids.len()
        )));
    }
    if errors.is_empty() {
        return Err(Error::Parameter("no patches to diagnose".into()));
    }
    let mut per_patch = Vec::new();
    let mut excluded = Vec::new();
    let (mut all_e, mut all_s) = (Vec::new(), Vec::new());
    for ((e, s), id) in errors.iter().zip(sigmas).zip(patch_ids) {
        if e.dim() != s.dim() {
            return Err(Error::Alignment(vec![id.clone()]));
        }
        let ev: Vec<f64> = e.iter().copied().collect();
        let sv: Vec<f64> = s.iter().copied().collect();
        match pearson(&sv, &ev) {
            Some(r) => per_patch.push(r),
            None => excluded.push(id.clone()),
        }
        all_e.extend(ev);
        all_s.extend(sv);
    }
    let (mean, std) = if per_patch.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let n = per_patch.len() as f64;
        let m = per_patch.iter().sum::<f64>() / n;
        let v = per_patch.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n;
        (m, v.sqrt())
    };
    Ok(CalibrationReport {
        pearson_per_patch_mean: mean,
        pearson_per_patch_std: std,
        patches_excluded: excluded.len(),
        excluded_patch_ids: excluded,
        pearson_global: pearson(&all_s, &all_e).unwrap_or(f64::NAN),
        spearman_global: spearman(&all_s, &all_e).unwrap_or(f64::NAN),
        decile_mae: decile_mae(&all_e, &all_s)?,
        topk_error_capture: TOPK_PERCENTS
            .iter()
            .map(|&k| (k, topk_capture(&all_e, &all_s, k)))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn perfect_predictor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let errs: Vec<Array2<f64>> = (0..4)
            .map(|_| Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.0..2.0)))
            .collect();
        let r = uncertainty_diagnostics(&errs, &errs, &ids(4)).unwrap();
        assert!((r.pearson_global - 1.0).abs() < 1e-12);
        assert!((r.spearman_global - 1.0).abs() < 1e-12);
        assert!((r.pearson_per_patch_mean - 1.0).abs() < 1e-12);
        assert!(r.decile_mae.windows(2).all(|w| w[1] > w[0]));
        assert!(r.topk_error_capture[0].1 >= 0.01);
        assert!(r.topk_error_capture.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn independent_sigma_is_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = Array2::from_shape_fn((1000, 1000), |_| rng.gen::<f64>());
        let s = Array2::from_shape_fn((1000, 1000), |_| rng.gen::<f64>());
        let r = uncertainty_diagnostics(&[e], &[s], &ids(1)).unwrap();
        assert!(r.pearson_global.abs() < 0.05);
    }

    #[test]
    fn constant_sigma_patch_excluded() {
        let e = Array2::from_shape_fn((4, 4), |(i, j)| (i + j) as f64);
        let s1 = Array2::from_elem((4, 4), 0.3);
        let s2 = e.clone();
        let r = uncertainty_diagnostics(&[e.clone(), e], &[s1, s2], &ids(2)).unwrap();
        assert_eq!(r.patches_excluded, 1);
        assert_eq!(r.excluded_patch_ids, vec!["p0".to_string()]);
        assert!((r.pearson_per_patch_mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn topk_uses_ceiling() {
        // 150 pixels: 1% -> 2 pixels
        let e: Vec<f64> = (0..150).map(|i| if i >= 148 { 1.0 } else { 0.0 }).collect();
        let s: Vec<f64> = (0..150).map(|i| i as f64).collect();
        assert_eq!(topk_capture(&e, &s, 1.0), 1.0);
    }

    proptest! {
        #[test]
        fn deciles_partition(n in 10usize..500) {
            let order: Vec<usize> = (0..10).map(|b| (b + 1) * n / 10 - b * n / 10).collect();
            prop_assert_eq!(order.iter().sum::<usize>(), n);
            let (lo, hi) = (order.iter().min().unwrap(), order.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }

        #[test]
        fn spearman_matches_rank_difference_formula(seed in 0u64..500) {
            // without ties, rho = 1 - 6 sum d^2 / (n (n^2 - 1))
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 60usize;
            let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let y: Vec<f64> = x.iter().map(|v| v * v + rng.gen_range(0.0..0.5)).collect();
            let rank = |v: &[f64]| {
                let mut r = vec![0usize; v.len()];
                for (pos, i) in {
                    let mut idx: Vec<usize> = (0..v.len()).collect();
                    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
                    idx
                }.into_iter().enumerate() {
                    r[i] = pos;
                }
                r
            };
            let (rx, ry) = (rank(&x), rank(&y));
            let d2: f64 = rx.iter().zip(&ry).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
            let closed = 1.0 - 6.0 * d2 / (n as f64 * ((n * n) as f64 - 1.0));
            let rho = spearman(&x, &y).unwrap();
            prop_assert!((rho - closed).abs() < 1e-12, "{} vs {}", rho, closed);
        }
    }
}
