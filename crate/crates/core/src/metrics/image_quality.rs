//! Pixel-wise fidelity scores: MSE, PSNR and Gaussian-window SSIM.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default PSNR/SSIM dynamic range in m/s (span of the clamped velocities).
pub const DEFAULT_DATA_RANGE: f64 = 10.0;

fn same_shape<T>(a: &ArrayView2<T>, b: &ArrayView2<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

pub fn mse<T: Scalar>(reference: &ArrayView2<T>, test: &ArrayView2<T>) -> Result<f64> {
    same_shape(reference, test)?;
    if reference.is_empty() {
        return Err(Error::Shape("empty image".into()));
    }
    let sum: f64 = reference
        .iter()
        .zip(test.iter())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(sum / reference.len() as f64)
}

/// `10·log10(range² / mse)`; `+∞` when the images are identical.
pub fn psnr_from_mse(mse: f64, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::Parameter(format!("data_range must be positive, got {data_range}")));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

pub fn psnr<T: Scalar>(reference: &ArrayView2<T>, test: &ArrayView2<T>, data_range: f64) -> Result<f64> {
    psnr_from_mse(mse(reference, test)?, data_range)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub data_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 7,
            sigma: 1.5,
            data_range: DEFAULT_DATA_RANGE,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window / 2) as f64;
    let raw: Vec<f64> = (0..window)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output shape (H − k + 1, W − k + 1).
fn filter_valid(a: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let k = taps.len();
    let (h, w) = a.dim();
    let rows = Array2::from_shape_fn((h, w + 1 - k), |(i, j)| {
        taps.iter().enumerate().map(|(t, &c)| c * a[[i, j + t]]).sum::<f64>()
    });
    Array2::from_shape_fn((h + 1 - k, w + 1 - k), |(i, j)| {
        taps.iter().enumerate().map(|(t, &c)| c * rows[[i + t, j]]).sum::<f64>()
    })
}

/// Local SSIM map over fully covered window positions.
pub fn ssim_map<T: Scalar>(
    reference: &ArrayView2<T>,
    test: &ArrayView2<T>,
    params: &SsimParams,
) -> Result<Array2<f64>> {
    same_shape(reference, test)?;
    let k = params.window;
    if k % 2 == 0 || k == 0 {
        return Err(Error::Parameter(format!("SSIM window must be odd, got {k}")));
    }
    let (h, w) = reference.dim();
    if h < k || w < k {
        return Err(Error::Shape(format!("image {h}x{w} smaller than SSIM window {k}")));
    }
    let x = reference.mapv(|v| v.as_f64());
    let y = test.mapv(|v| v.as_f64());
    let taps = gaussian_taps(k, params.sigma);
    let mx = filter_valid(&x, &taps);
    let my = filter_valid(&y, &taps);
    let sxx = filter_valid(&(&x * &x), &taps);
    let syy = filter_valid(&(&y * &y), &taps);
    let sxy = filter_valid(&(&x * &y), &taps);
    let c1 = (params.k1 * params.data_range).powi(2);
    let c2 = (params.k2 * params.data_range).powi(2);
    Ok(Array2::from_shape_fn(mx.dim(), |p| {
        let (ux, uy) = (mx[p], my[p]);
        let vx = sxx[p] - ux * ux;
        let vy = syy[p] - uy * uy;
        let cov = sxy[p] - ux * uy;
        ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    }))
}

/// Mean local SSIM.
pub fn ssim<T: Scalar>(reference: &ArrayView2<T>, test: &ArrayView2<T>, params: &SsimParams) -> Result<f64> {
    let map = ssim_map(reference, test, params)?;
    Ok(map.sum() / map.len() as f64)
}
