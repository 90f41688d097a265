//! Fréchet distance between Gaussian fits of patch feature embeddings.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Deterministic map from one patch to a fixed-length feature vector.
pub trait FeatureExtractor: Sync {
    fn id(&self) -> &str;
    fn features(&self, patch: &ArrayView2<f64>) -> Vec<f64>;
}

/// Frozen random convolution bank (`fid-rand-v1`): 5×5 filters at stride 2,
/// ReLU, then per-filter spatial mean and standard deviation.
#[derive(Clone, Debug)]
pub struct RandomConvFeatures {
    kernel: usize,
    stride: usize,
    filters: Vec<Array2<f64>>,
    biases: Vec<f64>,
}

impl RandomConvFeatures {
    pub const ID: &'static str = "fid-rand-v1";
    const SEED: u64 = 0x0F1D_5EED;

    pub fn new() -> Self {
        let (kernel, count) = (5, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(Self::SEED);
        let w = Normal::new(0.0, 1.0 / kernel as f64).expect("valid std");
        let b = Normal::new(0.0, 0.1).expect("valid std");
        let filters = (0..count)
            .map(|_| Array2::from_shape_fn((kernel, kernel), |_| w.sample(&mut rng)))
            .collect();
        let biases = (0..count).map(|_| b.sample(&mut rng)).collect();
        Self {
            kernel,
            stride: 2,
            filters,
            biases,
        }
    }
}

impl Default for RandomConvFeatures {
    fn default() -> Self {
        Self::new()
    }
}

impl FeatureExtractor for RandomConvFeatures {
    fn id(&self) -> &str {
        Self::ID
    }

    fn features(&self, patch: &ArrayView2<f64>) -> Vec<f64> {
        let (h, w) = patch.dim();
        let k = self.kernel;
        let mut out = Vec::with_capacity(2 * self.filters.len());
        for (f, &bias) in self.filters.iter().zip(&self.biases) {
            let mut acts = Vec::new();
            for i in (0..h.saturating_sub(k - 1)).step_by(self.stride) {
                for j in (0..w.saturating_sub(k - 1)).step_by(self.stride) {
                    let window = patch.slice(ndarray::s![i..i + k, j..j + k]);
                    let z = (&window * f).sum() + bias;
                    acts.push(z.max(0.0));
                }
            }
            let n = acts.len().max(1) as f64;
            let mean = acts.iter().sum::<f64>() / n;
            let var = acts.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            out.push(mean);
            out.push(var.sqrt());
        }
        out
    }
}

/// Mean and unbiased covariance of feature rows (zero covariance for one row).
pub fn gaussian_fit(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = features.len();
    if n == 0 {
        return Err(Error::Parameter("FID needs non-empty patch sets".into()));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape("feature vectors differ in length".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.transpose() * &centered / denom;
    if cov.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("feature statistics are not finite".into()));
    }
    Ok((mean, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa Σb)^{1/2})`, evaluated through the
/// symmetric form `(√Σa Σb √Σa)^{1/2}` with negative eigenvalues clipped.
pub fn frechet_distance(
    (mu_a, cov_a): &(DVector<f64>, DMatrix<f64>),
    (mu_b, cov_b): &(DVector<f64>, DMatrix<f64>),
) -> Result<f64> {
    if mu_a.len() != mu_b.len() {
        return Err(Error::Shape("feature dimensions differ".into()));
    }
    let root_a = sym_sqrt(cov_a);
    let mut inner = &root_a * cov_b * &root_a;
    inner = (&inner + inner.transpose()) * 0.5;
    let tr_cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let value = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * tr_cross;
    if !value.is_finite() {
        return Err(Error::Numeric("Fréchet distance is not finite".into()));
    }
    Ok(value.max(0.0))
}

pub fn fid<E: FeatureExtractor + ?Sized>(
    set_a: &[Array2<f64>],
    set_b: &[Array2<f64>],
    extractor: &E,
) -> Result<f64> {
    let feats = |set: &[Array2<f64>]| set.iter().map(|p| extractor.features(&p.view())).collect::<Vec<_>>();
    frechet_distance(&gaussian_fit(&feats(set_a))?, &gaussian_fit(&feats(set_b))?)
}
