//! Evaluation scores for reconstructions and their uncertainty maps.

pub mod calibration;
pub mod fid;
pub mod image_quality;
pub mod spectral;

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use calibration::{uncertainty_diagnostics, CalibrationReport};
pub use fid::{fid, FeatureExtractor, RandomConvFeatures};
pub use image_quality::{mse, psnr, psnr_from_mse, ssim, SsimParams, DEFAULT_DATA_RANGE};
pub use spectral::{spectral_fidelity, PsdPair, SpectralParams, SpectralReport};

/// Set-level fidelity scores of one reconstructor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub psnr_db: f64,
    pub ssim: f64,
    /// m²/s², pooled over every pixel of every patch.
    pub mse: f64,
    pub fid: f64,
    pub spectral_fidelity: f64,
}

/// PSNR from the pooled MSE, mean per-patch SSIM, pooled MSE.
pub fn image_scores(
    references: &[Array2<f64>],
    tests: &[Array2<f64>],
    ssim_params: &SsimParams,
) -> Result<(f64, f64, f64)> {
    if references.len() != tests.len() || references.is_empty() {
        return Err(Error::Shape(format!(
            "{} references vs {} reconstructions",
            references.len(),
            tests.len()
        )));
    }
    let mut sq = 0.0;
    let mut px = 0usize;
    let mut ssim_sum = 0.0;
    for (r, t) in references.iter().zip(tests) {
        sq += mse(&r.view(), &t.view())? * r.len() as f64;
        px += r.len();
        ssim_sum += ssim(&r.view(), &t.view(), ssim_params)?;
    }
    let pooled = sq / px as f64;
    Ok((
        psnr_from_mse(pooled, ssim_params.data_range)?,
        ssim_sum / references.len() as f64,
        pooled,
    ))
}

/// Everything reported for one reconstructor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub scores: QualityScores,
    pub calibration: Option<CalibrationReport>,
    pub data_range: f64,
    pub fid_extractor: String,
    pub spectral_params: SpectralParams,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "method,psnr_db,ssim,mse,fid,spectral_fidelity";

    pub fn csv_row(&self) -> String {
        let s = &self.scores;
        format!(
            "{},{},{},{},{},{}",
            self.method, s.psnr_db, s.ssim, s.mse, s.fid, s.spectral_fidelity
        )
    }

    /// Flat `key = value` lines, one per scalar.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let s = &self.scores;
        let p = &self.spectral_params;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("method", self.method.clone());
        kv("data_range", self.data_range.to_string());
        kv("fid_extractor", self.fid_extractor.clone());
        kv("psd_estimator", "welch-hann".into());
        kv("psd_max_segment", p.max_segment.to_string());
        kv("psd_overlap", p.overlap.to_string());
        kv("f_cut_hz", p.f_cut_hz.to_string());
        kv("tolerance", p.tolerance.to_string());
        kv("psnr_db", s.psnr_db.to_string());
        kv("ssim", s.ssim.to_string());
        kv("mse", s.mse.to_string());
        kv("fid", s.fid.to_string());
        kv("spectral_fidelity", s.spectral_fidelity.to_string());
        if let Some(c) = &self.calibration {
            kv("pearson_per_patch_mean", c.pearson_per_patch_mean.to_string());
            kv("pearson_per_patch_std", c.pearson_per_patch_std.to_string());
            kv("pearson_patches_excluded", c.patches_excluded.to_string());
            kv("pearson_global", c.pearson_global.to_string());
            kv("spearman_global", c.spearman_global.to_string());
            for (i, m) in c.decile_mae.iter().enumerate() {
                kv(&format!("decile_mae_{i}"), m.to_string());
            }
            for (k, f) in &c.topk_error_capture {
                kv(&format!("topk_capture_{k}pct"), f.to_string());
            }
        }
        out
    }
}

/// Table with a header and one row per report.
pub fn reports_csv(reports: &[MetricsReport]) -> String {
    let mut s = format!("{}\n", MetricsReport::CSV_HEADER);
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}
