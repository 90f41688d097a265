//! Welch power spectral densities along time and the low-frequency
//! log-ratio fidelity score built on them.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_io::TimeHeightField;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralParams {
    /// Upper frequency bound in Hz.
    pub f_cut_hz: f64,
    /// Largest accepted |ε_log|.
    pub tolerance: f64,
    /// Segment length cap; the actual length is `min(max_segment, T)`.
    pub max_segment: usize,
    pub overlap: f64,
    /// Bins whose |log10 P_raw| falls below this are skipped.
    pub log_guard: f64,
}

impl Default for SpectralParams {
    fn default() -> Self {
        Self {
            f_cut_hz: 0.01,
            tolerance: 0.5,
            max_segment: 256,
            overlap: 0.5,
            log_guard: 1e-6,
        }
    }
}

/// Raw and reconstructed spectra for one gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdPair {
    pub freqs: Vec<f64>,
    pub p_raw: Vec<f64>,
    pub p_den: Vec<f64>,
    pub gate_index: usize,
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided Welch PSD (density scaling, per-segment mean removal).
/// Returns `(freqs, psd)` with `nperseg / 2 + 1` bins starting at 0 Hz.
pub fn welch(x: &[f64], fs: f64, nperseg: usize, overlap: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if nperseg < 2 || nperseg > x.len() {
        return Err(Error::Parameter(format!(
            "segment length {nperseg} invalid for series of {}",
            x.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Parameter(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    let step = (nperseg - (nperseg as f64 * overlap).floor() as usize).max(1);
    let win = hann(nperseg);
    let scale = 1.0 / (fs * win.iter().map(|w| w * w).sum::<f64>());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nperseg);
    let bins = nperseg / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut segments = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); nperseg];
    let mut start = 0;
    while start + nperseg <= x.len() {
        let seg = &x[start..start + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        for ((b, &v), &w) in buf.iter_mut().zip(seg).zip(&win) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let last = bins - 1;
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let one_sided = if k == 0 || (nperseg % 2 == 0 && k == last) { 1.0 } else { 2.0 };
            a * scale * one_sided / segments as f64
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 * fs / nperseg as f64).collect();
    Ok((freqs, psd))
}

/// Per-gate and pooled pass counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateFidelity {
    pub gate_index: usize,
    pub included_bins: usize,
    pub passing_bins: usize,
    pub excluded_bins: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Passing fraction pooled over all included bins of all gates.
    pub fidelity: f64,
    pub per_gate: Vec<GateFidelity>,
    pub excluded_bins: usize,
    pub pairs: Vec<PsdPair>,
}

/// `(log10 P_den − log10 P_raw) / log10 P_raw`.
pub fn log_ratio_error(p_raw: f64, p_den: f64) -> f64 {
    let lr = p_raw.log10();
    (p_den.log10() - lr) / lr
}

/// Scores precomputed spectra over nonzero bins with `f ≤ f_cut_hz`.
pub fn fidelity_from_pairs(pairs: Vec<PsdPair>, params: &SpectralParams) -> Result<SpectralReport> {
    let mut per_gate = Vec::with_capacity(pairs.len());
    let (mut inc, mut pass, mut exc) = (0, 0, 0);
    for pair in &pairs {
        if pair.freqs.len() != pair.p_raw.len() || pair.freqs.len() != pair.p_den.len() {
            return Err(Error::Shape(format!("gate {}: spectra lengths differ", pair.gate_index)));
        }
        let first = pair.freqs.iter().copied().find(|&f| f > 0.0);
        match first {
            Some(f1) if params.f_cut_hz >= f1 => {}
            _ => {
                return Err(Error::Parameter(format!(
                    "f_cut {} Hz is below the first nonzero bin {:?}",
                    params.f_cut_hz, first
                )))
            }
        }
        let mut g = GateFidelity {
            gate_index: pair.gate_index,
            included_bins: 0,
            passing_bins: 0,
            excluded_bins: 0,
            fraction: 0.0,
        };
        for ((&f, &pr), &pd) in pair.freqs.iter().zip(&pair.p_raw).zip(&pair.p_den) {
            if f <= 0.0 || f > params.f_cut_hz {
                continue;
            }
            if !(pr > 0.0) || pr.log10().abs() < params.log_guard {
                g.excluded_bins += 1;
                continue;
            }
            g.included_bins += 1;
            let e = log_ratio_error(pr, pd);
            if e.abs() <= params.tolerance {
                g.passing_bins += 1;
            }
        }
        g.fraction = if g.included_bins > 0 {
            g.passing_bins as f64 / g.included_bins as f64
        } else {
            f64::NAN
        };
        inc += g.included_bins;
        pass += g.passing_bins;
        exc += g.excluded_bins;
        per_gate.push(g);
    }
    if inc == 0 {
        return Err(Error::Numeric("no spectral bins left to score".into()));
    }
    Ok(SpectralReport {
        fidelity: pass as f64 / inc as f64,
        per_gate,
        excluded_bins: exc,
        pairs,
    })
}

/// Time series of one gate in m/s, rejecting non-finite samples.
fn gate_series<T: Scalar>(field: &TimeHeightField<T>, gate: usize) -> Result<Vec<f64>> {
    let col: Vec<f64> = field.velocity.column(gate).iter().map(|v| v.as_f64()).collect();
    if col.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("gate {gate} contains non-finite samples")));
    }
    Ok(col)
}

/// Welch spectra of both fields at each requested gate.
pub fn psd_pairs<T: Scalar>(
    raw: &TimeHeightField<T>,
    den: &TimeHeightField<T>,
    gates: &[usize],
    params: &SpectralParams,
) -> Result<Vec<PsdPair>> {
    if raw.velocity.dim() != den.velocity.dim() {
        return Err(Error::Shape(format!(
            "raw {:?} vs reconstructed {:?}",
            raw.velocity.dim(),
            den.velocity.dim()
        )));
    }
    let dt = raw.time_step_s;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Metadata("time step of raw field unknown".into()));
    }
    if (den.time_step_s - dt).abs() > 1e-9 * dt {
        return Err(Error::Metadata(format!(
            "time steps differ: {dt} s vs {} s",
            den.time_step_s
        )));
    }
    if gates.is_empty() {
        return Err(Error::Parameter("no gates selected".into()));
    }
    let fs = 1.0 / dt;
    let nperseg = params.max_segment.min(raw.time_len());
    gates
        .iter()
        .map(|&g| {
            if g >= raw.gate_count() {
                return Err(Error::Parameter(format!("gate {g} out of range")));
            }
            let (freqs, p_raw) = welch(&gate_series(raw, g)?, fs, nperseg, params.overlap)?;
            let (_, p_den) = welch(&gate_series(den, g)?, fs, nperseg, params.overlap)?;
            Ok(PsdPair {
                freqs,
                p_raw,
                p_den,
                gate_index: g,
            })
        })
        .collect()
}

pub fn spectral_fidelity<T: Scalar>(
    raw: &TimeHeightField<T>,
    den: &TimeHeightField<T>,
    gates: &[usize],
    params: &SpectralParams,
) -> Result<SpectralReport> {
    fidelity_from_pairs(psd_pairs(raw, den, gates, params)?, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise_field(t: usize, g: usize, seed: u64) -> TimeHeightField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.3).unwrap();
        let v = Array2::from_shape_fn((t, g), |_| n.sample(&mut rng));
        TimeHeightField::new(v, Array2::ones((t, g)), 15.0, 30.0).unwrap()
    }

    #[test]
    fn identity_pair_scores_one() {
        let f = noise_field(2048, 3, 1);
        let r = spectral_fidelity(&f, &f, &[0, 1, 2], &SpectralParams::default()).unwrap();
        assert_eq!(r.fidelity, 1.0);
        assert_eq!(r.per_gate.len(), 3);
        // fs = 1/15 Hz, 256-sample segments: bins 1..=38 lie below 0.01 Hz
        assert_eq!(r.per_gate[0].included_bins + r.per_gate[0].excluded_bins, 38);
    }

    #[test]
    fn squared_spectrum_scores_zero() {
        let f = noise_field(1024, 1, 2);
        let params = SpectralParams::default();
        let mut pairs = psd_pairs(&f, &f, &[0], &params).unwrap();
        pairs[0].p_den = pairs[0].p_raw.iter().map(|p| p * p).collect();
        let r = fidelity_from_pairs(pairs, &params).unwrap();
        assert_eq!(r.fidelity, 0.0);
    }

    #[test]
    fn log_ratio_of_square_is_one() {
        for p in [1e-3, 0.2, 7.0, 123.0] {
            assert!((log_ratio_error(p, p * p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn white_noise_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 2.0).unwrap();
        let x: Vec<f64> = (0..65536).map(|_| n.sample(&mut rng)).collect();
        let fs = 1.0 / 15.0;
        let (freqs, p) = welch(&x, fs, 256, 0.5).unwrap();
        let df = freqs[1] - freqs[0];
        let power: f64 = p.iter().sum::<f64>() * df;
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        assert!((power / var - 1.0).abs() < 0.02, "{power} vs {var}");
    }

    #[test]
    fn sinusoid_peaks_at_its_frequency() {
        let fs = 1.0;
        let x: Vec<f64> = (0..1024).map(|i| (2.0 * std::f64::consts::PI * 0.125 * i as f64).sin()).collect();
        let (freqs, p) = welch(&x, fs, 256, 0.5).unwrap();
        let peak = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((freqs[peak] - 0.125).abs() < 1e-12);
    }

    #[test]
    fn cut_below_first_bin_rejected() {
        let f = noise_field(512, 1, 4);
        let params = SpectralParams {
            f_cut_hz: 1e-5,
            ..SpectralParams::default()
        };
        assert!(matches!(spectral_fidelity(&f, &f, &[0], &params), Err(Error::Parameter(_))));
    }

    #[test]
    fn mismatched_time_step_is_metadata_error() {
        let a = noise_field(512, 1, 5);
        let b = TimeHeightField::new(a.velocity.clone(), a.intensity.clone(), 10.0, 30.0).unwrap();
        assert!(matches!(
            spectral_fidelity(&a, &b, &[0], &SpectralParams::default()),
            Err(Error::Metadata(_))
        ));
    }
}
