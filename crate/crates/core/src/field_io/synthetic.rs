//! Deterministic synthetic Doppler-velocity fields.
//!
//! The analytic template is a smooth background flow plus Gaussian
//! updraft/downdraft cores and tilted shear bands. The observed field adds
//! Gaussian noise and low-intensity dropout regions whose total area matches
//! `dropout_fraction` exactly (up to rounding).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TimeHeightField;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const STREAM_TEMPLATE: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub time_steps: usize,
    pub gates: usize,
    pub time_step_s: f64,
    pub gate_spacing_m: f64,
    /// Structures are centred below this gate (the convective boundary layer).
    pub structure_top_gate: usize,
    pub background_amplitude: f64,
    pub cores_per_1000_steps: f64,
    pub core_amplitude_max: f64,
    pub core_width_t: [f64; 2],
    pub core_width_g: [f64; 2],
    pub shear_bands_per_1000_steps: f64,
    pub shear_amplitude: f64,
    pub shear_width_g: f64,
    pub noise_sigma: f64,
    pub dropout_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            time_steps: 5760,
            gates: 320,
            time_step_s: 15.0,
            gate_spacing_m: 30.0,
            structure_top_gate: 64,
            background_amplitude: 0.5,
            cores_per_1000_steps: 60.0,
            core_amplitude_max: 3.5,
            core_width_t: [4.0, 14.0],
            core_width_g: [4.0, 16.0],
            shear_bands_per_1000_steps: 6.0,
            shear_amplitude: 1.2,
            shear_width_g: 2.5,
            noise_sigma: 0.6,
            dropout_fraction: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.time_steps == 0 || self.gates == 0 {
            return Err(Error::Parameter("synthetic dimensions must be positive".into()));
        }
        if !(self.time_step_s > 0.0 && self.gate_spacing_m > 0.0) {
            return Err(Error::Parameter("synthetic sampling steps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_fraction) {
            return Err(Error::Parameter(format!(
                "dropout_fraction must lie in [0, 1), got {}",
                self.dropout_fraction
            )));
        }
        if self.noise_sigma < 0.0 || self.core_width_t[0] <= 0.0 || self.core_width_g[0] <= 0.0 {
            return Err(Error::Parameter("noise and widths must be non-negative/positive".into()));
        }
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn count_for(rng: &mut ChaCha8Rng, per_1000: f64, steps: usize) -> usize {
    let expected = per_1000 * steps as f64 / 1000.0;
    let base = expected.floor();
    base as usize + usize::from(rng.gen::<f64>() < expected - base)
}

/// Adds `amp · exp(-½((t-tc)/st)² - ½((g-gc)/sg)²)` within a 4σ box.
fn add_gaussian(out: &mut Array2<f64>, tc: f64, gc: f64, st: f64, sg: f64, amp: f64) {
    let (t_len, g_len) = out.dim();
    let t0 = (tc - 4.0 * st).floor().max(0.0) as usize;
    let t1 = ((tc + 4.0 * st).ceil() as usize).min(t_len.saturating_sub(1));
    let g0 = (gc - 4.0 * sg).floor().max(0.0) as usize;
    let g1 = ((gc + 4.0 * sg).ceil() as usize).min(g_len.saturating_sub(1));
    if tc + 4.0 * st < 0.0 || gc + 4.0 * sg < 0.0 || t0 >= t_len || g0 >= g_len {
        return;
    }
    for t in t0..=t1 {
        let dt = (t as f64 - tc) / st;
        for g in g0..=g1 {
            let dg = (g as f64 - gc) / sg;
            out[[t, g]] += amp * (-0.5 * (dt * dt + dg * dg)).exp();
        }
    }
}

/// Noise-free structure field in m/s (unclamped).
pub fn synthetic_template(spec: &SyntheticSpec, seed: u64) -> Result<Array2<f64>> {
    spec.validate()?;
    let (t_len, g_len) = (spec.time_steps, spec.gates);
    let mut rng = stream(seed, STREAM_TEMPLATE);
    let top = spec.structure_top_gate.clamp(1, g_len) as f64;

    // background: a few slow travelling modes with a boundary-layer envelope
    let modes: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..1.0) * spec.background_amplitude,
                rng.gen_range(150.0..600.0),
                rng.gen_range(0.5..2.0) * top,
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut v = Array2::from_shape_fn((t_len, g_len), |(t, g)| {
        let envelope = (std::f64::consts::PI * (g as f64 + 0.5) / (2.0 * top)).sin().abs();
        modes
            .iter()
            .map(|&(a, pt, pg, ph)| {
                a * envelope
                    * (std::f64::consts::TAU * (t as f64 / pt + g as f64 / pg) + ph).sin()
            })
            .sum::<f64>()
    });

    let n_cores = count_for(&mut rng, spec.cores_per_1000_steps, t_len);
    for _ in 0..n_cores {
        let tc = rng.gen_range(0.0..t_len as f64);
        let gc = rng.gen_range(0.0..top);
        let st = rng.gen_range(spec.core_width_t[0]..=spec.core_width_t[1].max(spec.core_width_t[0]));
        let sg = rng.gen_range(spec.core_width_g[0]..=spec.core_width_g[1].max(spec.core_width_g[0]));
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let amp = sign * rng.gen_range(0.3..=1.0) * spec.core_amplitude_max;
        add_gaussian(&mut v, tc, gc, st, sg, amp);
    }

    let n_bands = count_for(&mut rng, spec.shear_bands_per_1000_steps, t_len);
    for _ in 0..n_bands {
        let t_start = rng.gen_range(0.0..t_len as f64);
        let length = rng.gen_range(40.0..160.0);
        let g_start = rng.gen_range(0.0..top);
        let slope = rng.gen_range(-0.4..0.4); // gates per profile
        let amp = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * spec.shear_amplitude;
        let t0 = t_start.max(0.0) as usize;
        let t1 = ((t_start + length) as usize).min(t_len);
        for t in t0..t1 {
            let centre = g_start + slope * (t as f64 - t_start);
            let taper = (std::f64::consts::PI * (t as f64 - t_start) / length).sin();
            for g in 0..g_len {
                let d = (g as f64 - centre) / spec.shear_width_g;
                if d.abs() < 4.0 {
                    // antisymmetric profile: a velocity jump across the band
                    v[[t, g]] += amp * taper * d * (-0.5 * d * d).exp();
                }
            }
        }
    }
    Ok(v)
}

fn dropout_mask(spec: &SyntheticSpec, seed: u64) -> Array2<bool> {
    let (t_len, g_len) = (spec.time_steps, spec.gates);
    let n = t_len * g_len;
    let target = (spec.dropout_fraction * n as f64).round() as usize;
    if target == 0 {
        return Array2::from_elem((t_len, g_len), false);
    }
    let mut rng = stream(seed, STREAM_DROPOUT);
    // smooth random surface; its top `target` pixels form contiguous gaps
    let mut surface = Array2::<f64>::zeros((t_len, g_len));
    let bumps = (n / 600).max(4);
    for _ in 0..bumps {
        let tc = rng.gen_range(0.0..t_len as f64);
        let gc = rng.gen_range(0.0..g_len as f64);
        let st = rng.gen_range(3.0..20.0);
        let sg = rng.gen_range(2.0..10.0);
        add_gaussian(&mut surface, tc, gc, st, sg, rng.gen_range(0.5..1.0));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let flat = surface.as_slice().expect("standard layout");
    order.sort_by(|&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &k in &order[..target] {
        mask[k] = true;
    }
    Array2::from_shape_vec((t_len, g_len), mask).expect("shape")
}

fn intensity_for(spec: &SyntheticSpec, dropout: &Array2<bool>, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, STREAM_DROPOUT);
    rng.set_word_pos(1 << 40);
    let decay = spec.gates as f64 / 2.0 + 1.0;
    let mut out = Array2::zeros(dropout.dim());
    for ((t, g), i) in out.indexed_iter_mut() {
        let u: f64 = rng.gen();
        *i = if dropout[[t, g]] {
            0.004 * u
        } else {
            (0.02 + 0.08 * (-(g as f64) / decay).exp()) * (0.8 + 0.4 * u)
        };
    }
    out
}

/// Observed field: template + noise, with dropout regions flagged through a
/// sub-threshold intensity.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec, seed: u64) -> Result<TimeHeightField<T>> {
    let mut v = synthetic_template(spec, seed)?;
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::Parameter(format!("noise_sigma: {e}")))?;
        let mut rng = stream(seed, STREAM_NOISE);
        v.mapv_inplace(|x| x + normal.sample(&mut rng));
    }
    let dropout = dropout_mask(spec, seed);
    let intensity = intensity_for(spec, &dropout, seed);
    TimeHeightField::new(v.mapv(T::of), intensity.mapv(T::of), spec.time_step_s, spec.gate_spacing_m)
}

/// Clean reference matching [`generate_synthetic`]: the template with unit
/// intensity everywhere.
pub fn synthetic_truth<T: Scalar>(spec: &SyntheticSpec, seed: u64) -> Result<TimeHeightField<T>> {
    let v = synthetic_template(spec, seed)?;
    let ones = Array2::from_elem(v.dim(), T::one());
    TimeHeightField::new(v.mapv(T::of), ones, spec.time_step_s, spec.gate_spacing_m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            time_steps: 256,
            gates: 64,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a: TimeHeightField<f64> = generate_synthetic(&small(), 3).unwrap();
        let b: TimeHeightField<f64> = generate_synthetic(&small(), 3).unwrap();
        assert_eq!(a, b);
        let c: TimeHeightField<f64> = generate_synthetic(&small(), 4).unwrap();
        assert_ne!(a.velocity, c.velocity);
    }

    #[test]
    fn zero_noise_no_dropout_equals_template() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            dropout_fraction: 0.0,
            ..small()
        };
        let f: TimeHeightField<f64> = generate_synthetic(&spec, 11).unwrap();
        assert_eq!(f.velocity, synthetic_template(&spec, 11).unwrap());
        assert!(f.intensity.iter().all(|&i| i >= 0.005));
    }

    #[test]
    fn dropout_fraction_is_honoured() {
        let spec = SyntheticSpec {
            dropout_fraction: 0.2,
            ..small()
        };
        let f: TimeHeightField<f64> = generate_synthetic(&spec, 5).unwrap();
        let low = f.intensity.iter().filter(|&&i| i < 0.005).count();
        let frac = low as f64 / f.intensity.len() as f64;
        assert!((frac - 0.2).abs() <= 0.02, "dropout fraction {frac}");
    }

    #[test]
    fn non_positive_dimensions_rejected() {
        let spec = SyntheticSpec {
            gates: 0,
            ..small()
        };
        assert!(matches!(
            generate_synthetic::<f32>(&spec, 0),
            Err(Error::Parameter(_))
        ));
    }
}
