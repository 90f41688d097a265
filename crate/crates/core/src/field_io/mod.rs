//! Time–height instrument fields: loading, SNR filtering, patch tiling and
//! synthetic data generation.

mod binary;
mod netcdf;
mod synthetic;

use std::path::Path;

use chrono::{DateTime, Utc};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use binary::{read_binary, write_array_record, write_binary, BINARY_MAGIC, BINARY_VERSION};
pub use netcdf::{read_netcdf, write_netcdf};
pub use synthetic::{generate_synthetic, synthetic_template, synthetic_truth, SyntheticSpec};

/// Physical clamp bound in m/s; patches are stored as `velocity / VELOCITY_SCALE`.
pub const VELOCITY_SCALE: f64 = 5.0;

/// Value written into normalized patches wherever the SNR filter rejected a pixel.
pub const FILL_VALUE: f64 = 0.0;

/// Raw instrument record over (profile time, range gate).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeHeightField<T> {
    /// Vertical velocity in m/s, shape (T, G).
    pub velocity: Array2<T>,
    /// Dimensionless SNR proxy, shape (T, G).
    pub intensity: Array2<T>,
    pub time_step_s: f64,
    pub gate_spacing_m: f64,
    pub start_time: Option<DateTime<Utc>>,
    validity: Option<Array2<bool>>,
}

impl<T: Scalar> TimeHeightField<T> {
    pub fn new(
        velocity: Array2<T>,
        intensity: Array2<T>,
        time_step_s: f64,
        gate_spacing_m: f64,
    ) -> Result<Self> {
        if velocity.dim() != intensity.dim() {
            return Err(Error::Shape(format!(
                "velocity {:?} and intensity {:?} differ in shape",
                velocity.dim(),
                intensity.dim()
            )));
        }
        if !(time_step_s > 0.0) || !time_step_s.is_finite() {
            return Err(Error::Parameter(format!("time_step_s must be > 0, got {time_step_s}")));
        }
        if !(gate_spacing_m > 0.0) || !gate_spacing_m.is_finite() {
            return Err(Error::Parameter(format!(
                "gate_spacing_m must be > 0, got {gate_spacing_m}"
            )));
        }
        Ok(Self {
            velocity,
            intensity,
            time_step_s,
            gate_spacing_m,
            start_time: None,
            validity: None,
        })
    }

    pub fn with_start_time(mut self, start: Option<DateTime<Utc>>) -> Self {
        self.start_time = start;
        self
    }

    pub fn time_len(&self) -> usize {
        self.velocity.nrows()
    }

    pub fn gate_count(&self) -> usize {
        self.velocity.ncols()
    }

    /// Validity record left by [`preprocess`]; `None` for a raw field.
    pub fn validity(&self) -> Option<&Array2<bool>> {
        self.validity.as_ref()
    }

    /// Validity as seen by patch extraction: the preprocessing record when
    /// present, otherwise every finite pixel.
    fn effective_validity(&self) -> Array2<bool> {
        match &self.validity {
            Some(v) => v.clone(),
            None => self.velocity.mapv(|v| v.is_finite()),
        }
    }

    /// Copy of the field with velocities converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> TimeHeightField<U> {
        TimeHeightField {
            velocity: self.velocity.mapv(|v| U::of(v.as_f64())),
            intensity: self.intensity.mapv(|v| U::of(v.as_f64())),
            time_step_s: self.time_step_s,
            gate_spacing_m: self.gate_spacing_m,
            start_time: self.start_time,
            validity: self.validity.clone(),
        }
    }
}

/// Variable names used when reading self-describing files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariableNames {
    pub velocity: String,
    pub intensity: String,
    pub time: String,
}

impl Default for VariableNames {
    fn default() -> Self {
        Self {
            velocity: "velocity".into(),
            intensity: "intensity".into(),
            time: "time".into(),
        }
    }
}

/// Reads a field from either the `CMLS` binary container or a NetCDF classic
/// file, dispatching on the leading magic bytes. No preprocessing is applied.
pub fn load_field<T: Scalar>(path: &Path, names: &VariableNames) -> Result<TimeHeightField<T>> {
    use std::io::Read;
    let mut magic = [0u8; 4];
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    file.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "file shorter than 4 bytes"))?;
    drop(file);
    if &magic == BINARY_MAGIC {
        read_binary(path)
    } else if &magic[..3] == b"CDF" {
        read_netcdf(path, names)
    } else {
        Err(Error::format(path, format!("unrecognised magic bytes {magic:?}")))
    }
}

/// SNR filter and clamp settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub snr_threshold: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            snr_threshold: 0.005,
            clamp_min: -VELOCITY_SCALE,
            clamp_max: VELOCITY_SCALE,
        }
    }
}

/// Applies the SNR filter (`intensity >= threshold` is kept) and clamps every
/// finite velocity into `[clamp_min, clamp_max]`.
///
/// Non-finite velocities are fill values: their intensity is zeroed so they
/// stay invalid under any later pass.
pub fn preprocess<T: Scalar>(
    field: &TimeHeightField<T>,
    config: &PreprocessConfig,
) -> Result<TimeHeightField<T>> {
    if !(config.snr_threshold >= 0.0) {
        return Err(Error::Parameter(format!(
            "snr_threshold must be >= 0, got {}",
            config.snr_threshold
        )));
    }
    if !(config.clamp_min <= config.clamp_max) {
        return Err(Error::Parameter(format!(
            "clamp interval [{}, {}] is empty",
            config.clamp_min, config.clamp_max
        )));
    }
    let thr = T::of(config.snr_threshold);
    let (lo, hi) = (T::of(config.clamp_min), T::of(config.clamp_max));

    let mut out = field.clone();
    let mut validity = Array2::from_elem(field.velocity.dim(), false);
    ndarray::Zip::from(&mut out.velocity)
        .and(&mut out.intensity)
        .and(&mut validity)
        .for_each(|v, i, ok| {
            if !v.is_finite() {
                *i = T::zero();
            } else {
                *v = v.max(lo).min(hi);
            }
            *ok = v.is_finite() && *i >= thr;
        });
    out.validity = Some(validity);
    Ok(out)
}

/// One normalized window of a field.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample<T> {
    /// Velocity / [`VELOCITY_SCALE`], shape (H, W); invalid pixels hold [`FILL_VALUE`].
    pub values: Array2<T>,
    pub validity: Array2<bool>,
    pub t_origin: usize,
    pub g_origin: usize,
}

impl<T: Scalar> PatchSample<T> {
    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    /// Patch in m/s.
    pub fn physical(&self) -> Array2<T> {
        self.values.mapv(denormalize)
    }

    /// Fully valid patch from normalized values.
    pub fn from_values(values: Array2<T>) -> Self {
        let validity = Array2::from_elem(values.dim(), true);
        Self {
            values,
            validity,
            t_origin: 0,
            g_origin: 0,
        }
    }
}

#[inline]
pub fn normalize<T: Scalar>(v: T) -> T {
    v / T::of(VELOCITY_SCALE)
}

#[inline]
pub fn denormalize<T: Scalar>(x: T) -> T {
    x * T::of(VELOCITY_SCALE)
}

/// Tiles the lowest `gate_limit` gates into non-overlapping `window_t × window_g`
/// patches, time-major, starting at index 0 and discarding any remainder.
pub fn extract_patches<T: Scalar>(
    field: &TimeHeightField<T>,
    window_t: usize,
    window_g: usize,
    gate_limit: usize,
) -> Result<Vec<PatchSample<T>>> {
    if window_t == 0 || window_g == 0 {
        return Err(Error::Parameter("patch windows must be positive".into()));
    }
    let (t_len, g_len) = field.velocity.dim();
    if window_t > t_len {
        return Err(Error::Shape(format!(
            "window_t {window_t} exceeds field length {t_len}"
        )));
    }
    if window_g > gate_limit || gate_limit > g_len {
        return Err(Error::Shape(format!(
            "need window_g ({window_g}) <= gate_limit ({gate_limit}) <= gate count ({g_len})"
        )));
    }
    let validity = field.effective_validity();
    let fill = T::of(FILL_VALUE);
    let (lo, hi) = (-T::one(), T::one());

    let mut patches = Vec::with_capacity((t_len / window_t) * (gate_limit / window_g));
    for ti in 0..t_len / window_t {
        for gi in 0..gate_limit / window_g {
            let (t0, g0) = (ti * window_t, gi * window_g);
            let vel = field.velocity.slice(s![t0..t0 + window_t, g0..g0 + window_g]);
            let ok = validity
                .slice(s![t0..t0 + window_t, g0..g0 + window_g])
                .to_owned();
            let mut values = Array2::from_elem((window_t, window_g), fill);
            ndarray::Zip::from(&mut values)
                .and(&vel)
                .and(&ok)
                .for_each(|out, &v, &valid| {
                    if valid {
                        *out = normalize(v).max(lo).min(hi);
                    }
                });
            patches.push(PatchSample {
                values,
                validity: ok,
                t_origin: t0,
                g_origin: g0,
            });
        }
    }
    Ok(patches)
}

/// Inverse tiling: places each patch's array at its origin in a
/// `t_len × g_len` canvas. Uncovered pixels stay zero.
pub fn stitch_patches<T: Scalar>(
    patches: &[(usize, usize, &Array2<T>)],
    t_len: usize,
    g_len: usize,
) -> Result<Array2<T>> {
    let mut out = Array2::zeros((t_len, g_len));
    for &(t0, g0, arr) in patches {
        let (h, w) = arr.dim();
        if t0 + h > t_len || g0 + w > g_len {
            return Err(Error::Shape(format!(
                "patch at ({t0}, {g0}) of size {h}x{w} exceeds canvas {t_len}x{g_len}"
            )));
        }
        out.slice_mut(s![t0..t0 + h, g0..g0 + w]).assign(arr);
    }
    Ok(out)
}
