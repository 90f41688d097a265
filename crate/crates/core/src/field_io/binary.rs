//! `CMLS` little-endian tensor container.
//!
//! Layout: magic `CMLS`, u32 version, u32 T, u32 G, f32 time_step_s,
//! f32 gate_spacing_m, T·G f32 velocity (row-major), T·G f32 intensity.

use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::TimeHeightField;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BINARY_MAGIC: &[u8; 4] = b"CMLS";
pub const BINARY_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 5;

pub fn write_binary<T: Scalar>(path: &Path, field: &TimeHeightField<T>) -> Result<()> {
    let (t, g) = field.velocity.dim();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(BINARY_MAGIC)?;
    put(&BINARY_VERSION.to_le_bytes())?;
    put(&(t as u32).to_le_bytes())?;
    put(&(g as u32).to_le_bytes())?;
    put(&(field.time_step_s as f32).to_le_bytes())?;
    put(&(field.gate_spacing_m as f32).to_le_bytes())?;
    for arr in [&field.velocity, &field.intensity] {
        let mut buf = Vec::with_capacity(t * g * 4);
        for v in arr.iter() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        put(&buf)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Stores a single array (mean or σ map) as a container record whose
/// intensity channel is all ones.
pub fn write_array_record<T: Scalar>(
    path: &Path,
    values: &Array2<T>,
    time_step_s: f64,
    gate_spacing_m: f64,
) -> Result<()> {
    let field = TimeHeightField::new(
        values.clone(),
        Array2::from_elem(values.dim(), T::one()),
        time_step_s,
        gate_spacing_m,
    )?;
    write_binary(path, &field)
}

pub fn read_binary<T: Scalar>(path: &Path) -> Result<TimeHeightField<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::format(path, "missing CMLS header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != BINARY_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let (t, g) = (u32_at(8) as usize, u32_at(12) as usize);
    let n = t * g;
    if bytes.len() != HEADER_LEN + 8 * n {
        return Err(Error::format(
            path,
            format!("expected {} bytes for {t}x{g}, found {}", HEADER_LEN + 8 * n, bytes.len()),
        ));
    }
    let read_block = |start: usize| -> Array2<T> {
        let data = (0..n)
            .map(|k| T::of(f32_at(start + 4 * k) as f64))
            .collect::<Vec<_>>();
        Array2::from_shape_vec((t, g), data).expect("length checked above")
    };
    let velocity = read_block(HEADER_LEN);
    let intensity = read_block(HEADER_LEN + 4 * n);
    TimeHeightField::new(velocity, intensity, f32_at(16) as f64, f32_at(20) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.cmls");
        let v = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f32);
        let f = TimeHeightField::new(v.clone(), Array2::ones((3, 2)), 15.0, 30.0).unwrap();
        write_binary(&path, &f).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"CMLS");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 15.0);
        assert_eq!(bytes.len(), 24 + 2 * 6 * 4);
        // velocity[1][0] is the third float after the header
        assert_eq!(f32::from_le_bytes(bytes[32..36].try_into().unwrap()), 2.0);
        let back: TimeHeightField<f32> = read_binary(&path).unwrap();
        assert_eq!(back.velocity, v);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cmls");
        std::fs::write(&path, b"CMLS\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_binary::<f32>(&path), Err(Error::Format { .. })));
    }
}
