//! NetCDF classic (CDF-1/CDF-2) reader and writer for time–height fields.
//!
//! Sampling metadata is taken from the global attributes `time_step_s` and
//! `gate_spacing_m` when present; otherwise the time step is derived from the
//! first two values of the time coordinate (seconds) and the gate spacing from
//! a `range` coordinate.

use std::path::Path;

use chrono::{DateTime, Utc};
use ndarray::Array2;
use netcdf3::{DataSet, DataType, DataVector, FileReader, FileWriter, Version};

use super::{TimeHeightField, VariableNames};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const RANGE_DIM: &str = "range";

fn to_f64(data: DataVector) -> Vec<f64> {
    match data {
        DataVector::I8(v) => v.into_iter().map(f64::from).collect(),
        DataVector::U8(v) => v.into_iter().map(f64::from).collect(),
        DataVector::I16(v) => v.into_iter().map(f64::from).collect(),
        DataVector::I32(v) => v.into_iter().map(f64::from).collect(),
        DataVector::F32(v) => v.into_iter().map(f64::from).collect(),
        DataVector::F64(v) => v,
    }
}

fn numeric_attr(ds: &DataSet, var: &str, attr: &str) -> Option<f64> {
    let a = ds.get_var_attr(var, attr)?;
    match a.data_type() {
        DataType::F32 => a.get_f32().and_then(|v| v.first().map(|&x| x as f64)),
        DataType::F64 => a.get_f64().and_then(|v| v.first().copied()),
        DataType::I32 => a.get_i32().and_then(|v| v.first().map(|&x| x as f64)),
        DataType::I16 => a.get_i16().and_then(|v| v.first().map(|&x| x as f64)),
        _ => None,
    }
}

fn global_f64(ds: &DataSet, name: &str) -> Option<f64> {
    ds.get_global_attr_f64(name)
        .and_then(|v| v.first().copied())
        .or_else(|| ds.get_global_attr_f32(name).and_then(|v| v.first().map(|&x| x as f64)))
}

fn read_2d(
    reader: &mut FileReader,
    path: &Path,
    name: &str,
) -> Result<(Array2<f64>, (usize, usize))> {
    let ds = reader.data_set();
    let var = ds
        .get_var(name)
        .ok_or_else(|| Error::MissingVariable(name.to_string()))?;
    let dims = var.get_dims();
    if dims.len() != 2 {
        return Err(Error::Shape(format!(
            "variable `{name}` has {} dimensions, expected 2 (time, gate)",
            dims.len()
        )));
    }
    let shape = (dims[0].size(), dims[1].size());
    let scale = numeric_attr(ds, name, "scale_factor").unwrap_or(1.0);
    let offset = numeric_attr(ds, name, "add_offset").unwrap_or(0.0);
    let fill = numeric_attr(ds, name, "_FillValue");
    let raw = reader
        .read_var(name)
        .map_err(|e| Error::format(path, format!("reading `{name}`: {e}")))?;
    let values = to_f64(raw)
        .into_iter()
        .map(|v| match fill {
            Some(f) if v == f => f64::NAN,
            _ => v * scale + offset,
        })
        .collect::<Vec<_>>();
    let arr = Array2::from_shape_vec(shape, values)
        .map_err(|e| Error::Shape(format!("variable `{name}`: {e}")))?;
    Ok((arr, shape))
}

pub fn read_netcdf<T: Scalar>(path: &Path, names: &VariableNames) -> Result<TimeHeightField<T>> {
    let mut reader = FileReader::open(path).map_err(|e| match e {
        netcdf3::ReadError::IOErrorKind(kind) => Error::io(path, kind.into()),
        other => Error::format(path, other.to_string()),
    })?;
    let (velocity, vshape) = read_2d(&mut reader, path, &names.velocity)?;
    let (intensity, ishape) = read_2d(&mut reader, path, &names.intensity)?;
    if vshape != ishape {
        return Err(Error::Shape(format!(
            "velocity {vshape:?} and intensity {ishape:?} differ in shape"
        )));
    }

    let ds = reader.data_set();
    let attr_dt = global_f64(ds, "time_step_s");
    let attr_dg = global_f64(ds, "gate_spacing_m");
    let has_time = ds.has_var(&names.time);
    let has_range = ds.has_var(RANGE_DIM);
    let start_time = ds
        .get_global_attr_as_string("start_time")
        .and_then(|s| DateTime::parse_from_rfc3339(s.trim()).ok())
        .map(|d| d.with_timezone(&Utc));

    let mut coord = |name: &str| -> Result<Vec<f64>> {
        reader
            .read_var(name)
            .map(to_f64)
            .map_err(|e| Error::format(path, e.to_string()))
    };
    let time_step_s = match attr_dt {
        Some(dt) => dt,
        None if has_time => match coord(&names.time)?.as_slice() {
            [t0, t1, ..] => t1 - t0,
            t => {
                return Err(Error::Metadata(format!(
                    "cannot derive time step from `{}` with {} values",
                    names.time,
                    t.len()
                )))
            }
        },
        None => return Err(Error::MissingVariable(names.time.clone())),
    };
    let gate_spacing_m = match attr_dg {
        Some(g) => g,
        None if has_range => match coord(RANGE_DIM)?.as_slice() {
            [r0, r1, ..] => r1 - r0,
            _ => return Err(Error::Metadata("range coordinate too short".into())),
        },
        None => return Err(Error::Metadata("gate spacing not recorded".into())),
    };

    let field = TimeHeightField::new(
        velocity.mapv(T::of),
        intensity.mapv(T::of),
        time_step_s,
        gate_spacing_m,
    )?;
    Ok(field.with_start_time(start_time))
}

/// Writes `velocity`/`intensity` as f32 `(time, range)` variables with `time`
/// (seconds) and `range` (metres) coordinates.
pub fn write_netcdf<T: Scalar>(
    path: &Path,
    field: &TimeHeightField<T>,
    names: &VariableNames,
) -> Result<()> {
    let (t, g) = field.velocity.dim();
    let def_err = |e: netcdf3::InvalidDataSet| Error::format(path, e.to_string());
    let mut ds = DataSet::new();
    ds.add_fixed_dim(&names.time, t).map_err(def_err)?;
    ds.add_fixed_dim(RANGE_DIM, g).map_err(def_err)?;
    ds.add_var_f64(&names.time, &[&names.time]).map_err(def_err)?;
    ds.add_var_attr_string(&names.time, "units", "seconds").map_err(def_err)?;
    ds.add_var_f32(RANGE_DIM, &[RANGE_DIM]).map_err(def_err)?;
    ds.add_var_attr_string(RANGE_DIM, "units", "m").map_err(def_err)?;
    for var in [&names.velocity, &names.intensity] {
        ds.add_var_f32(var, &[names.time.as_str(), RANGE_DIM]).map_err(def_err)?;
    }
    ds.add_var_attr_string(&names.velocity, "units", "m s-1").map_err(def_err)?;
    ds.add_global_attr_f64("time_step_s", vec![field.time_step_s]).map_err(def_err)?;
    ds.add_global_attr_f64("gate_spacing_m", vec![field.gate_spacing_m]).map_err(def_err)?;
    if let Some(start) = field.start_time {
        ds.add_global_attr_string("start_time", start.to_rfc3339()).map_err(def_err)?;
    }

    let time: Vec<f64> = (0..t).map(|k| k as f64 * field.time_step_s).collect();
    let range: Vec<f32> = (0..g).map(|k| (k as f64 * field.gate_spacing_m) as f32).collect();
    let vel: Vec<f32> = field.velocity.iter().map(|v| v.as_f64() as f32).collect();
    let inten: Vec<f32> = field.intensity.iter().map(|v| v.as_f64() as f32).collect();

    let write_err = |e: netcdf3::WriteError| Error::format(path, format!("{e:?}"));
    let mut writer = FileWriter::open(path).map_err(write_err)?;
    writer.set_def(&ds, Version::Offset64Bit, 0).map_err(write_err)?;
    writer.write_var_f64(&names.time, &time).map_err(write_err)?;
    writer.write_var_f32(RANGE_DIM, &range).map_err(write_err)?;
    writer.write_var_f32(&names.velocity, &vel).map_err(write_err)?;
    writer.write_var_f32(&names.intensity, &inten).map_err(write_err)?;
    writer.close().map_err(write_err)
}
