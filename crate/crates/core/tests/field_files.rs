use std::path::Path;

use chrono::{TimeZone, Utc};
use cumolos_core::field_io::{
    extract_patches, generate_synthetic, load_field, preprocess, read_binary, stitch_patches, write_binary,
    write_netcdf, PreprocessConfig, SyntheticSpec, TimeHeightField, VariableNames,
};
use cumolos_core::Error;
use ndarray::{s, Array2};
use netcdf3::{DataSet, FileWriter, Version};

fn day_field() -> TimeHeightField<f32> {
    let spec = SyntheticSpec::default();
    generate_synthetic::<f32>(&spec, 7)
        .unwrap()
        .with_start_time(Some(Utc.with_ymd_and_hms(2019, 6, 15, 0, 0, 0).unwrap()))
}

#[test]
fn netcdf_full_day_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("day.nc");
    let field = day_field();
    assert_eq!(field.velocity.dim(), (5760, 320));
    write_netcdf(&path, &field, &VariableNames::default()).unwrap();
    let back = load_field::<f32>(&path, &VariableNames::default()).unwrap();
    assert_eq!(back.time_len(), 5760);
    assert_eq!(back.gate_count(), 320);
    assert_eq!(back.velocity, field.velocity);
    assert_eq!(back.intensity, field.intensity);
    assert_eq!(back.time_step_s, 15.0);
    assert_eq!(back.gate_spacing_m, 30.0);
    assert_eq!(back.start_time, field.start_time);
}

#[test]
fn binary_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("day.cmls");
    let field = day_field();
    write_binary(&path, &field).unwrap();
    let back = read_binary::<f32>(&path).unwrap();
    assert_eq!(back.velocity, field.velocity);
    assert_eq!(back.intensity, field.intensity);
    let via_dispatch = load_field::<f64>(&path, &VariableNames::default()).unwrap();
    assert_eq!(via_dispatch.velocity.dim(), (5760, 320));
}

/// Packed integer velocity with scale/offset/fill, custom names, no global
/// sampling attributes (derived from coordinates instead).
fn write_packed(path: &Path, velocity_dims: &[&str]) {
    let (t, g) = (6, 3);
    let mut ds = DataSet::new();
    ds.add_fixed_dim("t", t).unwrap();
    ds.add_fixed_dim("range", g).unwrap();
    ds.add_var_f64("t", &["t"]).unwrap();
    ds.add_var_f32("range", &["range"]).unwrap();
    ds.add_var_i32("vel", velocity_dims).unwrap();
    ds.add_var_attr_f32("vel", "scale_factor", vec![0.01]).unwrap();
    ds.add_var_attr_f32("vel", "add_offset", vec![1.0]).unwrap();
    ds.add_var_attr_i32("vel", "_FillValue", vec![-9999]).unwrap();
    ds.add_var_f32("snr", &["t", "range"]).unwrap();
    let mut w = FileWriter::open(path).unwrap();
    w.set_def(&ds, Version::Classic, 0).unwrap();
    w.write_var_f64("t", &(0..t).map(|k| 10.0 * k as f64).collect::<Vec<_>>()).unwrap();
    w.write_var_f32("range", &[100.0, 125.0, 150.0]).unwrap();
    let n = if velocity_dims.len() == 2 { t * g } else { t };
    let mut raw: Vec<i32> = (0..n as i32).map(|k| k * 10).collect();
    raw[1] = -9999;
    w.write_var_i32("vel", &raw).unwrap();
    w.write_var_f32("snr", &vec![0.5; t * g]).unwrap();
    w.close().unwrap();
}

fn names() -> VariableNames {
    VariableNames {
        velocity: "vel".into(),
        intensity: "snr".into(),
        time: "t".into(),
    }
}

#[test]
fn packed_netcdf_is_unpacked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("packed.nc");
    write_packed(&path, &["t", "range"]);
    let f = load_field::<f64>(&path, &names()).unwrap();
    assert_eq!(f.velocity.dim(), (6, 3));
    assert!((f.velocity[[0, 0]] - 1.0).abs() < 1e-6);
    assert!((f.velocity[[0, 2]] - (20.0 * 0.01 + 1.0)).abs() < 1e-6);
    assert!(f.velocity[[0, 1]].is_nan());
    assert_eq!(f.time_step_s, 10.0);
    assert_eq!(f.gate_spacing_m, 25.0);
    let p = preprocess(&f, &PreprocessConfig::default()).unwrap();
    assert!(!p.validity().unwrap()[[0, 1]]);
}

#[test]
fn one_dimensional_velocity_is_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.nc");
    write_packed(&path, &["t"]);
    assert!(matches!(load_field::<f64>(&path, &names()), Err(Error::Shape(_))));
}

#[test]
fn missing_intensity_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("packed.nc");
    write_packed(&path, &["t", "range"]);
    let wrong = VariableNames {
        intensity: "backscatter".into(),
        ..names()
    };
    match load_field::<f64>(&path, &wrong) {
        Err(Error::MissingVariable(v)) => assert_eq!(v, "backscatter"),
        other => panic!("expected missing variable, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn unreadable_file_is_io_error() {
    let r = load_field::<f32>(Path::new("/nonexistent/day.nc"), &VariableNames::default());
    assert!(matches!(r, Err(Error::Io { .. })));
}

#[test]
fn preprocessing_is_idempotent_and_tiling_partitions() {
    let field = day_field().cast::<f64>();
    let cfg = PreprocessConfig::default();
    let once = preprocess(&field, &cfg).unwrap();
    let twice = preprocess(&once, &cfg).unwrap();
    assert_eq!(once.velocity, twice.velocity);
    assert_eq!(once.validity(), twice.validity());

    let patches = extract_patches(&once, 64, 64, 64).unwrap();
    assert_eq!(patches.len(), 90);
    assert!(patches.iter().all(|p| p.values.iter().all(|v| v.is_finite())));
    let parts: Vec<_> = patches.iter().map(|p| (p.t_origin, p.g_origin, &p.values)).collect();
    let stitched = stitch_patches(&parts, 5760, 64).unwrap();
    let valid = once.validity().unwrap().slice(s![.., ..64]).to_owned();
    let expect = Array2::from_shape_fn((5760, 64), |p| if valid[p] { once.velocity[p] / 5.0 } else { 0.0 });
    assert_eq!(stitched, expect);
}
