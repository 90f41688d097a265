//! Run directories, input loading and small file helpers.

use std::path::{Path, PathBuf};

use cumolos_core::field_io::{extract_patches, load_field, preprocess, PatchSample};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

/// Creates `base/<command>-<UTC timestamp>`, adding `-1`, `-2`, … when that
/// name is taken, so earlier runs are never touched.
pub fn create_run_dir(base: &Path, command: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(base).map_err(|e| CliError::io(base, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    for n in 0.. {
        let name = match n {
            0 => format!("{command}-{stamp}"),
            n => format!("{command}-{stamp}-{n}"),
        };
        let dir = base.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
    unreachable!()
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::malformed(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::malformed(path, e))
}

/// Fails with the complete list of paths that do not exist.
pub fn require_files(paths: &[PathBuf]) -> CliResult<()> {
    let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.is_file()).cloned().collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingInputs(missing))
    }
}

/// A normalized patch together with where it came from.
#[derive(Clone, Debug)]
pub struct SourcedPatch {
    pub id: String,
    pub file_index: usize,
    pub patch: PatchSample<f32>,
    pub time_step_s: f64,
    pub gate_spacing_m: f64,
}

pub fn patch_id(file_index: usize, t_origin: usize, g_origin: usize) -> String {
    format!("f{file_index:02}-t{t_origin:05}-g{g_origin:03}")
}

/// Loads, filters and tiles every file in order.
pub fn load_patches(files: &[PathBuf], config: &PipelineConfig) -> CliResult<Vec<SourcedPatch>> {
    require_files(files)?;
    let p = &config.patching;
    let mut out = Vec::new();
    for (file_index, path) in files.iter().enumerate() {
        let field = load_field::<f32>(path, &config.field_io.variables)?;
        let field = preprocess(&field, &config.field_io.preprocess)?;
        for patch in extract_patches(&field, p.window_t, p.window_g, p.gate_limit)? {
            out.push(SourcedPatch {
                id: patch_id(file_index, patch.t_origin, patch.g_origin),
                file_index,
                patch,
                time_step_s: field.time_step_s,
                gate_spacing_m: field.gate_spacing_m,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_never_collide() {
        let base = tempfile::tempdir().unwrap();
        let a = create_run_dir(base.path(), "train").unwrap();
        let b = create_run_dir(base.path(), "train").unwrap();
        assert_ne!(a, b);
        assert!(a.is_dir() && b.is_dir());
    }

    #[test]
    fn missing_files_are_all_listed() {
        let err = require_files(&[PathBuf::from("/nonexistent/a"), PathBuf::from("/nonexistent/b")]).unwrap_err();
        match err {
            CliError::MissingInputs(v) => assert_eq!(v.len(), 2),
            e => panic!("{e}"),
        }
    }
}
