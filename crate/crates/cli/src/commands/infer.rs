use std::path::{Path, PathBuf};

use cumolos_core::checkpoint::load_checkpoint;
use cumolos_core::field_io::{read_binary, write_array_record};
use cumolos_core::mae_model::ModelConfig;
use cumolos_core::mc_inference::{ensemble, Composition};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{note, Context};
use crate::error::{CliError, CliResult};
use crate::io::{load_patches, read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default)]
pub struct InferArgs {
    pub checkpoint: PathBuf,
    /// Overrides `paths.test_files` when non-empty.
    pub data: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub index: usize,
    pub id: String,
    pub file_index: usize,
    pub t_origin: usize,
    pub g_origin: usize,
    pub height: usize,
    pub width: usize,
    /// File names relative to the inference run directory.
    pub mean_file: String,
    pub sigma_file: String,
}

/// Everything needed to interpret the per-patch records of an inference run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferManifest {
    pub checkpoint: PathBuf,
    pub model_config: ModelConfig,
    pub test_files: Vec<PathBuf>,
    pub members: usize,
    pub base_seed: u64,
    pub member_seeds: Vec<u64>,
    pub composition: Composition,
    pub mask_ratio: f64,
    pub units: String,
    pub time_step_s: f64,
    pub gate_spacing_m: f64,
    pub patches: Vec<PatchEntry>,
}

impl InferManifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        read_json(&dir.join(MANIFEST_FILE))
    }

    /// Ensemble mean and σ of one patch, in m/s.
    pub fn read_patch(&self, dir: &Path, entry: &PatchEntry) -> CliResult<(Array2<f64>, Array2<f64>)> {
        let read = |name: &str| -> CliResult<Array2<f64>> {
            let rec = read_binary::<f64>(&dir.join(name))?;
            if rec.velocity.dim() != (entry.height, entry.width) {
                return Err(CliError::malformed(
                    dir.join(name),
                    format!("expected {}x{} record", entry.height, entry.width),
                ));
            }
            Ok(rec.velocity)
        };
        Ok((read(&entry.mean_file)?, read(&entry.sigma_file)?))
    }
}

pub fn run(ctx: &Context, args: &InferArgs) -> CliResult<PathBuf> {
    let config = &ctx.config;
    config.validate()?;
    let files = if args.data.is_empty() {
        config.paths.test_files.clone()
    } else {
        args.data.clone()
    };
    if files.is_empty() {
        return Err(CliError::config("no test files: set paths.test_files or pass --data"));
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = ckpt.model::<f32>(Some(&config.mae_model))?;
    let mut patches = load_patches(&files, config)?;
    if let Some(n) = config.inference.max_patches {
        patches.truncate(n);
    }
    if patches.is_empty() {
        return Err(CliError::config("test files yield no patches for the configured windows"));
    }

    let dir = ctx.run_dir("infer")?;
    let inf = &config.inference.ensemble;
    let mut entries = Vec::with_capacity(patches.len());
    let mut seeds = Vec::new();
    for (index, src) in patches.iter().enumerate() {
        let result = ensemble(&src.patch, &model, inf)?;
        let entry = PatchEntry {
            index,
            id: src.id.clone(),
            file_index: src.file_index,
            t_origin: src.patch.t_origin,
            g_origin: src.patch.g_origin,
            height: src.patch.height(),
            width: src.patch.width(),
            mean_file: format!("mean_{index:04}.cmls"),
            sigma_file: format!("sigma_{index:04}.cmls"),
        };
        write_array_record(&dir.join(&entry.mean_file), &result.mean, src.time_step_s, src.gate_spacing_m)?;
        write_array_record(&dir.join(&entry.sigma_file), &result.sigma, src.time_step_s, src.gate_spacing_m)?;
        seeds = result.member_seeds;
        entries.push(entry);
        note(format!("infer: patch {} of {} ({})", index + 1, patches.len(), src.id));
    }
    let manifest = InferManifest {
        checkpoint: args.checkpoint.clone(),
        model_config: config.mae_model.clone(),
        test_files: files,
        members: inf.members,
        base_seed: inf.base_seed,
        member_seeds: seeds,
        composition: inf.composition,
        mask_ratio: inf.mask_ratio,
        units: "m/s".into(),
        time_step_s: patches[0].time_step_s,
        gate_spacing_m: patches[0].gate_spacing_m,
        patches: entries,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(dir)
}
