//! The single TOML pipeline configuration shared by every command.

use std::path::{Path, PathBuf};

use cumolos_core::field_io::{PreprocessConfig, SyntheticSpec, VariableNames};
use cumolos_core::mae_model::ModelConfig;
use cumolos_core::mc_inference::InferenceConfig;
use cumolos_core::metrics::{SpectralParams, SsimParams, DEFAULT_DATA_RANGE};
use cumolos_core::patching::CurriculumSchedule;
use cumolos_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldIoSection {
    pub variables: VariableNames,
    pub preprocess: PreprocessConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchingSection {
    pub window_t: usize,
    pub window_g: usize,
    pub gate_limit: usize,
    pub curriculum: CurriculumSchedule,
}

impl Default for PatchingSection {
    fn default() -> Self {
        Self {
            window_t: 64,
            window_g: 64,
            gate_limit: 64,
            curriculum: CurriculumSchedule::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSection {
    #[serde(flatten)]
    pub ensemble: InferenceConfig,
    /// Only the first `max_patches` test patches are reconstructed.
    pub max_patches: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSection {
    /// Peak-to-peak span in m/s used by PSNR and SSIM.
    pub data_range: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub spectral: SpectralParams,
    /// Gate indices (relative to the patched region) scored spectrally;
    /// empty means every gate.
    pub gates: Vec<usize>,
    /// Gates drawn in the PSD overlay.
    pub plot_gates: Vec<usize>,
    pub fid_extractor: String,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            data_range: DEFAULT_DATA_RANGE,
            ssim_window: 7,
            ssim_sigma: 1.5,
            spectral: SpectralParams::default(),
            gates: Vec::new(),
            plot_gates: vec![0, 16, 32, 48],
            fid_extractor: cumolos_core::metrics::RandomConvFeatures::ID.to_string(),
        }
    }
}

impl MetricsSection {
    pub fn ssim_params(&self) -> SsimParams {
        SsimParams {
            window: self.ssim_window,
            sigma: self.ssim_sigma,
            data_range: self.data_range,
            ..SsimParams::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSection {
    #[serde(flatten)]
    pub spec: SyntheticSpec,
    /// Number of day files; file `i` uses seed `seed + i`.
    pub days: usize,
    pub write_netcdf: bool,
    /// Also write the noise-free, dropout-free template of each day.
    pub write_truth: bool,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            spec: SyntheticSpec::default(),
            days: 1,
            write_netcdf: false,
            write_truth: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    pub train_files: Vec<PathBuf>,
    pub test_files: Vec<PathBuf>,
    /// Reference fields for evaluation, one per test file; empty means the
    /// observed test files themselves.
    pub truth_files: Vec<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            train_files: Vec::new(),
            test_files: Vec::new(),
            truth_files: Vec::new(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub field_io: FieldIoSection,
    pub patching: PatchingSection,
    pub mae_model: ModelConfig,
    pub training: TrainConfig,
    pub inference: InferenceSection,
    pub metrics: MetricsSection,
    pub synthetic: SyntheticSection,
    pub paths: PathsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            field_io: FieldIoSection::default(),
            patching: PatchingSection::default(),
            mae_model: ModelConfig::default(),
            training: TrainConfig::default(),
            inference: InferenceSection::default(),
            metrics: MetricsSection::default(),
            synthetic: SyntheticSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|reason| CliError::ConfigFile {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// One seed drives synthesis, training order/masks and inference masks.
    pub fn apply_seed(&mut self, seed: u64) {
        self.synthetic.spec.seed = seed;
        self.training.seed = seed;
        self.inference.ensemble.base_seed = seed;
    }

    /// Fully resolved configuration as TOML; identical input gives identical bytes.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("pipeline config is always serializable")
    }

    /// Every violated constraint across all sections.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let p = &self.patching;
        let pre = &self.field_io.preprocess;
        if !(pre.clamp_min < pre.clamp_max) {
            out.push(format!(
                "field_io.preprocess clamp interval [{}, {}] is empty",
                pre.clamp_min, pre.clamp_max
            ));
        }
        if !pre.snr_threshold.is_finite() {
            out.push("field_io.preprocess.snr_threshold must be finite".into());
        }
        if p.window_t == 0 || p.window_g == 0 || p.window_t % 2 != 0 || p.window_g % 2 != 0 {
            out.push(format!(
                "patching windows must be positive and even, got {}x{}",
                p.window_t, p.window_g
            ));
        }
        if p.window_g > p.gate_limit {
            out.push(format!(
                "patching.window_g ({}) exceeds gate_limit ({})",
                p.window_g, p.gate_limit
            ));
        }
        if let Err(e) = p.curriculum.validate() {
            out.push(format!("patching.curriculum: {e}"));
        }
        if let Err(e) = self.mae_model.validate() {
            out.push(format!("mae_model: {e}"));
        }
        out.extend(self.training.problems());
        let inf = &self.inference.ensemble;
        if inf.members == 0 {
            out.push("inference.members must be at least 1".into());
        }
        if !(0.0..1.0).contains(&inf.mask_ratio) {
            out.push(format!("inference.mask_ratio must lie in [0, 1), got {}", inf.mask_ratio));
        }
        if self.inference.max_patches == Some(0) {
            out.push("inference.max_patches must be positive when set".into());
        }
        let m = &self.metrics;
        if !(m.data_range > 0.0) {
            out.push(format!("metrics.data_range must be > 0, got {}", m.data_range));
        }
        if m.ssim_window == 0 || m.ssim_window % 2 == 0 {
            out.push(format!("metrics.ssim_window must be odd, got {}", m.ssim_window));
        }
        if !(m.ssim_sigma > 0.0) {
            out.push("metrics.ssim_sigma must be > 0".into());
        }
        let sp = &m.spectral;
        if !(sp.f_cut_hz > 0.0) || !(sp.tolerance >= 0.0) || sp.max_segment < 2 || !(0.0..1.0).contains(&sp.overlap) {
            out.push("metrics.spectral needs f_cut_hz > 0, tolerance >= 0, max_segment >= 2, overlap in [0, 1)".into());
        }
        if let Some(g) = m.gates.iter().chain(&m.plot_gates).find(|&&g| g >= p.gate_limit) {
            out.push(format!("metrics gate {g} lies outside the patched region (gate_limit {})", p.gate_limit));
        }
        if m.fid_extractor != cumolos_core::metrics::RandomConvFeatures::ID {
            out.push(format!("metrics.fid_extractor `{}` is not available", m.fid_extractor));
        }
        if self.synthetic.days == 0 {
            out.push("synthetic.days must be positive".into());
        }
        let tf = &self.paths.truth_files;
        if !tf.is_empty() && tf.len() != self.paths.test_files.len() {
            out.push(format!(
                "paths.truth_files has {} entries for {} test files",
                tf.len(),
                self.paths.test_files.len()
            ));
        }
        out
    }

    pub fn validate(&self) -> CliResult<()> {
        match self.problems() {
            p if p.is_empty() => Ok(()),
            p => Err(CliError::Config(p)),
        }
    }
}
