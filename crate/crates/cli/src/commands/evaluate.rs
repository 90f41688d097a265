use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cumolos_core::baselines::{MeanFilter, Reconstructor};
use cumolos_core::field_io::{stitch_patches, write_array_record, TimeHeightField, VELOCITY_SCALE};
use cumolos_core::metrics::calibration::uncertainty_diagnostics;
use cumolos_core::metrics::spectral::{fidelity_from_pairs, psd_pairs, GateFidelity};
use cumolos_core::metrics::{
    fid, image_scores, reports_csv, CalibrationReport, MetricsReport, QualityScores, RandomConvFeatures,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::infer::InferManifest;
use super::{note, Context};
use crate::error::{CliError, CliResult};
use crate::io::{load_patches, write_json, write_text, SourcedPatch};

pub const METRICS_CSV: &str = "metrics.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const PSD_CSV: &str = "psd.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";

pub const METHOD_CUMOLOS: &str = "cumolos";
pub const METHOD_ORACLE: &str = "oracle";

#[derive(Clone, Debug, Default)]
pub struct EvaluateArgs {
    pub infer_dir: PathBuf,
    /// Reference fields, one per test file; overrides `paths.truth_files`.
    pub truth: Vec<PathBuf>,
    /// Adds the reference compared against itself as a sanity row.
    pub oracle: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedPatch {
    pub index: usize,
    pub id: String,
    pub file_index: usize,
    pub t_origin: usize,
    pub g_origin: usize,
    /// Observed input in m/s, relative to the evaluation directory.
    pub original_file: String,
    /// Ensemble records, absolute or relative to the working directory.
    pub mean_file: PathBuf,
    pub sigma_file: PathBuf,
}

/// Index of an evaluation run, consumed by `plot`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationIndex {
    pub infer_dir: PathBuf,
    pub truth_files: Vec<PathBuf>,
    pub methods: Vec<String>,
    pub time_step_s: f64,
    pub gate_spacing_m: f64,
    pub patches: Vec<EvaluatedPatch>,
}

#[derive(Debug, Serialize)]
struct SpectralSummary {
    method: String,
    fidelity: f64,
    excluded_bins: usize,
    per_gate: Vec<(usize, GateFidelity)>,
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    patches: usize,
    units: &'static str,
    calibration: Option<CalibrationReport>,
    spectral: Vec<SpectralSummary>,
}

/// Pairs every inferred patch with its observed input and its reference;
/// any id missing from either set, or of the wrong shape, is reported.
fn align<'a>(
    manifest: &InferManifest,
    observed: &'a [SourcedPatch],
    truth: &'a [SourcedPatch],
) -> CliResult<Vec<(&'a SourcedPatch, &'a SourcedPatch)>> {
    let by_id = |set: &'a [SourcedPatch]| set.iter().map(|s| (s.id.as_str(), s)).collect::<BTreeMap<_, _>>();
    let (obs, tru) = (by_id(observed), by_id(truth));
    let mut bad = Vec::new();
    let mut pairs = Vec::new();
    for e in &manifest.patches {
        match (obs.get(e.id.as_str()), tru.get(e.id.as_str())) {
            (Some(o), Some(t))
                if o.patch.values.dim() == (e.height, e.width) && t.patch.values.dim() == (e.height, e.width) =>
            {
                pairs.push((*o, *t))
            }
            _ => bad.push(e.id.clone()),
        }
    }
    if bad.is_empty() {
        Ok(pairs)
    } else {
        Err(cumolos_core::Error::Alignment(bad).into())
    }
}

fn to_physical(a: &Array2<f32>) -> Array2<f64> {
    a.mapv(|v| v as f64 * VELOCITY_SCALE)
}

/// Stitches each source file's patches back into a contiguous time–height
/// block and returns `(file_index, reference, reconstruction)` fields.
fn stitched(
    entries: &[(usize, usize, usize)],
    references: &[Array2<f64>],
    recons: &[Array2<f64>],
    time_step_s: f64,
    gate_spacing_m: f64,
) -> CliResult<Vec<(usize, TimeHeightField<f64>, TimeHeightField<f64>)>> {
    let mut files: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &(f, _, _)) in entries.iter().enumerate() {
        files.entry(f).or_default().push(k);
    }
    let mut out = Vec::new();
    for (file, ks) in files {
        let t0 = ks.iter().map(|&k| entries[k].1).min().unwrap();
        let t1 = ks.iter().map(|&k| entries[k].1 + references[k].nrows()).max().unwrap();
        let g1 = ks.iter().map(|&k| entries[k].2 + references[k].ncols()).max().unwrap();
        let build = |arrays: &[Array2<f64>]| -> CliResult<TimeHeightField<f64>> {
            let placed: Vec<_> = ks.iter().map(|&k| (entries[k].1 - t0, entries[k].2, &arrays[k])).collect();
            let v = stitch_patches(&placed, t1 - t0, g1)?;
            let ones = Array2::from_elem(v.dim(), 1.0);
            Ok(TimeHeightField::new(v, ones, time_step_s, gate_spacing_m)?)
        };
        out.push((file, build(references)?, build(recons)?));
    }
    Ok(out)
}

pub fn run(ctx: &Context, args: &EvaluateArgs) -> CliResult<PathBuf> {
    let config = &ctx.config;
    config.validate()?;
    let manifest = InferManifest::load(&args.infer_dir)?;
    let truth_files = if !args.truth.is_empty() {
        args.truth.clone()
    } else if !config.paths.truth_files.is_empty() {
        config.paths.truth_files.clone()
    } else {
        manifest.test_files.clone()
    };
    if truth_files.len() != manifest.test_files.len() {
        return Err(CliError::config(format!(
            "{} truth files for {} test files",
            truth_files.len(),
            manifest.test_files.len()
        )));
    }
    let observed = load_patches(&manifest.test_files, config)?;
    let truth = load_patches(&truth_files, config)?;
    let pairs = align(&manifest, &observed, &truth)?;

    let references: Vec<Array2<f64>> = pairs.iter().map(|(_, t)| to_physical(&t.patch.values)).collect();
    let mut means = Vec::with_capacity(pairs.len());
    let mut sigmas = Vec::with_capacity(pairs.len());
    for e in &manifest.patches {
        let (m, s) = manifest.read_patch(&args.infer_dir, e)?;
        means.push(m);
        sigmas.push(s);
    }
    let filter = MeanFilter::default();
    let filtered: Vec<Array2<f64>> = pairs
        .iter()
        .map(|(o, _)| Reconstructor::<f32>::reconstruct(&filter, &o.patch).map(|a| to_physical(&a)))
        .collect::<Result<_, _>>()?;

    let mut methods: Vec<(String, &[Array2<f64>])> = vec![
        (METHOD_CUMOLOS.to_string(), &means),
        (Reconstructor::<f32>::id(&filter).to_string(), &filtered),
    ];
    if args.oracle {
        methods.push((METHOD_ORACLE.to_string(), &references));
    }

    let m = &config.metrics;
    let ssim = m.ssim_params();
    let extractor = RandomConvFeatures::new();
    let entries: Vec<(usize, usize, usize)> = pairs
        .iter()
        .map(|(o, _)| (o.file_index, o.patch.t_origin, o.patch.g_origin))
        .collect();
    let (dt, dg) = (pairs[0].0.time_step_s, pairs[0].0.gate_spacing_m);
    let ids: Vec<String> = manifest.patches.iter().map(|e| e.id.clone()).collect();

    let mut reports = Vec::new();
    let mut spectral = Vec::new();
    let mut psd = String::from("method,file_index,gate,freq_hz,p_raw,p_den\n");
    for (name, recons) in &methods {
        let (psnr_db, ssim_mean, mse) = image_scores(&references, recons, &ssim)?;
        let fid_value = fid(&references, recons, &extractor)?;
        let mut all_pairs = Vec::new();
        let mut pair_files = Vec::new();
        for (file, raw, den) in stitched(&entries, &references, recons, dt, dg)? {
            let gates: Vec<usize> = if m.gates.is_empty() {
                (0..raw.gate_count()).collect()
            } else {
                m.gates.iter().copied().filter(|&g| g < raw.gate_count()).collect()
            };
            for p in psd_pairs(&raw, &den, &gates, &m.spectral)? {
                for k in 0..p.freqs.len() {
                    let _ = writeln!(psd, "{name},{file},{},{},{},{}", p.gate_index, p.freqs[k], p.p_raw[k], p.p_den[k]);
                }
                pair_files.push(file);
                all_pairs.push(p);
            }
        }
        // a flat reference has no scorable bins; report the score as undefined
        let (fidelity, excluded_bins, per_gate) = match fidelity_from_pairs(all_pairs, &m.spectral) {
            Ok(r) => (r.fidelity, r.excluded_bins, r.per_gate),
            Err(cumolos_core::Error::Numeric(msg)) => {
                note(format!("evaluate: {name}: spectral fidelity undefined ({msg})"));
                (f64::NAN, 0, Vec::new())
            }
            Err(e) => return Err(e.into()),
        };
        let calibration = if name == METHOD_CUMOLOS {
            let errors: Vec<Array2<f64>> =
                means.iter().zip(&references).map(|(a, b)| (a - b).mapv(f64::abs)).collect();
            Some(uncertainty_diagnostics(&errors, &sigmas, &ids)?)
        } else {
            None
        };
        reports.push(MetricsReport {
            method: name.clone(),
            scores: QualityScores {
                psnr_db,
                ssim: ssim_mean,
                mse,
                fid: fid_value,
                spectral_fidelity: fidelity,
            },
            calibration,
            data_range: m.data_range,
            fid_extractor: RandomConvFeatures::ID.to_string(),
            spectral_params: m.spectral.clone(),
        });
        spectral.push(SpectralSummary {
            method: name.clone(),
            fidelity,
            excluded_bins,
            per_gate: pair_files.into_iter().zip(per_gate).collect(),
        });
        note(format!("evaluate: {name} mse {mse:.5} ssim {ssim_mean:.4} fidelity {fidelity:.4}"));
    }

    let dir = ctx.run_dir("evaluate")?;
    write_text(&dir.join(METRICS_CSV), &reports_csv(&reports))?;
    for r in &reports {
        write_text(&dir.join(format!("metrics_{}.txt", r.method)), &r.to_key_value())?;
    }
    write_text(&dir.join(PSD_CSV), &psd)?;
    write_json(
        &dir.join(DIAGNOSTICS_FILE),
        &Diagnostics {
            patches: pairs.len(),
            units: "m/s",
            calibration: reports[0].calibration.clone(),
            spectral,
        },
    )?;

    let mut patches = Vec::with_capacity(pairs.len());
    for (e, (o, _)) in manifest.patches.iter().zip(&pairs) {
        let original_file = format!("original_{:04}.cmls", e.index);
        write_array_record(&dir.join(&original_file), &to_physical(&o.patch.values), dt, dg)?;
        patches.push(EvaluatedPatch {
            index: e.index,
            id: e.id.clone(),
            file_index: e.file_index,
            t_origin: e.t_origin,
            g_origin: e.g_origin,
            original_file,
            mean_file: args.infer_dir.join(&e.mean_file),
            sigma_file: args.infer_dir.join(&e.sigma_file),
        });
    }
    write_json(
        &dir.join(EVALUATION_FILE),
        &EvaluationIndex {
            infer_dir: args.infer_dir.clone(),
            truth_files,
            methods: methods.iter().map(|(n, _)| n.clone()).collect(),
            time_step_s: dt,
            gate_spacing_m: dg,
            patches,
        },
    )?;
    Ok(dir)
}

/// Reads the `metrics.csv` of an evaluation run into `method → scores`.
pub fn read_metrics(dir: &Path) -> CliResult<BTreeMap<String, QualityScores>> {
    let path = dir.join(METRICS_CSV);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MetricsReport::CSV_HEADER) {
        return Err(CliError::malformed(&path, "unexpected header"));
    }
    let mut out = BTreeMap::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| -> CliResult<f64> {
            f.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::malformed(&path, format!("bad row `{line}`")))
        };
        out.insert(
            f[0].to_string(),
            QualityScores {
                psnr_db: num(1)?,
                ssim: num(2)?,
                mse: num(3)?,
                fid: num(4)?,
                spectral_fidelity: num(5)?,
            },
        );
    }
    Ok(out)
}
