use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cumolos_core::field_io::read_binary;
use cumolos_core::training::TrainingLog;
use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::evaluate::{EvaluationIndex, EVALUATION_FILE, METHOD_CUMOLOS, PSD_CSV};
use super::{note, Context};
use crate::error::{CliError, CliResult};
use crate::io::{read_json, require_files, write_json};
use crate::render::{heatmap, line_chart, Colormap, Series, PALETTE};

pub const PANELS_FILE: &str = "panels.json";
pub const LOSS_CURVES_FILE: &str = "loss_curves.png";
pub const PSD_IMAGE: &str = "psd.png";
const PIXEL_SCALE: u32 = 4;

#[derive(Clone, Debug, Default)]
pub struct PlotArgs {
    /// Evaluation run to draw the spectral and field panels from.
    pub eval_dir: Option<PathBuf>,
    /// Training logs (CSV files or training run directories) to overlay.
    pub loss: Vec<PathBuf>,
}

/// Placement metadata of one emitted image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelInfo {
    pub file: String,
    pub kind: String,
    pub patch_id: Option<String>,
    pub width_px: u32,
    pub height_px: u32,
    pub x_axis: String,
    pub y_axis: String,
    pub x_extent: [f64; 2],
    pub y_extent: [f64; 2],
    pub value_range: Option<[f64; 2]>,
    pub colormap: Option<String>,
    /// Series drawn, for line charts.
    pub series: Vec<String>,
}

fn save(dir: &Path, name: &str, img: &RgbImage) -> CliResult<()> {
    let path = dir.join(name);
    img.save(&path)
        .map_err(|e| CliError::malformed(&path, format!("writing image: {e}")))
}

/// Rows of the evaluation's `psd.csv` for one method, keyed by (file, gate).
fn read_psd(path: &Path, method: &str) -> CliResult<BTreeMap<(usize, usize), Vec<[f64; 3]>>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out: BTreeMap<(usize, usize), Vec<[f64; 3]>> = BTreeMap::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(CliError::malformed(path, format!("bad row `{line}`")));
        }
        if f[0] != method {
            continue;
        }
        let p = |i: usize| f[i].parse::<f64>().map_err(|_| CliError::malformed(path, format!("bad row `{line}`")));
        let key = (p(1)? as usize, p(2)? as usize);
        out.entry(key).or_default().push([p(3)?, p(4)?, p(5)?]);
    }
    Ok(out)
}

fn field_panels(ctx: &Context, eval_dir: &Path, out: &Path, panels: &mut Vec<PanelInfo>) -> CliResult<()> {
    let index_path = eval_dir.join(EVALUATION_FILE);
    require_files(&[index_path.clone(), eval_dir.join(PSD_CSV)])?;
    let index: EvaluationIndex = read_json(&index_path)?;
    let mut needed = Vec::new();
    for p in &index.patches {
        needed.push(eval_dir.join(&p.original_file));
        needed.push(p.mean_file.clone());
        needed.push(p.sigma_file.clone());
    }
    require_files(&needed)?;

    // (a) log-PSD overlay: solid raw, dashed reconstruction, first file only
    let psd = read_psd(&eval_dir.join(PSD_CSV), METHOD_CUMOLOS)?;
    let plot_gates = &ctx.config.metrics.plot_gates;
    let mut series = Vec::new();
    let mut names = Vec::new();
    let selected = psd
        .iter()
        .filter(|((f, g), _)| *f == psd.keys().next().map_or(0, |k| k.0) && plot_gates.contains(g));
    for (k, ((_, gate), rows)) in selected.enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts = |col: usize| {
            rows.iter()
                .filter(|r| r[0] > 0.0 && r[col] > 0.0)
                .map(|r| (r[0].log10(), r[col].log10()))
                .collect::<Vec<_>>()
        };
        series.push(Series { points: pts(1), colour, dashed: false });
        series.push(Series { points: pts(2), colour, dashed: true });
        names.push(format!("gate {gate} raw"));
        names.push(format!("gate {gate} reconstructed"));
    }
    let img = line_chart(&series, 640, 480);
    save(out, PSD_IMAGE, &img)?;
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let ext = |f: fn(&(f64, f64)) -> f64| {
        let v: Vec<f64> = all.iter().map(f).collect();
        [v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max)]
    };
    panels.push(PanelInfo {
        file: PSD_IMAGE.into(),
        kind: "log_psd".into(),
        patch_id: None,
        width_px: img.width(),
        height_px: img.height(),
        x_axis: "log10 frequency [Hz]".into(),
        y_axis: "log10 PSD [m^2 s^-2 Hz^-1]".into(),
        x_extent: ext(|p| p.0),
        y_extent: ext(|p| p.1),
        value_range: None,
        colormap: None,
        series: names,
    });

    // (b)–(d) original, ensemble mean and σ share one spatial frame
    let read = |p: &Path| -> CliResult<Array2<f64>> { Ok(read_binary::<f64>(p)?.velocity) };
    for p in &index.patches {
        let original = read(&eval_dir.join(&p.original_file))?;
        let mean = read(&p.mean_file)?;
        let sigma = read(&p.sigma_file)?;
        let (h, w) = original.dim();
        let x_extent = [p.t_origin as f64 * index.time_step_s, (p.t_origin + h) as f64 * index.time_step_s];
        let y_extent = [p.g_origin as f64 * index.gate_spacing_m, (p.g_origin + w) as f64 * index.gate_spacing_m];
        let s_max = sigma.iter().copied().fold(0.0f64, f64::max).max(1e-6);
        let v = cumolos_core::field_io::VELOCITY_SCALE;
        for (kind, arr, lo, hi, cmap) in [
            ("original", &original, -v, v, Colormap::Diverging),
            ("mean", &mean, -v, v, Colormap::Diverging),
            ("sigma", &sigma, 0.0, s_max, Colormap::Sequential),
        ] {
            let img = heatmap(arr, lo, hi, cmap, PIXEL_SCALE);
            let file = format!("{kind}_{:04}.png", p.index);
            save(out, &file, &img)?;
            panels.push(PanelInfo {
                file,
                kind: kind.into(),
                patch_id: Some(p.id.clone()),
                width_px: img.width(),
                height_px: img.height(),
                x_axis: "time since start [s]".into(),
                y_axis: "altitude above first gate [m]".into(),
                x_extent,
                y_extent,
                value_range: Some([lo, hi]),
                colormap: Some(cmap.name().into()),
                series: Vec::new(),
            });
        }
    }
    Ok(())
}

fn log_files(logs: &[PathBuf]) -> Vec<PathBuf> {
    logs.iter()
        .map(|p| if p.is_dir() { p.join(super::train::LOG_FILE) } else { p.clone() })
        .collect()
}

fn loss_panel(logs: &[PathBuf], out: &Path, panels: &mut Vec<PanelInfo>) -> CliResult<()> {
    let files = log_files(logs);
    let mut series = Vec::new();
    let mut names = Vec::new();
    for (k, path) in files.iter().enumerate() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let log = TrainingLog::from_csv(&text).map_err(|e| CliError::malformed(path, e))?;
        series.push(Series {
            points: log.records.iter().map(|r| (r.epoch as f64, r.mean_loss)).collect(),
            colour: PALETTE[k % PALETTE.len()],
            dashed: false,
        });
        names.push(path.display().to_string());
    }
    let img = line_chart(&series, 640, 480);
    save(out, LOSS_CURVES_FILE, &img)?;
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let span = |f: fn(&(f64, f64)) -> f64| {
        [pts.iter().map(f).fold(f64::INFINITY, f64::min), pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max)]
    };
    panels.push(PanelInfo {
        file: LOSS_CURVES_FILE.into(),
        kind: "loss_curves".into(),
        patch_id: None,
        width_px: img.width(),
        height_px: img.height(),
        x_axis: "epoch".into(),
        y_axis: "mean masked MSE (normalized)".into(),
        x_extent: span(|p| p.0),
        y_extent: span(|p| p.1),
        value_range: None,
        colormap: None,
        series: names,
    });
    Ok(())
}

pub fn run(ctx: &Context, args: &PlotArgs) -> CliResult<PathBuf> {
    ctx.config.validate()?;
    if args.eval_dir.is_none() && args.loss.is_empty() {
        return Err(CliError::config("plot needs an evaluation directory and/or --loss logs"));
    }
    // check inputs before creating the run directory
    if let Some(d) = &args.eval_dir {
        require_files(&[d.join(EVALUATION_FILE), d.join(PSD_CSV)])?;
    }
    require_files(&log_files(&args.loss))?;
    let dir = ctx.run_dir("plot")?;
    let mut panels = Vec::new();
    if let Some(d) = &args.eval_dir {
        field_panels(ctx, d, &dir, &mut panels)?;
    }
    if !args.loss.is_empty() {
        loss_panel(&args.loss, &dir, &mut panels)?;
    }
    note(format!("plot: {} images", panels.len()));
    write_json(&dir.join(PANELS_FILE), &panels)?;
    Ok(dir)
}
