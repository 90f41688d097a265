use std::path::PathBuf;

use cumolos_core::field_io::{generate_synthetic, synthetic_truth, write_binary, write_netcdf};
use serde::Serialize;

use super::{note, Context};
use crate::error::CliResult;
use crate::io::write_json;

#[derive(Debug, Serialize)]
struct SynthManifest {
    observed: Vec<PathBuf>,
    truth: Vec<PathBuf>,
    netcdf: Vec<PathBuf>,
    seeds: Vec<u64>,
}

/// Writes `synthetic.days` day files; day `i` uses seed `seed + i`.
pub fn run(ctx: &Context) -> CliResult<PathBuf> {
    ctx.config.validate()?;
    let dir = ctx.run_dir("synth")?;
    let s = &ctx.config.synthetic;
    let mut manifest = SynthManifest {
        observed: Vec::new(),
        truth: Vec::new(),
        netcdf: Vec::new(),
        seeds: Vec::new(),
    };
    for day in 0..s.days as u64 {
        let seed = s.spec.seed.wrapping_add(day);
        let field = generate_synthetic::<f32>(&s.spec, seed)?;
        let path = dir.join(format!("day_{seed}.cmls"));
        write_binary(&path, &field)?;
        manifest.observed.push(path);
        if s.write_netcdf {
            let path = dir.join(format!("day_{seed}.nc"));
            write_netcdf(&path, &field, &ctx.config.field_io.variables)?;
            manifest.netcdf.push(path);
        }
        if s.write_truth {
            let path = dir.join(format!("truth_{seed}.cmls"));
            write_binary(&path, &synthetic_truth::<f32>(&s.spec, seed)?)?;
            manifest.truth.push(path);
        }
        manifest.seeds.push(seed);
        note(format!("synth: day {} of {} (seed {seed})", day + 1, s.days));
    }
    write_json(&dir.join("synth.json"), &manifest)?;
    Ok(dir)
}
