//! Versioned binary checkpoints: magic, format version, a JSON header and
//! little-endian f64 parameter (and optional optimizer moment) payloads.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_io::VELOCITY_SCALE;
use crate::mae_model::{count_parameters, MaeModel, ModelConfig};
use crate::patching::CurriculumSchedule;
use crate::scalar::Scalar;
use crate::training::{AdamW, TrainConfig, Trainer, TrainingLog};

const MAGIC: &[u8; 8] = b"CMLSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub schedule: CurriculumSchedule,
    pub velocity_scale: f64,
    pub epochs_completed: usize,
    pub steps_completed: usize,
    pub dtype: String,
    pub parameter_count: usize,
    pub optimizer_step: Option<u64>,
    pub log: TrainingLog,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
    /// Adam first and second moments, present when saved mid-training.
    pub moments: Option<(Vec<f64>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_trainer<T: Scalar>(trainer: &Trainer<T>) -> Self {
        let to64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        let opt = &trainer.optimizer;
        Self {
            header: CheckpointHeader {
                version: CHECKPOINT_VERSION,
                model_config: trainer.model.config().clone(),
                train_config: trainer.config.clone(),
                schedule: trainer.schedule.clone(),
                velocity_scale: VELOCITY_SCALE,
                epochs_completed: trainer.epoch,
                steps_completed: trainer.step,
                dtype: T::DTYPE.to_string(),
                parameter_count: trainer.model.num_parameters(),
                optimizer_step: Some(opt.step),
                log: trainer.log.clone(),
            },
            params: to64(trainer.model.params()),
            moments: Some((to64(&opt.first_moment), to64(&opt.second_moment))),
        }
    }

    /// Model weights in the requested precision; fails if the stored
    /// configuration differs from `expected` (when given).
    pub fn model<T: Scalar>(&self, expected: Option<&ModelConfig>) -> Result<MaeModel<T>> {
        if let Some(cfg) = expected {
            if cfg != &self.header.model_config {
                return Err(Error::State(format!(
                    "checkpoint v{} was written for model config {:?}, requested {:?}",
                    self.header.version, self.header.model_config, cfg
                )));
            }
        }
        MaeModel::from_params(
            self.header.model_config.clone(),
            self.params.iter().map(|&v| T::of(v)).collect(),
        )
    }

    /// Rebuilds a trainer positioned after the stored epoch so that the
    /// remaining epochs replay exactly as in an uninterrupted run.
    pub fn resume<T: Scalar>(
        &self,
        dataset: &[crate::field_io::PatchSample<T>],
        train_config: TrainConfig,
    ) -> Result<Trainer<T>> {
        let model = self.model::<T>(None)?;
        let mut trainer = Trainer::with_model(dataset, model, train_config, self.header.schedule.clone())?;
        if let (Some((m, v)), Some(step)) = (&self.moments, self.header.optimizer_step) {
            let cast = |x: &[f64]| x.iter().map(|&a| T::of(a)).collect();
            trainer.optimizer.restore(step, cast(m), cast(v))?;
        } else {
            trainer.optimizer = AdamW::for_model(&trainer.config, &trainer.model);
        }
        trainer.epoch = self.header.epochs_completed;
        trainer.step = self.header.steps_completed;
        trainer.log = self.header.log.clone();
        Ok(trainer)
    }
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64]) {
    buf.reserve(v.len() * 8);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

/// Writes to a temporary sibling file and renames it into place.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = serde_json::to_vec(&ckpt.header)
        .map_err(|e| Error::format(path, format!("serializing header: {e}")))?;
    let mut buf = Vec::with_capacity(16 + header.len() + ckpt.params.len() * 24);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    put_f64s(&mut buf, &ckpt.params);
    buf.push(ckpt.moments.is_some() as u8);
    if let Some((m, v)) = &ckpt.moments {
        put_f64s(&mut buf, m);
        put_f64s(&mut buf, v);
    }
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&buf).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |r: &str| Error::format(path, r.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::State(format!(
            "checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
    let n = header.parameter_count;
    if n != count_parameters(&header.model_config) {
        return Err(Error::State("parameter count does not match stored model config".into()));
    }
    let mut rest = &body[hlen..];
    let params = take_f64s(&mut rest, n).ok_or_else(|| bad("truncated payload"))?;
    let flag = take_flag(&mut rest).ok_or_else(|| bad("missing optimizer flag"))?;
    let moments = if flag {
        let m = take_f64s(&mut rest, n);
        let v = take_f64s(&mut rest, n);
        Some(m.zip(v).ok_or_else(|| bad("truncated optimizer state"))?)
    } else {
        None
    };
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint {
        header,
        params,
        moments,
    })
}

fn take_f64s(rest: &mut &[u8], count: usize) -> Option<Vec<f64>> {
    if rest.len() < count * 8 {
        return None;
    }
    let (head, tail) = rest.split_at(count * 8);
    *rest = tail;
    Some(
        head.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    )
}

fn take_flag(rest: &mut &[u8]) -> Option<bool> {
    let (&b, tail) = rest.split_first()?;
    *rest = tail;
    Some(b != 0)
}
