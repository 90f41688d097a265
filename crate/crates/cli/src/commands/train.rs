use std::path::{Path, PathBuf};

use cumolos_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use cumolos_core::training::Trainer;
use serde::Serialize;

use super::{note, Context};
use crate::error::{CliError, CliResult};
use crate::io::{load_patches, write_json, write_text};

pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    /// Overrides `paths.train_files` when non-empty.
    pub data: Vec<PathBuf>,
    pub resume: Option<PathBuf>,
    pub no_curriculum: bool,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    train_files: Vec<PathBuf>,
    patches: usize,
    parameters: usize,
    epochs_completed: usize,
    steps_completed: usize,
    resumed_from: Option<PathBuf>,
    final_loss: Option<f64>,
    /// `(threshold, first epoch at or below it)`.
    threshold_epochs: Vec<(f64, Option<usize>)>,
}

pub fn run(ctx: &Context, args: &TrainArgs) -> CliResult<PathBuf> {
    let mut config = ctx.config.clone();
    if args.no_curriculum {
        config.patching.curriculum.enabled = false;
    }
    config.validate()?;
    let files = if args.data.is_empty() {
        config.paths.train_files.clone()
    } else {
        args.data.clone()
    };
    if files.is_empty() {
        return Err(CliError::config("no training files: set paths.train_files or pass --data"));
    }
    let dataset: Vec<_> = load_patches(&files, &config)?.into_iter().map(|s| s.patch).collect();
    if dataset.is_empty() {
        return Err(CliError::config("training files yield no patches for the configured windows"));
    }

    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            // fails with a versioned state error on mismatch
            ckpt.model::<f32>(Some(&config.mae_model))?;
            ckpt.resume(&dataset, config.training.clone())?
        }
        None => Trainer::new(
            &dataset,
            config.mae_model.clone(),
            config.training.clone(),
            config.patching.curriculum,
        )?,
    };

    let ctx = Context {
        config,
        out_base: ctx.out_base.clone(),
    };
    let dir = ctx.run_dir("train")?;
    note(format!(
        "train: {} patches, {} parameters, epochs {}..{}",
        dataset.len(),
        trainer.model.num_parameters(),
        trainer.epoch,
        trainer.config.epochs
    ));
    let log_path = dir.join(LOG_FILE);
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    write_text(&log_path, &trainer.log.to_csv())?;
    while !trainer.is_finished() {
        let r = trainer.run_epoch()?;
        note(format!(
            "epoch {:>4}  mask {:.4}  lr {:.3e}  loss {:.6}",
            r.epoch, r.mask_ratio, r.lr, r.mean_loss
        ));
        write_text(&log_path, &trainer.log.to_csv())?;
        if trainer.checkpoint_due() {
            save(&ckpt_path, &trainer)?;
        }
    }
    // resuming an already finished run still leaves a checkpoint behind
    if !ckpt_path.exists() {
        save(&ckpt_path, &trainer)?;
    }

    let summary = TrainSummary {
        train_files: files,
        patches: dataset.len(),
        parameters: trainer.model.num_parameters(),
        epochs_completed: trainer.epoch,
        steps_completed: trainer.step,
        resumed_from: args.resume.clone(),
        final_loss: trainer.log.records.last().map(|r| r.mean_loss),
        threshold_epochs: trainer.log.threshold_epochs(&trainer.config.loss_thresholds),
    };
    write_json(&dir.join("train_summary.json"), &summary)?;
    Ok(dir)
}

fn save(path: &Path, trainer: &Trainer<f32>) -> CliResult<()> {
    save_checkpoint(path, &Checkpoint::from_trainer(trainer))?;
    Ok(())
}
