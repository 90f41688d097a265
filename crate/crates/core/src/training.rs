//! AdamW optimisation of the masked autoencoder with a warmup + cosine
//! learning-rate schedule and per-epoch mask-ratio curriculum.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_io::PatchSample;
use crate::mae_model::{l2_norm, MaeModel, ModelConfig};
use crate::patching::{mask_ratio_at, sample_mask, tokenize, tokenize_validity, CurriculumSchedule, TokenGrid};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_scale_denominator: usize,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Loss levels whose first crossing epoch is recorded in the log.
    pub loss_thresholds: Vec<f64>,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 32,
            base_lr: 1.5e-4,
            lr_scale_denominator: 256,
            weight_decay: 0.05,
            warmup_epochs: 30,
            seed: 0,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            max_grad_norm: None,
            loss_thresholds: vec![0.20, 0.189],
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// `base_lr · batch_size / lr_scale_denominator`.
    pub fn effective_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / self.lr_scale_denominator as f64
    }

    /// Returns every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epochs == 0 {
            out.push("training.epochs must be positive".to_string());
        }
        if self.batch_size == 0 {
            out.push("training.batch_size must be positive".to_string());
        }
        if self.lr_scale_denominator == 0 {
            out.push("training.lr_scale_denominator must be positive".to_string());
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            out.push(format!("training.base_lr must be finite and >= 0, got {}", self.base_lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            out.push(format!("training.weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.warmup_epochs > self.epochs {
            out.push(format!(
                "training.warmup_epochs ({}) exceeds epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push(format!("training.{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            out.push("training.eps must be positive".to_string());
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                out.push("training.max_grad_norm must be positive".to_string());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().as_slice() {
            [] => Ok(()),
            p => Err(Error::Parameter(p.join("; "))),
        }
    }
}

/// Learning rate at a (possibly fractional) epoch: linear warmup to the
/// effective rate, then half-cosine decay to zero at `epochs`.
pub fn lr_at(config: &TrainConfig, epoch: f64) -> Result<f64> {
    let total = config.epochs as f64;
    if !(0.0..=total).contains(&epoch) {
        return Err(Error::Parameter(format!("epoch {epoch} outside [0, {total}]")));
    }
    let peak = config.effective_lr();
    let warm = config.warmup_epochs as f64;
    if epoch < warm {
        return Ok(peak * epoch / warm);
    }
    if total <= warm {
        return Ok(peak);
    }
    let progress = (epoch - warm) / (total - warm);
    Ok(peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    decay_mask: Vec<bool>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: &TrainConfig, decay_mask: Vec<bool>) -> Self {
        let n = decay_mask.len();
        Self {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
            step: 0,
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
            decay_mask,
        }
    }

    /// Decay mask covering every parameter of `model` (linear weights only).
    pub fn for_model(config: &TrainConfig, model: &MaeModel<T>) -> Self {
        let mut mask = vec![false; model.num_parameters()];
        for entry in model.layout().entries {
            mask[entry.slot.range()].iter_mut().for_each(|m| *m = entry.decay);
        }
        Self::new(config, mask)
    }

    pub fn restore(&mut self, step: u64, first: Vec<T>, second: Vec<T>) -> Result<()> {
        if first.len() != self.decay_mask.len() || second.len() != self.decay_mask.len() {
            return Err(Error::State("optimizer state length does not match model".into()));
        }
        self.step = step;
        self.first_moment = first;
        self.second_moment = second;
        Ok(())
    }

    /// One update. Decay multiplies by `1 − lr·weight_decay` before the
    /// adaptive step, so zero gradients leave exactly that factor.
    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - self.beta1.powi(t));
        let bc2 = T::of(1.0 - self.beta2.powi(t));
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, eps, lr_t) = (T::one(), T::of(self.eps), T::of(lr));
        let shrink = T::of(1.0 - lr * self.weight_decay);
        for i in 0..params.len() {
            let g = grads[i];
            let m = b1 * self.first_moment[i] + (one - b1) * g;
            let v = b2 * self.second_moment[i] + (one - b2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            if self.decay_mask[i] {
                params[i] *= shrink;
            }
            params[i] -= lr_t * (m / bc1) / ((v / bc2).sqrt() + eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mask_ratio: f64,
    pub lr: f64,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str = "epoch,mask_ratio,lr,mean_loss";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{},{},{:e},{}", r.epoch, r.mask_ratio, r.lr, r.mean_loss);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(Self::CSV_HEADER) {
            return Err(Error::Parameter(format!(
                "training log must start with `{}`",
                Self::CSV_HEADER
            )));
        }
        let bad = |l: &str| Error::Parameter(format!("malformed training log row `{l}`"));
        let records = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').map(str::trim).collect();
                if f.len() != 4 {
                    return Err(bad(l));
                }
                Ok(EpochRecord {
                    epoch: f[0].parse().map_err(|_| bad(l))?,
                    mask_ratio: f[1].parse().map_err(|_| bad(l))?,
                    lr: f[2].parse().map_err(|_| bad(l))?,
                    mean_loss: f[3].parse().map_err(|_| bad(l))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    /// First epoch whose mean loss is at or below `threshold`.
    pub fn first_epoch_below(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.mean_loss <= threshold)
            .map(|r| r.epoch)
    }

    /// `(threshold, first crossing epoch)` for every threshold.
    pub fn threshold_epochs(&self, thresholds: &[f64]) -> Vec<(f64, Option<usize>)> {
        thresholds.iter().map(|&t| (t, self.first_epoch_below(t))).collect()
    }
}

struct Prepared<T> {
    grid: TokenGrid<T>,
    validity: Array2<bool>,
}

/// Stateful training loop; epochs can be run one at a time so callers can
/// checkpoint between them.
pub struct Trainer<T> {
    pub model: MaeModel<T>,
    pub optimizer: AdamW<T>,
    pub config: TrainConfig,
    pub schedule: CurriculumSchedule,
    pub log: TrainingLog,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Number of completed optimizer steps.
    pub step: usize,
    data: Vec<Prepared<T>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(
        dataset: &[PatchSample<T>],
        model_config: ModelConfig,
        config: TrainConfig,
        schedule: CurriculumSchedule,
    ) -> Result<Self> {
        let model = MaeModel::new(model_config, config.seed)?;
        Self::with_model(dataset, model, config, schedule)
    }

    pub fn with_model(
        dataset: &[PatchSample<T>],
        model: MaeModel<T>,
        config: TrainConfig,
        schedule: CurriculumSchedule,
    ) -> Result<Self> {
        config.validate()?;
        schedule.validate()?;
        if dataset.is_empty() {
            return Err(Error::Parameter("training dataset is empty".into()));
        }
        let data = dataset
            .iter()
            .map(|p| {
                Ok(Prepared {
                    grid: tokenize(p)?,
                    validity: tokenize_validity(&p.validity)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let optimizer = AdamW::for_model(&config, &model);
        Ok(Self {
            model,
            optimizer,
            config,
            schedule,
            log: TrainingLog::default(),
            epoch: 0,
            step: 0,
            data,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn steps_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.config.batch_size)
    }

    /// Runs the next epoch and returns its log record.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        if self.is_finished() {
            return Err(Error::State(format!(
                "all {} epochs already completed",
                self.config.epochs
            )));
        }
        let epoch = self.epoch;
        let ratio = mask_ratio_at(&self.schedule, epoch as i64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut rng);
        let mask_seeds: Vec<u64> = order.iter().map(|_| rng.next_u64()).collect();

        let steps = self.steps_per_epoch();
        let mut losses = Vec::with_capacity(order.len());
        let bs = self.config.batch_size;
        for (b, (batch, seeds)) in order.chunks(bs).zip(mask_seeds.chunks(bs)).enumerate() {
            let lr = lr_at(&self.config, epoch as f64 + b as f64 / steps as f64)?;
            let model = &self.model;
            let data = &self.data;
            let results = batch
                .par_iter()
                .zip(seeds.par_iter())
                .map(|(&i, &seed)| {
                    let sample = &data[i];
                    let mask = sample_mask(sample.grid.len(), ratio, seed)?;
                    model.loss_and_grad(&sample.grid, &mask, &sample.validity)
                })
                .collect::<Result<Vec<_>>>()?;

            let inv = T::of(1.0 / results.len() as f64);
            let mut grad = vec![T::zero(); self.model.num_parameters()];
            let mut batch_loss = T::zero();
            for (loss, g) in &results {
                batch_loss += *loss;
                grad.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                losses.push(*loss);
            }
            grad.iter_mut().for_each(|v| *v *= inv);
            if !(batch_loss * inv).is_finite() || grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: self.step,
                    lr,
                    mask_ratio: ratio,
                    param_norm: l2_norm(self.model.params()),
                });
            }
            if let Some(max) = self.config.max_grad_norm {
                let norm = l2_norm(&grad);
                if norm > max {
                    let s = T::of(max / norm);
                    grad.iter_mut().for_each(|v| *v *= s);
                }
            }
            self.optimizer.update(self.model.params_mut(), &grad, lr);
            self.step += 1;
        }

        let mean_loss = crate::scalar::pairwise_sum(&losses).as_f64() / losses.len() as f64;
        let record = EpochRecord {
            epoch,
            mask_ratio: ratio,
            lr: lr_at(&self.config, epoch as f64)?,
            mean_loss,
        };
        self.log.records.push(record.clone());
        self.epoch += 1;
        Ok(record)
    }

    /// Runs all remaining epochs, calling `after_epoch` once per epoch.
    pub fn run<F>(&mut self, mut after_epoch: F) -> Result<()>
    where
        F: FnMut(&Self) -> Result<()>,
    {
        while !self.is_finished() {
            self.run_epoch()?;
            after_epoch(self)?;
        }
        Ok(())
    }

    /// Whether the configured checkpoint cadence calls for a save now.
    pub fn checkpoint_due(&self) -> bool {
        self.is_finished()
            || (self.config.checkpoint_every > 0 && self.epoch % self.config.checkpoint_every == 0)
    }
}

/// Result of a complete training run.
pub struct TrainOutcome<T> {
    pub model: MaeModel<T>,
    pub optimizer: AdamW<T>,
    pub log: TrainingLog,
    pub threshold_epochs: Vec<(f64, Option<usize>)>,
}

/// Trains a fresh model for `train_config.epochs` epochs.
pub fn train<T: Scalar>(
    dataset: &[PatchSample<T>],
    model_config: ModelConfig,
    train_config: TrainConfig,
    schedule: CurriculumSchedule,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(dataset, model_config, train_config, schedule)?;
    trainer.run(|_| Ok(()))?;
    let threshold_epochs = trainer.log.threshold_epochs(&trainer.config.loss_thresholds);
    Ok(TrainOutcome {
        model: trainer.model,
        optimizer: trainer.optimizer,
        log: trainer.log,
        threshold_epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn effective_lr_default() {
        assert!(close(TrainConfig::default().effective_lr(), 1.875e-5, 1e-12));
    }

    #[test]
    fn lr_schedule_examples() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(&c, 0.0).unwrap(), 0.0);
        assert!(close(lr_at(&c, 30.0).unwrap(), 1.875e-5, 1e-12));
        assert!(lr_at(&c, 500.0).unwrap().abs() < 1e-20);
        assert!(close(lr_at(&c, 265.0).unwrap(), 1.875e-5 / 2.0, 1e-12));
        assert!(matches!(lr_at(&c, 500.5), Err(Error::Parameter(_))));
        assert!(matches!(lr_at(&c, -0.1), Err(Error::Parameter(_))));
    }

    #[test]
    fn lr_continuous_at_warmup_and_non_negative() {
        let c = TrainConfig::default();
        let below = lr_at(&c, 30.0 - 1e-9).unwrap();
        let at = lr_at(&c, 30.0).unwrap();
        assert!((below - at).abs() < 1e-14);
        for k in 0..=5000 {
            assert!(lr_at(&c, k as f64 * 0.1).unwrap() >= 0.0);
        }
    }

    #[test]
    fn zero_gradient_update_is_pure_decay() {
        let config = TrainConfig::default();
        let mut opt = AdamW::<f64>::new(&config, vec![true, false, true]);
        let mut p = vec![1.5, -2.0, 0.25];
        let lr = 1e-3;
        opt.update(&mut p, &[0.0; 3], lr);
        let f = 1.0 - lr * config.weight_decay;
        assert_eq!(p, vec![1.5 * f, -2.0, 0.25 * f]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut config = TrainConfig::default();
        config.weight_decay = 0.0;
        let mut opt = AdamW::<f64>::new(&config, vec![false; 2]);
        let mut p = vec![0.0, 0.0];
        opt.update(&mut p, &[0.3, -5.0], 0.01);
        // bias-corrected first step is sign(g)·lr up to eps
        assert!(close(p[0], -0.01, 1e-6));
        assert!(close(p[1], 0.01, 1e-6));
    }

    #[test]
    fn invalid_configs_are_listed_together() {
        let c = TrainConfig {
            epochs: 10,
            warmup_epochs: 20,
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert_eq!(c.problems().len(), 2);
    }

    #[test]
    fn csv_roundtrip_and_thresholds() {
        let log = TrainingLog {
            records: vec![
                EpochRecord { epoch: 0, mask_ratio: 0.5, lr: 0.0, mean_loss: 0.3 },
                EpochRecord { epoch: 1, mask_ratio: 0.5, lr: 1e-5, mean_loss: 0.195 },
                EpochRecord { epoch: 2, mask_ratio: 0.5, lr: 2e-5, mean_loss: 0.18 },
            ],
        };
        let csv = log.to_csv();
        assert!(csv.starts_with("epoch,mask_ratio,lr,mean_loss\n"));
        assert_eq!(TrainingLog::from_csv(&csv).unwrap(), log);
        assert_eq!(log.threshold_epochs(&[0.20, 0.189]), vec![(0.20, Some(1)), (0.189, Some(2))]);
        assert_eq!(log.first_epoch_below(0.1), None);
    }

    fn random_patches(n: usize, size: usize, seed: u64) -> Vec<PatchSample<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let phase: f32 = rng.gen_range(0.0..6.0);
                PatchSample::from_values(Array2::from_shape_fn((size, size), |(i, j)| {
                    0.5 * ((i as f32 * 0.4 + phase).sin() * (j as f32 * 0.3).cos())
                }))
            })
            .collect()
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            encoder_layers: 1,
            decoder_layers: 1,
            encoder_dim: 16,
            decoder_dim: 16,
            encoder_heads: 2,
            decoder_heads: 2,
            mlp_ratio: 2.0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn two_epoch_smoke_run() {
        let data = random_patches(8, 16, 1);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            warmup_epochs: 1,
            base_lr: 1e-2,
            ..TrainConfig::default()
        };
        let out = train(&data, small_model(), config, CurriculumSchedule::default()).unwrap();
        assert_eq!(out.log.records.len(), 2);
        assert!(out.log.records.iter().all(|r| r.mean_loss.is_finite()));
    }

    #[test]
    fn disabled_curriculum_logs_constant_ratio() {
        let data = random_patches(4, 16, 2);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            warmup_epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&data, small_model(), config, CurriculumSchedule::fixed()).unwrap();
        assert!(out.log.records.iter().all(|r| r.mask_ratio == 0.7));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let data = random_patches(6, 16, 3);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 3,
            warmup_epochs: 1,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&data, small_model(), config.clone(), CurriculumSchedule::default()).unwrap();
        let b = train(&data, small_model(), config, CurriculumSchedule::default()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.params(), b.model.params());
    }

    #[test]
    fn empty_dataset_rejected() {
        let r = Trainer::<f32>::new(&[], small_model(), TrainConfig::default(), CurriculumSchedule::default());
        assert!(matches!(r, Err(Error::Parameter(_))));
    }

    #[test]
    fn diverging_run_reports_state() {
        let data = random_patches(2, 16, 4);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 2,
            warmup_epochs: 0,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&data, small_model(), config, CurriculumSchedule::default()).unwrap();
        trainer.model.params_mut()[0] = f32::NAN;
        match trainer.run_epoch() {
            Err(Error::NonFiniteLoss { epoch: 0, step: 0, .. }) => {}
            other => panic!("expected non-finite abort, got {:?}", other.map(|_| ())),
        }
    }
}
