//! Loss, optimizer, and the 3-stage fine-tuning schedule: linear
//! learning-rate warm-up with the encoder frozen, exponential decay from
//! the following epoch, and encoder unfreezing at a fixed later epoch.
//! Epochs are 1-based throughout.

use thiserror::Error;

use crate::eval::{compute_eer, EvalError, Label, ScoreRecord, ScoreSet};
use crate::model::{Model, Utterance};
use crate::rng::{stream_rng, Stream};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("epoch {epoch} outside schedule range 1..={total}")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch} ({value})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },
    #[error("empty training set")]
    EmptyData,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Whether the upstream encoder is ever updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Encoder frozen at every epoch; merge block and head still train.
    Fixed,
    /// Encoder unfreezes at `unfreeze_epoch`.
    #[default]
    FineTuned,
}

/// The staged learning-rate and freeze plan.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub warmup_epochs: usize,
    /// Exponential decay ratio per epoch after warm-up, in (0,1).
    pub decay: f64,
    pub unfreeze_epoch: usize,
    pub peak_lr: f64,
    pub total_epochs: usize,
    pub strategy: Strategy,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 5,
            decay: 0.9,
            unfreeze_epoch: 11,
            peak_lr: 1e-4,
            total_epochs: 20,
            strategy: Strategy::FineTuned,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.warmup_epochs >= self.unfreeze_epoch || self.unfreeze_epoch > self.total_epochs {
            return Err(TrainError::InvalidSchedule(format!(
                "need warmup_epochs < unfreeze_epoch <= total_epochs, got {} / {} / {}",
                self.warmup_epochs, self.unfreeze_epoch, self.total_epochs
            )));
        }
        if self.decay.is_nan() || self.decay <= 0.0 || self.decay >= 1.0 {
            return Err(TrainError::InvalidSchedule(format!(
                "decay {} outside (0,1)",
                self.decay
            )));
        }
        if self.peak_lr.is_nan() || self.peak_lr <= 0.0 {
            return Err(TrainError::InvalidSchedule(format!(
                "peak_lr {} must be positive",
                self.peak_lr
            )));
        }
        if self.warmup_epochs == 0 {
            return Err(TrainError::InvalidSchedule(
                "warmup_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate at a 1-based epoch: linear ramp to the peak over the
/// warm-up epochs, then `peak * decay^(epoch - warmup)`. Continuous at the
/// boundary.
pub fn lr_at(epoch: usize, schedule: &Schedule) -> Result<f64, TrainError> {
    if epoch == 0 || epoch > schedule.total_epochs {
        return Err(TrainError::EpochOutOfRange {
            epoch,
            total: schedule.total_epochs,
        });
    }
    Ok(if epoch <= schedule.warmup_epochs {
        schedule.peak_lr * epoch as f64 / schedule.warmup_epochs as f64
    } else {
        schedule.peak_lr * schedule.decay.powi((epoch - schedule.warmup_epochs) as i32)
    })
}

/// Freeze state for an epoch; merge block and head are always trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeState {
    pub encoder_frozen: bool,
}

pub fn frozen_at(epoch: usize, schedule: &Schedule) -> FreezeState {
    let encoder_frozen = match schedule.strategy {
        Strategy::Fixed => true,
        Strategy::FineTuned => epoch < schedule.unfreeze_epoch,
    };
    FreezeState { encoder_frozen }
}

/// Adam hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moments, keyed by parameter name.
#[derive(Debug, Clone)]
struct MomentSlot {
    name: String,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state carried across epochs.
#[derive(Debug, Clone, Default)]
pub struct TrainState {
    pub epoch: usize,
    step: u64,
    slots: Vec<MomentSlot>,
}

impl TrainState {
    /// Fresh state positioned at the given 1-based epoch.
    pub fn at_epoch(epoch: usize) -> Self {
        Self {
            epoch,
            ..Self::default()
        }
    }

    /// Create zeroed moment slots for every parameter on first use.
    fn ensure_slots(&mut self, entries: &[(String, &Tensor)]) {
        if !self.slots.is_empty() {
            return;
        }
        self.slots = entries
            .iter()
            .map(|(name, t)| MomentSlot {
                name: name.clone(),
                m: vec![0.0; t.len()],
                v: vec![0.0; t.len()],
            })
            .collect();
    }

    fn slot(&mut self, index: usize, name: &str) -> &mut MomentSlot {
        let slot = &mut self.slots[index];
        debug_assert_eq!(slot.name, name, "optimizer state misaligned");
        slot
    }
}

/// Batch construction and optimization knobs.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 8,
            adam: AdamConfig::default(),
            clip_norm: None,
            seed: 0,
        }
    }
}

/// Cross-entropy of 2-class logits against the label, on the tape.
pub fn cross_entropy_tape(tape: &mut Tape, logits: Var, label: Label) -> Result<Var, TensorError> {
    let lse = tape.logsumexp(logits)?;
    let target = tape.pick(logits, label.class_index())?;
    tape.sub(lse, target)
}

/// Deterministic shuffled batches of `0..n` for one epoch.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, Stream::Shuffle(epoch as u64));
    order.shuffle(&mut rng);
    order
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect()
}

/// One optimization pass over the given batches: forward, 2-class
/// cross-entropy, backward, Adam step per batch at the epoch's learning
/// rate, honoring the epoch's freeze state. Returns the mean per-utterance
/// loss.
pub fn train_epoch(
    model: &mut Model,
    data: &[Utterance],
    batches: &[Vec<usize>],
    state: &mut TrainState,
    schedule: &Schedule,
    options: &TrainOptions,
) -> Result<f64, TrainError> {
    if data.is_empty() || batches.iter().all(|b| b.is_empty()) {
        return Err(TrainError::EmptyData);
    }
    let epoch = state.epoch;
    let lr = lr_at(epoch, schedule)?;
    let freeze = frozen_at(epoch, schedule);
    if let Some(enc) = model.encoder_mut() {
        enc.set_frozen(freeze.encoder_frozen);
    }
    state.ensure_slots(&model.entries());

    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;

    for (batch_index, batch) in batches.iter().enumerate() {
        if batch.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let vars = model.push(&mut tape);
        let mut total: Option<Var> = None;
        for &idx in batch {
            let utt = &data[idx];
            let logits = model.logits_tape(&mut tape, &vars, utt)?;
            let ce = cross_entropy_tape(&mut tape, logits, utt.label)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, ce)?,
                None => ce,
            });
        }
        let total = total.expect("non-empty batch");
        let loss = tape.scale(total, 1.0 / batch.len() as f64);
        let loss_value = tape.value(loss).as_scalar().expect("scalar loss");
        if !loss_value.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: batch_index,
                value: loss_value,
            });
        }
        loss_sum += loss_value * batch.len() as f64;
        loss_count += batch.len();

        let grads = tape.backward(loss)?;

        // (name, var) handles ordered exactly like Model::entries_mut
        let var_entries: Vec<(String, Var)> = vars.entries();

        let mut grad_tensors: Vec<Option<Tensor>> = var_entries
            .iter()
            .map(|(_, v)| grads.get(*v).cloned())
            .collect();

        if let Some(max_norm) = options.clip_norm {
            let norm_sq: f64 = grad_tensors
                .iter()
                .flatten()
                .flat_map(|g| g.data())
                .map(|&v| v * v)
                .sum();
            let norm = norm_sq.sqrt();
            if norm > max_norm {
                let factor = max_norm / norm;
                for g in grad_tensors.iter_mut().flatten() {
                    for v in g.data_mut() {
                        *v *= factor;
                    }
                }
            }
        }

        state.step += 1;
        let t = state.step as i32;
        let adam = &options.adam;
        let bias1 = 1.0 - adam.beta1.powi(t);
        let bias2 = 1.0 - adam.beta2.powi(t);

        let entries = model.entries_mut();
        debug_assert_eq!(entries.len(), var_entries.len());
        for (slot_idx, ((name, tensor), (var_name, _))) in
            entries.into_iter().zip(&var_entries).enumerate()
        {
            debug_assert_eq!(&name, var_name, "parameter traversal misaligned");
            let Some(grad) = &grad_tensors[slot_idx] else {
                // frozen or unused parameter: skipped by the optimizer
                continue;
            };
            let slot = state.slot(slot_idx, &name);
            let data = tensor.data_mut();
            for i in 0..data.len() {
                let g = grad.data()[i];
                slot.m[i] = adam.beta1 * slot.m[i] + (1.0 - adam.beta1) * g;
                slot.v[i] = adam.beta2 * slot.v[i] + (1.0 - adam.beta2) * g * g;
                let m_hat = slot.m[i] / bias1;
                let v_hat = slot.v[i] / bias2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + adam.epsilon);
            }
        }
    }

    Ok(loss_sum / loss_count as f64)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub encoder_frozen: bool,
    pub train_loss: f64,
    pub dev_eer: Option<f64>,
}

/// Full training log, exportable as CSV.
#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,frozen_flag,train_loss,dev_eer\n");
        for r in &self.records {
            let dev = r.dev_eer.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.lr, r.encoder_frozen, r.train_loss, dev
            ));
        }
        out
    }
}

/// Result of a full training run.
pub struct FitResult {
    pub log: TrainingLog,
    /// Parameters from the epoch with the best dev EER (or the final epoch
    /// when no dev set was given).
    pub best_model: Model,
    pub best_epoch: usize,
    pub best_dev_eer: Option<f64>,
}

/// Score every utterance with the current model.
pub fn score_all(model: &Model, data: &[Utterance]) -> Result<ScoreSet, TrainError> {
    let mut records = Vec::with_capacity(data.len());
    for utt in data {
        records.push(ScoreRecord {
            utterance_id: utt.id().to_string(),
            label: utt.label,
            score: model.score(utt)?,
        });
    }
    Ok(ScoreSet::new(records)?)
}

/// Run the full schedule over the training set, tracking dev EER per epoch
/// and keeping the best-dev parameters.
pub fn fit(
    mut model: Model,
    train: &[Utterance],
    dev: Option<&[Utterance]>,
    schedule: &Schedule,
    options: &TrainOptions,
) -> Result<FitResult, TrainError> {
    schedule.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mut state = TrainState::default();
    let mut log = TrainingLog::default();
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 1..=schedule.total_epochs {
        state.epoch = epoch;
        let batches = make_batches(train.len(), options.batch_size, options.seed, epoch);
        let train_loss = train_epoch(&mut model, train, &batches, &mut state, schedule, options)?;

        let dev_eer = match dev {
            Some(dev_data) => Some(compute_eer(&score_all(&model, dev_data)?)?),
            None => None,
        };
        log.records.push(EpochRecord {
            epoch,
            lr: lr_at(epoch, schedule)?,
            encoder_frozen: frozen_at(epoch, schedule).encoder_frozen,
            train_loss,
            dev_eer,
        });
        if let Some(eer) = dev_eer {
            let better = match &best {
                Some((_, best_eer, _)) => eer < *best_eer,
                None => true,
            };
            if better {
                best = Some((epoch, eer, model.clone()));
            }
        }
    }

    let (best_epoch, best_dev_eer, best_model) = match best {
        Some((e, eer, m)) => (e, Some(eer), m),
        None => (schedule.total_epochs, None, model),
    };
    Ok(FitResult {
        log,
        best_model,
        best_epoch,
        best_dev_eer,
    })
}
