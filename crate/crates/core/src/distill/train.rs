//! Teacher training, baseline student training and distillation.

use std::time::Instant;

use mvkd_tensor::{no_grad, Rng, Stream, Tensor};
use serde::Serialize;

use super::config::DistillConfig;
use super::loss::{cross_entropy, kd_total_loss};
use super::optim::{AdamState, AdamW};
use super::stopping::{early_stopping_check, EarlyStopping, StopDecision};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::models::{build_model, CheckpointMeta, EpochRecord, Model, ModelConfig};

/// Batch size used for validation passes; evaluation results do not depend
/// on it because samples never interact inside a forward pass.
const EVAL_BATCH: usize = 64;

/// Which model is trained and with which loss.
#[derive(Clone, Copy)]
pub enum Phase<'a> {
    /// Cross-entropy training of the teacher.
    Teacher,
    /// Cross-entropy training of the student, no teacher.
    Baseline,
    /// Student trained on the combined loss against a fixed teacher.
    Distill { teacher: &'a Model },
}

impl Phase<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Teacher => "teacher",
            Phase::Baseline => "baseline",
            Phase::Distill { .. } => "distill",
        }
    }

    /// Index of the initialisation stream: the baseline and the distilled
    /// student start from the same weights for a given seed.
    fn init_role(&self) -> u64 {
        match self {
            Phase::Teacher => 0,
            Phase::Baseline | Phase::Distill { .. } => 1,
        }
    }
}

/// Everything a run accumulated.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub optimizer: AdamState,
    pub stopping: EarlyStopping,
    pub history: Vec<EpochRecord>,
    /// Seconds since the start of the run at the end of each epoch.
    pub wall_times: Vec<f64>,
}

impl TrainState {
    /// Best validation accuracy and its 1-based epoch, if any epoch ran.
    pub fn best(&self) -> Option<(f64, usize)> {
        Some((self.stopping.best?, self.stopping.best_index? + 1))
    }

    pub fn meta(&self, seed: u64) -> CheckpointMeta {
        CheckpointMeta {
            epoch: self.best().map_or(0, |(_, e)| e),
            seed,
            history: self.history.clone(),
        }
    }

    /// One JSON object per epoch: epoch, train_loss, val_acc, lr, wall_time.
    pub fn history_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            #[serde(flatten)]
            record: &'a EpochRecord,
            wall_time: f64,
        }
        let mut out = String::new();
        for (record, &wall_time) in self.history.iter().zip(&self.wall_times) {
            out.push_str(&serde_json::to_string(&Line { record, wall_time }).expect("history serialises"));
            out.push('\n');
        }
        out
    }
}

fn check_data(data: &Dataset, model_cfg: &ModelConfig) -> Result<()> {
    if data.num_classes() != model_cfg.num_classes {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} classes, model expects {}",
            data.num_classes(),
            model_cfg.num_classes
        )));
    }
    let s = data.image_size();
    if model_cfg.input_size != (s, s) {
        return Err(Error::InvalidConfig(format!(
            "dataset images are {s}x{s}, model expects {:?}",
            model_cfg.input_size
        )));
    }
    for split in [Split::Train, Split::Val] {
        if data.indices(split).is_empty() {
            return Err(Error::EmptyDataset(format!("the {} split has no samples", split.as_str())));
        }
    }
    Ok(())
}

/// Teacher logits for every sample of the train split, keyed by dataset
/// position. The teacher is fixed and inputs are not augmented, so one pass
/// gives exactly the values a per-batch forward would.
fn teacher_logits(teacher: &Model, data: &Dataset) -> Result<Vec<Option<Vec<f32>>>> {
    let mut out = vec![None; data.len()];
    for batch in data.batches_in_order(Split::Train, EVAL_BATCH)? {
        let logits = no_grad(|| teacher.forward(&batch.images, false))?;
        let c = logits.shape()[1];
        for (&i, row) in batch.ids.iter().zip(logits.data().chunks(c)) {
            out[i] = Some(row.to_vec());
        }
    }
    Ok(out)
}

/// Run one training phase. `observer` sees each epoch record and the
/// elapsed wall time as soon as the epoch finishes.
pub fn fit(
    data: &Dataset,
    cfg: &DistillConfig,
    model_cfg: &ModelConfig,
    phase: Phase<'_>,
    observer: &mut dyn FnMut(&EpochRecord, f64),
) -> Result<(Model, TrainState)> {
    cfg.validate()?;
    model_cfg.validate()?;
    check_data(data, model_cfg)?;
    let mut model = build_model(model_cfg, &mut Rng::new(cfg.seed).substream(Stream::Init, &[phase.init_role()]))?;
    let (lr, epochs) = match phase {
        Phase::Teacher => (cfg.lr_teacher, cfg.epochs_teacher),
        _ => (cfg.lr_student, cfg.epochs_student),
    };
    let soft_targets = match phase {
        Phase::Distill { teacher } => {
            if teacher.num_classes() != model_cfg.num_classes {
                return Err(Error::InvalidConfig(format!(
                    "teacher has {} classes, student {}",
                    teacher.num_classes(),
                    model_cfg.num_classes
                )));
            }
            if teacher.config().input_size != model_cfg.input_size {
                return Err(Error::InvalidConfig(format!(
                    "teacher input {:?} differs from student input {:?}",
                    teacher.config().input_size,
                    model_cfg.input_size
                )));
            }
            Some(teacher_logits(teacher, data)?)
        }
        _ => None,
    };
    let hp = AdamW::new(lr, cfg.weight_decay);
    let mut state = TrainState {
        epoch: 0,
        optimizer: AdamState::new(model.params()),
        stopping: EarlyStopping::new(cfg.patience),
        history: Vec::new(),
        wall_times: Vec::new(),
    };
    let mut best_params = model.params().clone();
    let start = Instant::now();
    let c = model_cfg.num_classes;
    for epoch in 0..epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for batch in data.batches(Split::Train, cfg.batch_size, cfg.seed, epoch as u64)? {
            let logits = model.forward(&batch.images, true)?;
            let loss = match &soft_targets {
                None => cross_entropy(&logits, &batch.labels)?,
                Some(table) => {
                    let rows: Vec<f32> = batch
                        .ids
                        .iter()
                        .flat_map(|&i| table[i].as_deref().expect("teacher logits cover the train split").iter().copied())
                        .collect();
                    let t = Tensor::from_vec(rows, &[batch.ids.len(), c])?;
                    kd_total_loss(&logits, &t, &batch.labels, cfg.temperature, cfg.alpha)?
                }
            };
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{} loss became {value} at epoch {}",
                    phase.name(),
                    epoch + 1
                )));
            }
            loss_sum += value * batch.ids.len() as f64;
            seen += batch.ids.len();
            loss.backward()?;
            state.optimizer.update(model.params_mut(), &hp)?;
        }
        let val_acc = accuracy(&model, data, Split::Val, EVAL_BATCH)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            val_acc,
            lr,
        };
        let elapsed = start.elapsed().as_secs_f64();
        observer(&record, elapsed);
        state.history.push(record);
        state.wall_times.push(elapsed);
        state.epoch = epoch + 1;
        let decision = early_stopping_check(&mut state.stopping, val_acc);
        if state.stopping.improved_last() {
            best_params = model.params().clone();
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    let best = Model::from_params(model_cfg, best_params)?;
    Ok((best, state))
}

/// Cross-entropy training of the teacher; returns the best-validation model.
pub fn train_teacher(data: &Dataset, cfg: &DistillConfig, teacher_cfg: &ModelConfig) -> Result<(Model, TrainState)> {
    fit(data, cfg, teacher_cfg, Phase::Teacher, &mut |_, _| {})
}

/// The student trained on labels alone, from the same initial weights and
/// batch order the distilled student sees.
pub fn train_baseline(data: &Dataset, cfg: &DistillConfig, student_cfg: &ModelConfig) -> Result<(Model, TrainState)> {
    fit(data, cfg, student_cfg, Phase::Baseline, &mut |_, _| {})
}

/// The student trained on the combined loss against `teacher`, which only
/// runs inference.
pub fn distill_student(
    data: &Dataset,
    cfg: &DistillConfig,
    student_cfg: &ModelConfig,
    teacher: &Model,
) -> Result<(Model, TrainState)> {
    fit(data, cfg, student_cfg, Phase::Distill { teacher }, &mut |_, _| {})
}
