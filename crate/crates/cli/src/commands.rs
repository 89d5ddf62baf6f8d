use std::fmt;
use std::path::{Path, PathBuf};

use mvkd_core::bench::{bench_fps, size_report, SystemClock};
use mvkd_core::data::{
    load_image_folder, preprocess, synth_fire_dataset, write_image_folder, Dataset, Image, SynthConfig,
};
use mvkd_core::distill::{fit, Phase};
use mvkd_core::eval::{argmax, confusion_matrix, grad_cam, metrics, predict, render_overlay};
use mvkd_core::models::{build_model, load_checkpoint, save_checkpoint, Model};
use mvkd_core::Error;
use mvkd_tensor::{no_grad, Rng, Stream};
use serde::Serialize;

use crate::config::{BenchTarget, DataSource, RunConfig};

/// Exit status 1, 2 or 3.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(Error),
    Runtime(Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Data(e) | Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. }
            | Error::DecodeError { .. }
            | Error::InvalidDataset(_)
            | Error::EmptyDataset(_)
            | Error::StratificationError(_)
            | Error::InvalidLabel { .. }
            | Error::FormatError(_)
            | Error::CorruptCheckpoint(_)
            | Error::UnsupportedModel(_) => Failure::Data(e),
            _ => Failure::Runtime(e),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |source| Failure::Data(Error::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(io(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.into()))?;
    write(path, text + "\n")
}

/// Create the run directory and echo the resolved configuration into it.
fn start_run(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    write_json(&dir.join("config.resolved.json"), cfg)?;
    Ok(dir)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf, Failure> {
    value.as_ref().ok_or_else(|| Failure::Usage(format!("{flag} is required")))
}

fn synth_config(cfg: &RunConfig) -> SynthConfig {
    let d = &cfg.data;
    SynthConfig {
        num_per_class: d.num_per_class,
        num_classes: d.num_classes,
        hardness: d.hardness,
        image_size: d.image_size,
        seed: cfg.seed,
    }
}

/// The configured dataset with its train/val/test assignment.
fn load_data(cfg: &RunConfig) -> Result<Dataset, Failure> {
    let d = &cfg.data;
    let data = match d.source {
        DataSource::Synth => synth_fire_dataset(&synth_config(cfg))?,
        DataSource::Folder => {
            let root = required(&d.root, "data.root")?;
            load_image_folder(root)?.load(d.image_size, d.normalization.as_ref())?
        }
    };
    Ok(data.split(d.split_fractions, cfg.seed)?)
}

pub fn synth(cfg: &RunConfig) -> Result<(), Failure> {
    let dir = start_run(cfg)?;
    let root = cfg.data.root.clone().unwrap_or_else(|| dir.join("data"));
    let data = synth_fire_dataset(&synth_config(cfg))?;
    write_image_folder(&data, &root)?;
    let split = data.split(cfg.data.split_fractions, cfg.seed)?;
    split.manifest().write_json(dir.join("manifest.json"))?;
    eprintln!("wrote {} images to {}", data.len(), root.display());
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Teacher,
    Baseline,
    Distill,
}

#[derive(Serialize)]
struct TrainSummary {
    phase: &'static str,
    model: &'static str,
    param_count: usize,
    epochs_run: usize,
    best_epoch: usize,
    best_val_acc: f64,
    checkpoint: String,
}

pub fn train(cfg: &RunConfig, role: Role) -> Result<(), Failure> {
    let teacher = match role {
        Role::Distill => {
            let path = required(&cfg.teacher_checkpoint, "--teacher")?;
            Some(load_checkpoint(path)?.0)
        }
        _ => None,
    };
    let dir = start_run(cfg)?;
    let data = load_data(cfg)?;
    let (options, phase, file) = match (role, &teacher) {
        (Role::Teacher, _) => (&cfg.teacher, Phase::Teacher, "teacher.ckpt"),
        (Role::Baseline, _) => (&cfg.student, Phase::Baseline, "student.ckpt"),
        (Role::Distill, Some(t)) => (&cfg.student, Phase::Distill { teacher: t }, "student.ckpt"),
        (Role::Distill, None) => unreachable!("teacher loaded above"),
    };
    let model_cfg = options.model_config(data.num_classes(), data.image_size())?;
    let name = phase.name();
    let (model, state) = fit(&data, &cfg.distill, &model_cfg, phase, &mut |r, t| {
        eprintln!(
            "[{name}] epoch {:>3}  loss {:.4}  val acc {:.4}  ({t:.1}s)",
            r.epoch, r.train_loss, r.val_acc
        );
    })?;
    let ckpt = dir.join(file);
    save_checkpoint(&model, &state.meta(cfg.seed), &ckpt)?;
    write(&dir.join("history.jsonl"), state.history_jsonl())?;
    let (best_val_acc, best_epoch) = state.best().unwrap_or((0.0, 0));
    write_json(
        &dir.join("summary.json"),
        &TrainSummary {
            phase: name,
            model: model_cfg.kind.as_str(),
            param_count: model.param_count(),
            epochs_run: state.epoch,
            best_epoch,
            best_val_acc,
            checkpoint: ckpt.display().to_string(),
        },
    )?;
    eprintln!("best val acc {best_val_acc:.4} at epoch {best_epoch}; saved {}", ckpt.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), Failure> {
    let (model, _) = load_checkpoint(required(&cfg.checkpoint, "--checkpoint")?)?;
    let dir = start_run(cfg)?;
    let data = load_data(cfg)?;
    let (truth, pred) = predict(&model, &data, cfg.eval.split, cfg.eval.batch_size)?;
    let cm = confusion_matrix(&truth, &pred, model.num_classes())?
        .with_class_names(data.manifest().class_names.clone())?;
    let report = metrics(&cm);
    report.write_json(dir.join("metrics.json"))?;
    cm.write_csv(dir.join("confusion.csv"))?;
    eprintln!(
        "{} split: accuracy {:.4}, macro F1 {:.4} over {} samples",
        cfg.eval.split.as_str(),
        report.accuracy,
        report.macro_f1,
        report.count
    );
    Ok(())
}

#[derive(Serialize)]
struct GradcamSummary {
    image: String,
    layer: String,
    target_class: usize,
    predicted_class: usize,
    probabilities: Vec<f32>,
}

pub fn gradcam(cfg: &RunConfig) -> Result<(), Failure> {
    let (model, _) = load_checkpoint(required(&cfg.checkpoint, "--checkpoint")?)?;
    let image_path = required(&cfg.gradcam.image, "--image")?;
    let image = Image::read_ppm(image_path)?;
    let dir = start_run(cfg)?;
    let (h, w) = model.config().input_size;
    if h != w {
        return Err(Failure::Runtime(Error::InvalidParameter(format!("model input {h}x{w} is not square"))));
    }
    let x = preprocess(&image, h, cfg.data.normalization.as_ref())?.reshape(&[1, 3, h, w]).map_err(Error::from)?;
    let probs = no_grad(|| model.forward(&x, false).and_then(|l| Ok(l.softmax(1.0)?)))?.to_vec();
    let predicted = argmax(&probs);
    let target = cfg.gradcam.target_class.unwrap_or(predicted);
    let mut heatmap = grad_cam(&model, &x, target, &cfg.gradcam.layer)?;
    heatmap.source = Some(image_path.display().to_string());
    let shown = Image::new(w, h, preprocess(&image, h, None)?.to_vec())?;
    render_overlay(&heatmap, &shown, dir.join("overlay.ppm"))?;
    write_json(
        &dir.join("gradcam.json"),
        &GradcamSummary {
            image: image_path.display().to_string(),
            layer: heatmap.layer.clone(),
            target_class: target,
            predicted_class: predicted,
            probabilities: probs,
        },
    )?;
    eprintln!("class {target} (predicted {predicted}); wrote {}", dir.join("overlay.ppm").display());
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<(), Failure> {
    let b = &cfg.bench;
    let (model, size) = match &cfg.checkpoint {
        Some(path) => (load_checkpoint(path)?.0, Some(size_report(path)?)),
        None => {
            let options = match b.model {
                BenchTarget::Student => &cfg.student,
                BenchTarget::Teacher => &cfg.teacher,
            };
            let model_cfg = options.model_config(cfg.data.num_classes, cfg.data.image_size)?;
            let mut rng = Rng::new(cfg.seed).substream(Stream::Init, &[0]);
            (build_model(&model_cfg, &mut rng)?, None)
        }
    };
    let dir = start_run(cfg)?;
    let opts = mvkd_core::bench::BenchOptions {
        batch: b.batch,
        warmup_iters: b.warmup_iters,
        measured_iters: b.measured_iters,
        workers: b.workers,
    };
    let report = bench_fps(&model, model.config().input_size, opts, &SystemClock::new())?;
    report.write_json(dir.join("bench.json"))?;
    if let Some(size) = size {
        write_json(&dir.join("size.json"), &size)?;
    }
    if let Some(csv) = &b.csv {
        report.append_csv(csv)?;
    }
    report_line(&model, &report);
    Ok(())
}

fn report_line(model: &Model, r: &mvkd_core::bench::BenchReport) {
    eprintln!(
        "{}: {:.2} FPS, p50 {:.2} ms, p95 {:.2} ms, p99 {:.2} ms, {} parameters",
        r.model_id,
        r.fps,
        r.latency_p50_ms,
        r.latency_p95_ms,
        r.latency_p99_ms,
        model.param_count()
    );
}
