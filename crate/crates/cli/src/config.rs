//! Run configuration: built-in defaults, then a JSON file, then flags.

use std::path::{Path, PathBuf};

use mvkd_core::data::{Hardness, Normalization, Split, DEFAULT_FRACTIONS};
use mvkd_core::distill::DistillConfig;
use mvkd_core::models::{Arch, ModelConfig, ModelKind};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synth,
    Folder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOptions {
    pub source: DataSource,
    /// Image folder to read (`folder`) or to write (`synth` subcommand).
    pub root: Option<PathBuf>,
    pub image_size: usize,
    pub split_fractions: [f64; 3],
    pub normalization: Option<Normalization>,
    pub num_per_class: usize,
    pub num_classes: usize,
    pub hardness: Hardness,
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            source: DataSource::Synth,
            root: None,
            image_size: 64,
            split_fractions: DEFAULT_FRACTIONS,
            normalization: None,
            num_per_class: 500,
            num_classes: 2,
            hardness: Hardness::Easy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOptions {
    pub kind: ModelKind,
    pub scale: f64,
    /// Replaces the scaled reference architecture when present.
    pub arch: Option<Arch>,
}

impl ModelOptions {
    fn new(kind: ModelKind) -> Self {
        ModelOptions { kind, scale: 0.125, arch: None }
    }

    pub fn model_config(&self, num_classes: usize, image_size: usize) -> mvkd_core::Result<ModelConfig> {
        let mut cfg = ModelConfig::new(self.kind, num_classes, (image_size, image_size), self.scale)?;
        if let Some(arch) = &self.arch {
            cfg.arch = arch.clone();
            cfg.validate()?;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub split: Split,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { split: Split::Test, batch_size: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcamOptions {
    pub image: Option<PathBuf>,
    /// Defaults to the predicted class.
    pub target_class: Option<usize>,
    pub layer: String,
}

impl Default for GradcamOptions {
    fn default() -> Self {
        GradcamOptions { image: None, target_class: None, layer: mvkd_core::models::DEFAULT_CAM_LAYER.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchTarget {
    Student,
    Teacher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchOptions {
    /// Architecture benchmarked when no checkpoint is given.
    pub model: BenchTarget,
    pub batch: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub workers: usize,
    /// Sweep log to append one row to.
    pub csv: Option<PathBuf>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { model: BenchTarget::Student, batch: 1, warmup_iters: 20, measured_iters: 100, workers: 1, csv: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output subdirectory; defaults to the subcommand name.
    pub run_name: Option<String>,
    pub out: PathBuf,
    /// Drives data generation, splitting, initialisation and batch order.
    pub seed: u64,
    pub data: DataOptions,
    pub teacher: ModelOptions,
    pub student: ModelOptions,
    /// Its `seed` always mirrors the top-level seed.
    pub distill: DistillConfig,
    pub teacher_checkpoint: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub eval: EvalOptions,
    pub gradcam: GradcamOptions,
    pub bench: BenchOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_name: None,
            out: PathBuf::from("out"),
            seed: 0,
            data: DataOptions::default(),
            teacher: ModelOptions::new(ModelKind::TeacherVit32),
            student: ModelOptions::new(ModelKind::StudentXs),
            distill: DistillConfig::default(),
            teacher_checkpoint: None,
            checkpoint: None,
            eval: EvalOptions::default(),
            gradcam: GradcamOptions::default(),
            bench: BenchOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.run_name.as_deref().unwrap_or("run"))
    }
}

/// Recursively overwrite `base` with every key of `layer`.
fn overlay(base: &mut Value, layer: &Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, l) => *b = l.clone(),
    }
}

/// Flag values addressed by dotted path, e.g. `distill.alpha`.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set(&mut self, path: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).expect("flag values serialise");
        let mut keys: Vec<&str> = path.split('.').collect();
        let last = keys.pop().expect("non-empty path");
        let mut node = &mut self.0;
        for k in keys {
            node = node
                .entry(k.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("flag paths do not collide with values");
        }
        node.insert(last.to_string(), value);
    }

    pub fn set_opt<T: Serialize>(&mut self, path: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(path, v);
        }
    }
}

/// Defaults, then `file`, then `flags`; unknown keys anywhere are errors.
pub fn resolve(file: Option<&Path>, flags: Overrides, command: &str) -> Result<RunConfig, String> {
    let mut merged = serde_json::to_value(RunConfig::default()).expect("defaults serialise");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let layer: Value =
            serde_json::from_str(&text).map_err(|e| format!("config {} is not valid JSON: {e}", path.display()))?;
        if !layer.is_object() {
            return Err(format!("config {} must be a JSON object", path.display()));
        }
        if layer.get("distill").and_then(|d| d.get("seed")).is_some() {
            return Err("distill.seed is not configurable; set the top-level seed".into());
        }
        overlay(&mut merged, &layer);
    }
    overlay(&mut merged, &Value::Object(flags.0));
    let mut cfg: RunConfig = serde_json::from_value(merged).map_err(|e| format!("invalid config: {e}"))?;
    cfg.distill.seed = cfg.seed;
    if cfg.run_name.is_none() {
        cfg.run_name = Some(command.to_string());
    }
    validate(&cfg, command)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig, command: &str) -> Result<(), String> {
    cfg.distill.validate().map_err(|e| e.to_string())?;
    let name = cfg.run_name.as_deref().unwrap_or_default();
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(format!("run_name must be a plain directory name, got {name:?}"));
    }
    let d = &cfg.data;
    if d.image_size < 8 {
        return Err(format!("data.image_size must be at least 8, got {}", d.image_size));
    }
    if d.source == DataSource::Folder && d.root.is_none() {
        return Err("data.source is folder but data.root is not set".into());
    }
    let sum: f64 = d.split_fractions.iter().sum();
    if d.split_fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(format!("data.split_fractions must be non-negative and sum to 1, got {:?}", d.split_fractions));
    }
    let synth = mvkd_core::data::SynthConfig {
        num_per_class: d.num_per_class,
        num_classes: d.num_classes,
        hardness: d.hardness,
        image_size: d.image_size,
        seed: cfg.seed,
    };
    synth.validate().map_err(|e| format!("data: {e}"))?;
    // only architectures the command builds from configuration are checked
    let teacher_used = command == "train-teacher" || (command == "bench" && cfg.bench.model == BenchTarget::Teacher);
    let student_used = matches!(command, "train-baseline" | "distill") || (command == "bench" && cfg.bench.model == BenchTarget::Student);
    for (role, m, used) in [("teacher", &cfg.teacher, teacher_used), ("student", &cfg.student, student_used)] {
        if (role == "teacher") == m.kind.is_student() {
            return Err(format!("{role}.kind cannot be {}", m.kind.as_str()));
        }
        if !used {
            continue;
        }
        m.model_config(d.num_classes.max(2), d.image_size).map_err(|e| format!("{role}: {e}"))?;
    }
    if cfg.eval.batch_size == 0 {
        return Err("eval.batch_size must be at least 1".into());
    }
    let b = &cfg.bench;
    mvkd_core::bench::BenchOptions {
        batch: b.batch,
        warmup_iters: b.warmup_iters,
        measured_iters: b.measured_iters,
        workers: b.workers,
    }
    .validate()
    .map_err(|e| format!("bench: {e}"))?;
    Ok(())
}
