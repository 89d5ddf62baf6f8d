mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvkd_core::data::{Hardness, Split};

use crate::commands::Failure;
use crate::config::{BenchTarget, Overrides};

/// Knowledge distillation from a ViT teacher into a MobileViT student.
#[derive(Parser, Debug)]
#[command(name = "mvkd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Seed for data generation, splitting, initialisation and batch order
    #[arg(long)]
    seed: Option<u64>,
    /// JSON run configuration; flags override its values
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output root; artifacts go to <OUT>/<RUN_NAME>/
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Output subdirectory name [default: the subcommand name]
    #[arg(long)]
    run_name: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Image folder (one subdirectory per class); synthesised in memory if absent
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Side length images are resized to
    #[arg(long)]
    image_size: Option<usize>,
    /// Synthetic images per class
    #[arg(long)]
    num_per_class: Option<usize>,
    /// Synthetic class count (2 or 12)
    #[arg(long)]
    classes: Option<usize>,
    /// Synthetic difficulty
    #[arg(long, value_parser = parse_hardness)]
    hardness: Option<Hardness>,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// Maximum epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// AdamW learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping
    #[arg(long)]
    patience: Option<usize>,
    /// Width multiplier of the trained architecture
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic image folder
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train the ViT teacher with cross-entropy
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the student with cross-entropy only
    TrainBaseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the student against a trained teacher
    Distill {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Teacher checkpoint
        #[arg(long, value_name = "FILE")]
        teacher: Option<PathBuf>,
        /// Softmax temperature of the distillation term
        #[arg(long)]
        temperature: Option<f64>,
        /// Weight of the distillation term
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Metrics and confusion matrix of a checkpoint on one split
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Grad-CAM overlay of one image
    Gradcam {
        #[command(flatten)]
        common: Common,
        /// Student checkpoint
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// PPM image
        #[arg(long, value_name = "FILE")]
        image: Option<PathBuf>,
        /// Explained class [default: the predicted class]
        #[arg(long = "class")]
        target_class: Option<usize>,
        /// Feature map to explain
        #[arg(long)]
        layer: Option<String>,
    },
    /// Throughput and size of a checkpoint or an untrained architecture
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Architecture used when no checkpoint is given
        #[arg(long, value_parser = parse_target)]
        model: Option<BenchTarget>,
        /// Width multiplier of the untrained architecture
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Append the report as a CSV row to this file
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
}

fn parse_hardness(s: &str) -> Result<Hardness, String> {
    Hardness::parse(s).map_err(|e| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).map_err(|e| e.to_string())
}

fn parse_target(s: &str) -> Result<BenchTarget, String> {
    match s {
        "student" => Ok(BenchTarget::Student),
        "teacher" => Ok(BenchTarget::Teacher),
        _ => Err(format!("unknown model {s:?}; expected student or teacher")),
    }
}

fn common_overrides(c: &Common) -> Overrides {
    let mut o = Overrides::default();
    o.set_opt("seed", c.seed);
    o.set_opt("out", c.out.as_ref());
    o.set_opt("run_name", c.run_name.as_ref());
    o
}

fn data_overrides(o: &mut Overrides, d: &DataArgs) {
    if let Some(root) = &d.data {
        o.set("data.source", "folder");
        o.set("data.root", root);
    }
    o.set_opt("data.image_size", d.image_size);
    o.set_opt("data.num_per_class", d.num_per_class);
    o.set_opt("data.num_classes", d.classes);
    o.set_opt("data.hardness", d.hardness);
}

fn train_overrides(o: &mut Overrides, t: &TrainArgs, role: &str) {
    let suffix = if role == "teacher" { "teacher" } else { "student" };
    o.set_opt(&format!("distill.epochs_{suffix}"), t.epochs);
    o.set_opt(&format!("distill.lr_{suffix}"), t.lr);
    o.set_opt("distill.batch_size", t.batch_size);
    o.set_opt("distill.patience", t.patience);
    o.set_opt(&format!("{role}.scale"), t.scale);
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    use commands::*;
    let name = match &cmd {
        Command::Synth { .. } => "synth",
        Command::TrainTeacher { .. } => "train-teacher",
        Command::TrainBaseline { .. } => "train-baseline",
        Command::Distill { .. } => "distill",
        Command::Eval { .. } => "eval",
        Command::Gradcam { .. } => "gradcam",
        Command::Bench { .. } => "bench",
    };
    let (common, o) = match &cmd {
        Command::Synth { common, data } => {
            let mut o = common_overrides(common);
            if let Some(root) = &data.data {
                o.set("data.root", root);
            }
            let d = DataArgs { data: None, ..data.clone() };
            data_overrides(&mut o, &d);
            (common, o)
        }
        Command::TrainTeacher { common, data, train } => {
            let mut o = common_overrides(common);
            data_overrides(&mut o, data);
            train_overrides(&mut o, train, "teacher");
            (common, o)
        }
        Command::TrainBaseline { common, data, train } => {
            let mut o = common_overrides(common);
            data_overrides(&mut o, data);
            train_overrides(&mut o, train, "student");
            (common, o)
        }
        Command::Distill { common, data, train, teacher, temperature, alpha } => {
            let mut o = common_overrides(common);
            data_overrides(&mut o, data);
            train_overrides(&mut o, train, "student");
            o.set_opt("teacher_checkpoint", teacher.as_ref());
            o.set_opt("distill.temperature", *temperature);
            o.set_opt("distill.alpha", *alpha);
            (common, o)
        }
        Command::Eval { common, data, checkpoint, split, batch_size } => {
            let mut o = common_overrides(common);
            data_overrides(&mut o, data);
            o.set_opt("checkpoint", checkpoint.as_ref());
            o.set_opt("eval.split", *split);
            o.set_opt("eval.batch_size", *batch_size);
            (common, o)
        }
        Command::Gradcam { common, checkpoint, image, target_class, layer } => {
            let mut o = common_overrides(common);
            o.set_opt("checkpoint", checkpoint.as_ref());
            o.set_opt("gradcam.image", image.as_ref());
            o.set_opt("gradcam.target_class", *target_class);
            o.set_opt("gradcam.layer", layer.as_ref());
            (common, o)
        }
        Command::Bench { common, checkpoint, model, scale, image_size, batch, warmup, iters, workers, csv } => {
            let mut o = common_overrides(common);
            o.set_opt("checkpoint", checkpoint.as_ref());
            o.set_opt("bench.model", *model);
            if let Some(s) = scale {
                let role = if *model == Some(BenchTarget::Teacher) { "teacher" } else { "student" };
                o.set(&format!("{role}.scale"), s);
            }
            o.set_opt("data.image_size", *image_size);
            o.set_opt("bench.batch", *batch);
            o.set_opt("bench.warmup_iters", *warmup);
            o.set_opt("bench.measured_iters", *iters);
            o.set_opt("bench.workers", *workers);
            o.set_opt("bench.csv", csv.as_ref());
            (common, o)
        }
    };
    let cfg = config::resolve(common.config.as_deref(), o, name).map_err(Failure::Usage)?;
    match cmd {
        Command::Synth { .. } => synth(&cfg),
        Command::TrainTeacher { .. } => train(&cfg, Role::Teacher),
        Command::TrainBaseline { .. } => train(&cfg, Role::Baseline),
        Command::Distill { .. } => train(&cfg, Role::Distill),
        Command::Eval { .. } => eval(&cfg),
        Command::Gradcam { .. } => gradcam(&cfg),
        Command::Bench { .. } => bench(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
