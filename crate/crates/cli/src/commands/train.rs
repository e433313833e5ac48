use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::ValueEnum;
use editforge::error::Error;
use editforge::instruct::EditRecord;
use editforge::model::{load_checkpoint, save_checkpoint, train_stage1, train_stage2, AnySdModel, TrainReport};
use editforge::toy::EditExample;
use serde::Serialize;

use super::load_image;
use crate::context::Context;
use crate::io::{base_dir, read_jsonl, write_json, write_text};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "both")]
    Both,
}

#[derive(clap::Args)]
pub struct Args {
    /// Training manifest (records with image files).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint to start from; required for `--stage 2`.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "1")]
    pub stage: StageArg,
}

#[derive(Serialize)]
struct StageSummary {
    stage: u8,
    steps: usize,
    examples: usize,
    initial_eval_loss: f64,
    final_eval_loss: f64,
}

#[derive(Serialize)]
struct Summary {
    command: &'static str,
    config_digest: String,
    model_digest: String,
    stages: Vec<StageSummary>,
}

pub fn load_examples(path: &Path) -> Result<Vec<EditExample>> {
    let records: Vec<EditRecord> = read_jsonl(path)?;
    let base = base_dir(path);
    records
        .iter()
        .map(|r| {
            Ok(EditExample {
                task: r.edit_type,
                source: load_image(&base, &r.image_file)?,
                instruction: r.edit.clone(),
                target: load_image(&base, &r.edited_file)?,
                reference: r.visual_input_path().map(|v| load_image(&base, v)).transpose()?,
            })
        })
        .collect()
}

fn loss_csv(report: &TrainReport) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in report.loss_history.iter().enumerate() {
        let _ = writeln!(s, "{i},{l}");
    }
    s
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let input = ctx.path(&args.input, &ctx.cfg.paths.input, "input")?;
    let dir = ctx.path(&args.checkpoint, &ctx.cfg.paths.checkpoint, "checkpoint")?;
    let data = load_examples(&input)?;
    let mut model = match (&args.init, args.stage) {
        (Some(p), _) => load_checkpoint(p, Some(&ctx.cfg.model))?,
        (None, StageArg::Two) => {
            return Err(Error::Contract("--stage 2 needs --init with a stage-1 checkpoint".into()).into())
        }
        (None, _) => AnySdModel::new(ctx.cfg.model.clone())?,
    };
    let mut stages = Vec::new();
    if matches!(args.stage, StageArg::One | StageArg::Both) {
        let r = train_stage1(&mut model, &data, &ctx.cfg.stage1)?;
        write_text(&dir.join("loss_stage1.csv"), &loss_csv(&r))?;
        stages.push((1, r));
    }
    if matches!(args.stage, StageArg::Two | StageArg::Both) {
        let r = train_stage2(&mut model, &data, &ctx.cfg.stage2)?;
        write_text(&dir.join("loss_stage2.csv"), &loss_csv(&r))?;
        stages.push((2, r));
    }
    save_checkpoint(&model, &dir)?;
    let summary = Summary {
        command: "train",
        config_digest: ctx.digest.clone(),
        model_digest: ctx.cfg.model.digest(),
        stages: stages
            .into_iter()
            .map(|(stage, r)| StageSummary {
                stage,
                steps: r.loss_history.len(),
                examples: data.len(),
                initial_eval_loss: r.initial_eval_loss,
                final_eval_loss: r.final_eval_loss,
            })
            .collect(),
    };
    write_json(&dir.join("train_summary.json"), &summary)
}
