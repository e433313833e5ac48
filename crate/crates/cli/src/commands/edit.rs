use std::path::PathBuf;

use anyhow::Result;
use editforge::image::encode_png;
use editforge::model::{edit_image, load_checkpoint, EditOptions, Prediction};
use editforge::task::EditTaskType;
use serde::Serialize;

use crate::context::Context;
use crate::io::{write_json, STDIO};

#[derive(clap::Args)]
pub struct Args {
    /// Checkpoint directory to load.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Original image (PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// Edit instruction, e.g. "make the square red".
    #[arg(long)]
    pub instruction: String,
    /// Visual reference image (PNG).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Skip edit-type prediction and use this type.
    #[arg(long)]
    pub task: Option<EditTaskType>,
    /// Edited image (PNG).
    #[arg(long)]
    pub output: PathBuf,
    /// Report document; `-` (the default) for stdout.
    #[arg(long, default_value = STDIO)]
    pub report: PathBuf,
}

#[derive(Serialize)]
struct Report {
    command: &'static str,
    config_digest: String,
    instruction: String,
    prediction: Prediction,
    evaluations_per_step: usize,
    warnings: Vec<String>,
    output: String,
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let dir = ctx.path(&args.checkpoint, &ctx.cfg.paths.checkpoint, "checkpoint")?;
    let model = load_checkpoint(&dir, None)?;
    let original = super::load_image(std::path::Path::new("."), &args.image.to_string_lossy())?;
    let reference = args
        .reference
        .as_ref()
        .map(|r| super::load_image(std::path::Path::new("."), &r.to_string_lossy()))
        .transpose()?;
    let opts = EditOptions {
        scales: ctx.cfg.guidance,
        seed: ctx.cfg.seed,
        task: args.task,
    };
    let out = edit_image(
        &model,
        &original,
        &args.instruction,
        reference.as_ref(),
        Some(ctx.providers.textgen.as_ref()),
        &opts,
    )?;
    crate::io::write_bytes(&args.output, &encode_png(&out.image)?)?;
    let report = Report {
        command: "edit",
        config_digest: ctx.digest.clone(),
        instruction: args.instruction.clone(),
        prediction: out.prediction,
        evaluations_per_step: out.evaluations_per_step,
        warnings: out.warnings,
        output: args.output.display().to_string(),
    };
    write_json(&args.report, &report)
}
