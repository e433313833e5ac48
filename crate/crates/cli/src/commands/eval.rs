use std::path::PathBuf;

use anyhow::Result;
use editforge::filter::{clip_image_similarity, clip_text_alignment, directional_similarity, l1_distance};
use editforge::instruct::EditRecord;
use editforge::model::{edit_image, load_checkpoint, AnySdModel, EditOptions};
use editforge::rng::derive_seed;
use editforge::task::EditTaskType;
use rayon::prelude::*;
use serde::Serialize;

use super::load_image;
use crate::context::Context;
use crate::io::{base_dir, emit_summary, read_jsonl, Output};

#[derive(clap::Args)]
pub struct Args {
    /// Manifest with original and reference edited images.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Checkpoint directory to load.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Per-record scores (JSONL); `-` for stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Summary document; defaults to `<output>.summary.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Score only the first N records.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize)]
struct Scores {
    l1: f64,
    clip_im: f64,
    clip_out: f64,
    dino: f64,
    directional: f64,
}

#[derive(Serialize)]
struct Line {
    index: usize,
    #[serde(rename = "edit type")]
    edit_type: EditTaskType,
    #[serde(flatten)]
    scores: Scores,
}

#[derive(Serialize)]
struct Summary {
    command: &'static str,
    config_digest: String,
    records: usize,
    mean: Scores,
}

fn score(ctx: &Context, model: &AnySdModel, base: &std::path::Path, i: usize, r: &EditRecord) -> Result<Line> {
    let original = load_image(base, &r.image_file)?;
    let fixture = load_image(base, &r.edited_file)?;
    let reference = r.visual_input_path().map(|v| load_image(base, v)).transpose()?;
    let opts = EditOptions {
        scales: ctx.cfg.guidance,
        seed: derive_seed(ctx.cfg.seed, &format!("eval/{i}")),
        task: Some(r.edit_type),
    };
    let produced = edit_image(model, &original, &r.edit, reference.as_ref(), None, &opts)?.image;
    let p = &ctx.providers;
    let (e_o, e_p, e_f) = (p.clip.embed_image(&original)?, p.clip.embed_image(&produced)?, p.clip.embed_image(&fixture)?);
    let (t_in, t_out) = (p.clip.embed_text(&r.input)?, p.clip.embed_text(&r.output)?);
    let (d_p, d_f) = (p.dino.embed_image(&produced)?, p.dino.embed_image(&fixture)?);
    Ok(Line {
        index: i,
        edit_type: r.edit_type,
        scores: Scores {
            l1: l1_distance(&produced, &fixture)?,
            clip_im: clip_image_similarity(&e_f, &e_p)?.value,
            clip_out: clip_text_alignment(&e_p, &t_out)?.value,
            dino: clip_image_similarity(&d_f, &d_p)?.value,
            directional: directional_similarity(&e_o, &e_p, &t_in, &t_out)?.value,
        },
    })
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let input = ctx.path(&args.input, &ctx.cfg.paths.input, "input")?;
    let output = ctx.path(&args.output, &ctx.cfg.paths.output, "output")?;
    let dir = ctx.path(&args.checkpoint, &ctx.cfg.paths.checkpoint, "checkpoint")?;
    let model = load_checkpoint(&dir, None)?;
    let mut records: Vec<EditRecord> = read_jsonl(&input)?;
    records.truncate(args.limit.unwrap_or(usize::MAX));
    let base = base_dir(&input);
    let lines: Vec<Result<Line>> =
        records.par_iter().enumerate().map(|(i, r)| score(ctx, &model, &base, i, r)).collect();
    let mut out = Output::create(&output)?;
    let mut mean = Scores::default();
    let mut n = 0usize;
    for l in lines {
        let l = l?;
        let s = &l.scores;
        mean.l1 += s.l1;
        mean.clip_im += s.clip_im;
        mean.clip_out += s.clip_out;
        mean.dino += s.dino;
        mean.directional += s.directional;
        n += 1;
        out.write_line(&l)?;
    }
    out.finish()?;
    if n > 0 {
        let k = n as f64;
        mean = Scores {
            l1: mean.l1 / k,
            clip_im: mean.clip_im / k,
            clip_out: mean.clip_out / k,
            dino: mean.dino / k,
            directional: mean.directional / k,
        };
    }
    let summary = Summary {
        command: "eval",
        config_digest: ctx.digest.clone(),
        records: n,
        mean,
    };
    emit_summary(args.summary.as_deref(), &output, &summary)
}
