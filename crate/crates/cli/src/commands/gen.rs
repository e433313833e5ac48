use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use editforge::instruct::prompt::InContextPool;
use editforge::instruct::{Generator, Outcome, BATCH_SIZE};
use editforge::rng::derive;
use editforge::task::EditTaskType;
use editforge::toy::Scene;
use serde::{Deserialize, Serialize};

use crate::context::Context;
use crate::io::{emit_summary, read_jsonl, read_text, Output};

#[derive(clap::Args)]
pub struct Args {
    /// Caption items, one JSON object per line: {"input": caption,
    /// "edit type": optional task}.
    #[arg(long, conflicts_with = "toy")]
    pub input: Option<PathBuf>,
    /// Generate this many toy-scene captions instead of reading input.
    #[arg(long)]
    pub toy: Option<usize>,
    /// Edit records (JSONL); `-` for stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Summary document; defaults to `<output>.summary.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Write the enhanced in-context pool here.
    #[arg(long)]
    pub pool_out: Option<PathBuf>,
    /// Stop writing after this many accepted records.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionItem {
    input: String,
    #[serde(rename = "edit type", default)]
    edit_type: Option<EditTaskType>,
}

#[derive(Serialize)]
struct Summary {
    command: &'static str,
    config_digest: String,
    items: usize,
    accepted: usize,
    rejected: usize,
    written: usize,
    attempts: usize,
    rejection_reasons: BTreeMap<String, usize>,
    pool_before: usize,
    pool_after: usize,
}

/// Task assigned to item `i` when the input names none: the taxonomy in
/// order, round robin.
fn default_task(i: usize) -> EditTaskType {
    EditTaskType::ALL[i % EditTaskType::ALL.len()]
}

pub fn toy_items(n: usize, seed: u64) -> Vec<(String, EditTaskType)> {
    (0..n)
        .map(|i| {
            let scene = Scene::random(&mut derive(seed, &format!("toy-scene/{i}")));
            (scene.caption(), default_task(i))
        })
        .collect()
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let output = ctx.path(&args.output, &ctx.cfg.paths.output, "output")?;
    let items = match args.toy {
        Some(n) => toy_items(n, ctx.cfg.seed),
        None => {
            let input = ctx.path(&args.input, &ctx.cfg.paths.input, "input")?;
            read_jsonl::<CaptionItem>(&input)?
                .into_iter()
                .enumerate()
                .map(|(i, c)| (c.input, c.edit_type.unwrap_or_else(|| default_task(i))))
                .collect()
        }
    };
    let mut pool = match &ctx.cfg.paths.pool {
        Some(p) => InContextPool::from_jsonl(&read_text(p)?)?,
        None => InContextPool::seeded(),
    };
    let pool_before = pool.total();
    let mut generator = Generator::new(ctx.providers.textgen.as_ref());
    generator.sampling = ctx.cfg.sampling;

    let mut out = Output::create(&output)?;
    let mut summary = Summary {
        command: "gen-instructions",
        config_digest: ctx.digest.clone(),
        items: items.len(),
        accepted: 0,
        rejected: 0,
        written: 0,
        attempts: 0,
        rejection_reasons: BTreeMap::new(),
        pool_before,
        pool_after: pool_before,
    };
    let limit = args.limit.unwrap_or(usize::MAX);
    for (b, chunk) in items.chunks(BATCH_SIZE).enumerate() {
        let outcomes = generator.generate_batch_at(chunk, b * BATCH_SIZE, &mut pool, ctx.cfg.seed)?;
        for o in outcomes {
            match o {
                Outcome::Accepted { record, attempts } => {
                    summary.accepted += 1;
                    summary.attempts += attempts;
                    if summary.written < limit {
                        out.write_line(&record)?;
                        summary.written += 1;
                    }
                }
                Outcome::Rejected { rejections } => {
                    summary.rejected += 1;
                    summary.attempts += rejections.len();
                    for r in rejections {
                        *summary.rejection_reasons.entry(r.reason).or_default() += 1;
                    }
                }
            }
        }
    }
    out.finish()?;
    summary.pool_after = pool.total();
    if let Some(p) = &args.pool_out {
        crate::io::write_text(p, &pool.to_jsonl())?;
    }
    let summary_path = args.summary.as_deref();
    emit_summary(summary_path, &output, &summary)?;
    Ok(())
}
