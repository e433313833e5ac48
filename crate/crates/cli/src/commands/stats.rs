use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use editforge::instruct::EditRecord;
use editforge::task::{EditTaskType, TaskCategory, REFERENCE_TOTAL_INSTRUCTIONS};
use serde::Serialize;

use crate::context::Context;
use crate::io::{read_jsonl, write_json, STDIO};

#[derive(clap::Args)]
pub struct Args {
    /// Record manifest (JSONL); `-` for stdin.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Statistics document; `-` (the default) for stdout.
    #[arg(long, default_value = STDIO)]
    pub output: PathBuf,
}

#[derive(Serialize)]
struct Reference {
    total: u64,
    by_type: BTreeMap<&'static str, u64>,
}

#[derive(Serialize)]
struct Stats {
    command: &'static str,
    config_digest: String,
    total: usize,
    by_type: BTreeMap<&'static str, usize>,
    by_category: BTreeMap<&'static str, usize>,
    with_visual_input: usize,
    /// Counts of the full reference dataset, shown for comparison.
    reference: Reference,
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let input = ctx.path(&args.input, &ctx.cfg.paths.input, "input")?;
    let records: Vec<EditRecord> = read_jsonl(&input)?;
    let mut by_type: BTreeMap<&'static str, usize> = EditTaskType::ALL.iter().map(|t| (t.name(), 0)).collect();
    let mut by_category: BTreeMap<&'static str, usize> = TaskCategory::ALL.iter().map(|c| (c.name(), 0)).collect();
    for r in &records {
        *by_type.entry(r.edit_type.name()).or_default() += 1;
        *by_category.entry(r.edit_type.category().name()).or_default() += 1;
    }
    let stats = Stats {
        command: "stats",
        config_digest: ctx.digest.clone(),
        total: records.len(),
        by_type,
        by_category,
        with_visual_input: records.iter().filter(|r| r.visual_input_path().is_some()).count(),
        reference: Reference {
            total: REFERENCE_TOTAL_INSTRUCTIONS,
            by_type: EditTaskType::ALL
                .iter()
                .map(|t| (t.name(), t.reference_instruction_count()))
                .collect(),
        },
    };
    write_json(&args.output, &stats)
}
