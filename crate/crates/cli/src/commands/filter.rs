use std::path::PathBuf;

use anyhow::Result;
use editforge::filter::{
    pre_filter, prefilter_report, run_gauntlet, FilterReport, FilterSummary, FilterThresholds, GauntletProviders,
    ImageMeta, PreFilterStatus, Verdict,
};
use editforge::image::dims;
use editforge::instruct::{EditRecord, VerbConstraints};
use rayon::prelude::*;
use serde::Serialize;

use super::load_image;
use crate::context::Context;
use crate::io::{base_dir, emit_summary, read_jsonl, Output};

#[derive(clap::Args)]
pub struct Args {
    /// Manifest of records with image files; `-` for stdin.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Per-record reports (JSONL); `-` for stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Summary document; defaults to `<output>.summary.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Write the records that passed here (JSONL).
    #[arg(long)]
    pub accepted: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct SummaryDoc {
    pub command: &'static str,
    pub config_digest: String,
    pub thresholds: FilterThresholds,
    pub summary: FilterSummary,
}

fn score(ctx: &Context, base: &std::path::Path, index: usize, record: &EditRecord) -> Result<FilterReport> {
    let original = load_image(base, &record.image_file)?;
    let (h, w) = dims(&original)?;
    let meta = ImageMeta {
        width: w as u32,
        height: h as u32,
        aesthetic: None,
    };
    let th = &ctx.cfg.thresholds;
    let verdict = pre_filter(record, &meta, th, &VerbConstraints::default());
    if !verdict.pass {
        return Ok(prefilter_report(index, record, &verdict));
    }
    let edited = load_image(base, &record.edited_file)?;
    let p = &ctx.providers;
    let providers = GauntletProviders {
        clip: p.clip.as_ref(),
        dino: p.dino.as_ref(),
        detector: p.detector.as_deref(),
        judge: p.vlm.as_deref(),
    };
    Ok(run_gauntlet(index, record, &original, &edited, &providers, th, PreFilterStatus::Passed)?)
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let input = ctx.path(&args.input, &ctx.cfg.paths.input, "input")?;
    let output = ctx.path(&args.output, &ctx.cfg.paths.output, "output")?;
    let records: Vec<EditRecord> = read_jsonl(&input)?;
    let base = base_dir(&input);
    let reports: Vec<Result<FilterReport>> =
        records.par_iter().enumerate().map(|(i, r)| score(ctx, &base, i, r)).collect();

    let mut out = Output::create(&output)?;
    let mut accepted = args.accepted.as_deref().map(Output::create).transpose()?;
    let mut summary = FilterSummary::default();
    for (report, record) in reports.into_iter().zip(&records) {
        let report = report?;
        summary.add(&report);
        out.write_line(&report)?;
        if let (Some(a), Verdict::Pass) = (accepted.as_mut(), report.verdict) {
            a.write_line(record)?;
        }
    }
    out.finish()?;
    if let Some(a) = accepted {
        a.finish()?;
    }
    let doc = SummaryDoc {
        command: "filter",
        config_digest: ctx.digest.clone(),
        thresholds: ctx.cfg.thresholds.clone(),
        summary,
    };
    emit_summary(args.summary.as_deref(), &output, &doc)
}
