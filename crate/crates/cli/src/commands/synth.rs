use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use editforge::error::Error;
use editforge::image::encode_png;
use editforge::instruct::EditRecord;
use editforge::mask::synthesize;
use editforge::rng::derive;
use editforge::tensor::Tensor;
use editforge::toy::{parse_caption, Scene};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::context::Context;
use crate::io::{emit_summary, read_jsonl, write_bytes, Output};

#[derive(clap::Args)]
pub struct Args {
    /// Edit records (JSONL); `-` for stdin.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Receives `manifest.jsonl` and the image directories.
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Summary document; defaults to `manifest.jsonl.summary.json` in the output directory.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary {
    command: &'static str,
    config_digest: String,
    records: usize,
    written: usize,
    skipped: BTreeMap<String, usize>,
    pipelines: BTreeMap<String, usize>,
}

/// Toy scene for a caption, placed by the record's own seed stream.
pub fn scene_for(caption: &str, seed: u64, index: usize) -> Option<Scene> {
    let c = parse_caption(caption);
    let mut rng = derive(seed, &format!("scene/{index}"));
    Some(Scene {
        shape: c.shape?,
        color: c.color?,
        background: c.background?,
        cx: rng.random_range(0.35..0.65),
        cy: rng.random_range(0.35..0.65),
        size: rng.random_range(0.4..0.55),
    })
}

struct Produced {
    record: EditRecord,
    files: Vec<(String, Tensor)>,
    pipeline: String,
}

fn produce(ctx: &Context, index: usize, record: &EditRecord) -> Result<Result<Produced, String>> {
    let size = ctx.cfg.image_size;
    let Some(scene) = scene_for(&record.input, ctx.cfg.seed, index) else {
        return Ok(Err("caption_not_renderable".into()));
    };
    let original = scene.render(size, size);
    let s = match synthesize(record, &original, ctx.providers.imageop.as_ref(), &ctx.cfg.mask) {
        Ok(s) => s,
        Err(Error::Contract(msg)) => {
            log::warn!("record {index}: {msg}");
            return Ok(Err("synthesis_contract".into()));
        }
        Err(e) => return Err(e.into()),
    };
    let name = format!("{index:04}.png");
    let mut rec = record.clone();
    rec.image_file = format!("images/{name}");
    rec.edited_file = format!("edited/{name}");
    let mut files = vec![(rec.image_file.clone(), s.source), (rec.edited_file.clone(), s.edited)];
    if let Some(v) = s.visual {
        rec.visual_input = format!("visual/{name}");
        files.push((rec.visual_input.clone(), v));
    }
    if let Some(m) = s.mask {
        files.push((format!("masks/{name}"), m.to_tensor()));
    }
    Ok(Ok(Produced {
        record: rec,
        files,
        pipeline: s.pipeline.to_string(),
    }))
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let input = ctx.path(&args.input, &ctx.cfg.paths.input, "input")?;
    let records: Vec<EditRecord> = read_jsonl(&input)?;
    let dir = &args.output_dir;
    for sub in ["images", "edited", "visual", "masks"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let results: Vec<Result<Result<Produced, String>>> =
        records.par_iter().enumerate().map(|(i, r)| produce(ctx, i, r)).collect();

    let manifest = dir.join("manifest.jsonl");
    let mut out = Output::create(&manifest)?;
    let mut summary = Summary {
        command: "synthesize",
        config_digest: ctx.digest.clone(),
        records: records.len(),
        written: 0,
        skipped: BTreeMap::new(),
        pipelines: BTreeMap::new(),
    };
    for r in results {
        match r? {
            Ok(p) => {
                for (file, img) in &p.files {
                    write_bytes(&dir.join(file), &encode_png(img)?)?;
                }
                out.write_line(&p.record)?;
                summary.written += 1;
                *summary.pipelines.entry(p.pipeline).or_default() += 1;
            }
            Err(reason) => *summary.skipped.entry(reason).or_default() += 1,
        }
    }
    out.finish()?;
    emit_summary(args.summary.as_deref(), &manifest, &summary)
}
