//! `editforge`: instruction generation, synthesis, filtering, training,
//! editing and dataset statistics over JSONL manifests.

mod commands;
mod context;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{edit, eval, filter, gen, stats, synth, train};
use context::GlobalArgs;

#[derive(Parser)]
#[command(name = "editforge", version, about = "Instruction-based image editing toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Captions in, validated edit records out.
    GenInstructions(gen::Args),
    /// Render toy originals and synthesize edited images for records.
    Synthesize(synth::Args),
    /// Score record triplets and keep the ones that pass every gate.
    Filter(filter::Args),
    /// Train stage 1, stage 2, or both, and write a checkpoint.
    Train(train::Args),
    /// Edit one image with one instruction.
    Edit(edit::Args),
    /// Edit every manifest record and score against its edited image.
    Eval(eval::Args),
    /// Per-type and per-category record counts.
    Stats(stats::Args),
}

/// Exit status for an error: 2 configuration, 3 provider, 4 contract.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    use editforge::error::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => ("config", 2),
        Some(Error::Provider(_)) => ("provider", 3),
        Some(e) => (e.code(), 4),
        None => ("contract", 4),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = context::Context::new(&cli.global).and_then(|ctx| match &cli.command {
        Command::GenInstructions(a) => gen::run(&ctx, a),
        Command::Synthesize(a) => synth::run(&ctx, a),
        Command::Filter(a) => filter::run(&ctx, a),
        Command::Train(a) => train::run(&ctx, a),
        Command::Edit(a) => edit::run(&ctx, a),
        Command::Eval(a) => eval::run(&ctx, a),
        Command::Stats(a) => stats::run(&ctx, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            let doc = json!({"error": {"kind": kind, "message": format!("{e:#}"), "exit_code": code}});
            eprintln!("{doc}");
            ExitCode::from(code)
        }
    }
}
