use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use editforge::config::RunConfig;
use editforge::error::Error;
use editforge::providers::Providers;

#[derive(Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON). Defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Use the deterministic offline providers for every service.
    #[arg(long, global = true)]
    pub stub_providers: bool,
}

pub struct Context {
    pub cfg: RunConfig,
    pub digest: String,
    pub providers: Providers,
}

impl Context {
    pub fn new(args: &GlobalArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = args.seed {
            cfg.seed = s;
            cfg.model.seed = s;
            cfg.stage1.seed = s;
            cfg.stage2.seed = s;
        }
        if let Some(w) = args.workers {
            cfg.workers = w;
        }
        if cfg.workers > 0 {
            // fails only if a pool already exists, which is harmless here
            let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
        }
        let providers = if args.stub_providers {
            Providers::stubs()
        } else {
            Providers::resolve(&cfg.providers)
        };
        Ok(Self {
            digest: cfg.digest(),
            cfg,
            providers,
        })
    }

    /// A path from the flag, else from the config's `paths`, else an error.
    pub fn path(&self, flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        flag.clone()
            .or_else(|| configured.clone())
            .ok_or_else(|| Error::Config(format!("no {what} given (flag or config paths)")).into())
    }
}
