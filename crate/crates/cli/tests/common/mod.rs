#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

pub fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn toy50() -> PathBuf {
    root().join("fixtures/toy50")
}

/// The binary with provider environment variables cleared, so a developer
/// shell never leaks real endpoints into a test.
pub fn editforge() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_editforge"));
    for v in ["EF_TEXTGEN_URL", "EF_EMBED_URL", "EF_EMBED2_URL", "EF_DETECT_URL", "EF_VLM_URL", "EF_IMAGEOP_URL"] {
        c.env_remove(v);
    }
    c.stdin(Stdio::null());
    c
}

/// Runs with stub providers and the toy50 configuration; panics with
/// stderr when the command fails.
pub fn run_ok(args: &[&str]) -> Output {
    let cfg = toy50().join("config.json");
    let out = editforge()
        .arg("--config")
        .arg(&cfg)
        .arg("--stub-providers")
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "editforge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir`, as sorted relative paths.
pub fn files(dir: &Path) -> Vec<PathBuf> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push(p.strip_prefix(base).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
