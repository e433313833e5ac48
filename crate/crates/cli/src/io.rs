//! JSONL streams, `-` for stdin/stdout, and `.partial` output files.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use editforge::error::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const STDIO: &str = "-";

pub fn read_text(path: &Path) -> Result<String> {
    if path == Path::new(STDIO) {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(|e| Error::Contract(format!("cannot read {}: {e}", path.display())).into())
}

/// Parses one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader: Box<dyn BufRead> = if path == Path::new(STDIO) {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(
            File::open(path).map_err(|e| Error::Contract(format!("cannot open {}: {e}", path.display())))?,
        ))
    };
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

/// Directory that relative file references in `path` resolve against.
pub fn base_dir(path: &Path) -> PathBuf {
    if path == Path::new(STDIO) {
        return PathBuf::from(".");
    }
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// An output stream. File outputs are written under `<path>.partial` and
/// renamed into place by [`Output::finish`]; a failed run leaves the
/// partial file behind.
pub struct Output {
    target: Option<(PathBuf, PathBuf)>,
    writer: Box<dyn Write>,
}

impl Output {
    pub fn create(path: &Path) -> Result<Self> {
        if path == Path::new(STDIO) {
            return Ok(Self {
                target: None,
                writer: Box::new(BufWriter::new(io::stdout())),
            });
        }
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let partial = partial_path(path);
        let file = File::create(&partial).with_context(|| format!("creating {}", partial.display()))?;
        Ok(Self {
            target: Some((partial, path.to_path_buf())),
            writer: Box::new(BufWriter::new(file)),
        })
    }

    pub fn write_line<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.writer, value)?;
        self.writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        if let Some((partial, path)) = self.target.take() {
            drop(self.writer);
            fs::rename(&partial, &path)?;
        }
        Ok(())
    }
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes a pretty JSON document, through a partial file.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    if path == Path::new(STDIO) {
        io::stdout().write_all(text.as_bytes())?;
        return Ok(());
    }
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let partial = partial_path(path);
    fs::write(&partial, text)?;
    fs::rename(&partial, path)?;
    Ok(())
}

/// Where a command's summary document goes: next to a file output, or to
/// stderr when the output is stdout.
pub fn emit_summary<T: Serialize>(explicit: Option<&Path>, output: &Path, value: &T) -> Result<()> {
    match explicit {
        Some(p) => write_json(p, value),
        None if output == Path::new(STDIO) => {
            eprintln!("{}", serde_json::to_string(value)?);
            Ok(())
        }
        None => {
            let mut s = output.as_os_str().to_owned();
            s.push(".summary.json");
            write_json(Path::new(&s), value)
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let partial = partial_path(path);
    fs::write(&partial, text)?;
    fs::rename(&partial, path)?;
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let partial = partial_path(path);
    fs::write(&partial, bytes)?;
    fs::rename(&partial, path)?;
    Ok(())
}
