//! Replays the fuzz seed corpus through the same invariants the fuzz
//! targets check, so the seeds stay meaningful without cargo-fuzz.

use std::path::{Path, PathBuf};

use editforge::config::RunConfig;
use editforge::dump::{decode, encode};
use editforge::instruct::parse::normalize_single_quotes;
use editforge::instruct::{parse_response, EditRecord};
use editforge::model::Manifest;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).unwrap()
}

#[test]
fn eftn_seeds_decode_and_reencode() {
    for (p, b) in seeds("eftn_decode") {
        let t = decode(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(encode(&t), b);
    }
}

#[test]
fn response_seeds() {
    let mut parsed = 0;
    for (_, b) in seeds("parse_response") {
        if let Ok(f) = parse_response(text(&b)) {
            assert_eq!(parse_response(&serde_json::to_string(&f).unwrap()).unwrap(), f);
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn record_seeds_round_trip() {
    for (p, b) in seeds("jsonl_records") {
        for line in text(&b).lines() {
            let r: EditRecord = serde_json::from_str(line).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            let back: EditRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            assert_eq!(back, r);
        }
    }
}

#[test]
fn manifest_and_config_seeds() {
    let manifests = seeds("checkpoint_manifest");
    assert!(manifests.iter().any(|(_, b)| Manifest::parse(text(b)).is_ok()));
    for (p, b) in seeds("run_config") {
        let cfg = RunConfig::parse(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(cfg.digest().len(), 64);
    }
}

#[test]
fn single_quote_seeds() {
    for (_, b) in seeds("single_quotes") {
        let t = text(&b);
        let out = normalize_single_quotes(t);
        if t.ends_with("{'edit") {
            assert_eq!(out, None);
        } else {
            assert!(serde_json::from_str::<serde_json::Value>(&out.unwrap()).is_ok(), "{t}");
        }
    }
}
