//! The generation loop: prompt, call, parse, validate, enhance the pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::parse::parse_response;
use super::prompt::{assemble_prompt, InContextPool};
use super::record::EditRecord;
use super::validate::{validate_instruction, VerbConstraints};
use crate::error::Result;
use crate::providers::{GenerateRequest, TextGenerator};
use crate::rng::{derive, derive_seed};
use crate::task::EditTaskType;

/// Attempts per caption before the caption is rejected for good.
pub const MAX_ATTEMPTS: usize = 3;

/// Captions processed against one pool snapshot before accepted records
/// are appended. Fixed so results do not depend on the worker count.
pub const BATCH_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSettings {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        Self {
            max_tokens: 256,
            temperature: 0.7,
        }
    }
}

/// Why one attempt failed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub attempt: usize,
    pub reason: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Accepted { record: EditRecord, attempts: usize },
    Rejected { rejections: Vec<Rejection> },
}

impl Outcome {
    pub fn record(&self) -> Option<&EditRecord> {
        match self {
            Outcome::Accepted { record, .. } => Some(record),
            Outcome::Rejected { .. } => None,
        }
    }
}

pub struct Generator<'a> {
    pub client: &'a dyn TextGenerator,
    pub constraints: VerbConstraints,
    pub sampling: SamplingSettings,
}

impl<'a> Generator<'a> {
    pub fn new(client: &'a dyn TextGenerator) -> Self {
        Self {
            client,
            constraints: VerbConstraints::default(),
            sampling: SamplingSettings::default(),
        }
    }

    /// Tries up to [`MAX_ATTEMPTS`] times to get a valid record for
    /// `caption`. Parse and validation failures become rejections; a
    /// transport failure is returned as an error.
    pub fn generate(&self, caption: &str, task: EditTaskType, pool: &InContextPool, seed: u64) -> Result<Outcome> {
        let mut rejections = Vec::new();
        for attempt in 1..=MAX_ATTEMPTS {
            let mut rng = derive(seed, &format!("examples/{attempt}"));
            let prompt = assemble_prompt(task, caption, pool, &self.constraints, &mut rng)?;
            let req = GenerateRequest {
                prompt,
                max_tokens: self.sampling.max_tokens,
                temperature: self.sampling.temperature,
                seed: derive_seed(seed, &format!("request/{attempt}")),
            };
            let text = self.client.generate(&req)?;
            let fields = match parse_response(&text) {
                Ok(f) => f,
                Err(e) => {
                    rejections.push(Rejection {
                        attempt,
                        reason: e.reason.code().to_string(),
                        detail: e.to_string(),
                    });
                    continue;
                }
            };
            let record = EditRecord::new(task, caption, fields);
            let violations = validate_instruction(&record, &self.constraints);
            if violations.is_empty() {
                return Ok(Outcome::Accepted { record, attempts: attempt });
            }
            for v in violations {
                rejections.push(Rejection {
                    attempt,
                    reason: v.code().to_string(),
                    detail: format!("{:?}", record.edit),
                });
            }
        }
        Ok(Outcome::Rejected { rejections })
    }

    /// Generates and, on acceptance, appends the record to the pool.
    pub fn generate_and_enhance(
        &self,
        caption: &str,
        task: EditTaskType,
        pool: &mut InContextPool,
        seed: u64,
    ) -> Result<Outcome> {
        let out = self.generate(caption, task, pool, seed)?;
        if let Some(r) = out.record() {
            pool.self_enhance(caption, r, &self.constraints)?;
        }
        Ok(out)
    }

    /// Processes `items` in fixed-size batches. Items within a batch run in
    /// parallel against the same pool snapshot; accepted records are then
    /// appended in input order. Item `i` uses a seed derived from `seed`
    /// and `i`, so results are independent of thread scheduling.
    pub fn generate_batch(
        &self,
        items: &[(String, EditTaskType)],
        pool: &mut InContextPool,
        seed: u64,
    ) -> Result<Vec<Outcome>> {
        self.generate_batch_at(items, 0, pool, seed)
    }

    /// [`Generator::generate_batch`] for a slice that starts at item
    /// `start` of a longer run. With `start` a multiple of
    /// [`BATCH_SIZE`], running a long list slice by slice gives the same
    /// outcomes as running it whole.
    pub fn generate_batch_at(
        &self,
        items: &[(String, EditTaskType)],
        start: usize,
        pool: &mut InContextPool,
        seed: u64,
    ) -> Result<Vec<Outcome>> {
        let mut out = Vec::with_capacity(items.len());
        for (b, chunk) in items.chunks(BATCH_SIZE).enumerate() {
            let snapshot = &*pool;
            let results: Vec<Result<Outcome>> = chunk
                .par_iter()
                .enumerate()
                .map(|(j, (caption, task))| {
                    let i = start + b * BATCH_SIZE + j;
                    self.generate(caption, *task, snapshot, derive_seed(seed, &format!("item/{i}")))
                })
                .collect();
            for ((caption, _), r) in chunk.iter().zip(results) {
                let r = r?;
                if let Some(rec) = r.record() {
                    pool.self_enhance(caption, rec, &self.constraints)?;
                }
                out.push(r);
            }
        }
        Ok(out)
    }
}
