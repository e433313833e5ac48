//! The instruction-generation protocol: JSON-only prompts with in-context
//! examples, strict response parsing, and per-task consistency rules.

pub mod caption;
pub mod generate;
pub mod lexicon;
pub mod parse;
pub mod prompt;
pub mod record;
pub mod validate;

pub use caption::compose_counterfactual_caption;
pub use generate::{Generator, Outcome, Rejection, SamplingSettings, BATCH_SIZE, MAX_ATTEMPTS};
pub use parse::{parse_response, ParseReason, ResponseError};
pub use prompt::{assemble_prompt, InContextPool};
pub use record::{EditRecord, ResponseFields};
pub use validate::{validate_instruction, VerbConstraints, Violation};
