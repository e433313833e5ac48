//! Edit-type prediction from an instruction: a text-generation client when
//! available, a verb and cue-word rule set otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::instruct::lexicon::{allowed_verbs, contains_phrase, cue_words, is_color_word};
use crate::instruct::parse::normalize_single_quotes;
use crate::providers::{GenerateRequest, TextGenerator};
use crate::task::EditTaskType::{self, *};
use crate::text::words;

/// Type returned when the rules find no unique match.
pub const DEFAULT_TASK: EditTaskType = AppearanceAlter;

pub const CLASSIFY_PREFIX: &str = "Classify the image editing instruction into exactly one of these edit types";
const INSTRUCTION_MARKER: &str = "\nInstruction: ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    Low,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Model,
    Rules,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub task: EditTaskType,
    pub confidence: Confidence,
    pub source: PredictionSource,
    /// Set when the client was asked but the rules had to answer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

pub fn classify_prompt(instruction: &str) -> String {
    let names: Vec<&str> = EditTaskType::ALL.iter().map(|t| t.name()).collect();
    format!(
        "{CLASSIFY_PREFIX}: {}. Reply with JSON of the form {{\"edit type\": \"<type>\"}} and nothing else.{INSTRUCTION_MARKER}{}",
        names.join(", "),
        instruction.trim()
    )
}

/// The instruction inside a classification prompt, if `prompt` is one.
pub fn parse_classify_prompt(prompt: &str) -> Option<&str> {
    if !prompt.starts_with(CLASSIFY_PREFIX) {
        return None;
    }
    prompt.rsplit_once(INSTRUCTION_MARKER).map(|(_, i)| i)
}

/// Tasks that need no cue word: their instruction verbs alone identify them.
fn verb_suffices(task: EditTaskType) -> bool {
    matches!(task, Add | Remove | Replace | Movement | RotationChange)
}

/// Rule score of one task: one point for an instruction verb, two per cue
/// word, one per color word for color edits. Tasks whose verbs are shared
/// score zero without a cue.
fn rule_score(task: EditTaskType, instruction: &str, ws: &[String]) -> u32 {
    let verb = allowed_verbs(task).iter().any(|v| contains_phrase(instruction, v)) as u32;
    let cues = cue_words(task);
    let mut cue = 2 * ws.iter().filter(|w| cues.contains(&w.as_str())).count() as u32;
    if task == ColorAlter {
        cue += ws.iter().filter(|w| is_color_word(w)).count() as u32;
    }
    if cue == 0 && !verb_suffices(task) {
        return 0;
    }
    verb + cue
}

/// Highest-scoring task if it is unique, else [`DEFAULT_TASK`] with low
/// confidence.
pub fn rule_predict(instruction: &str) -> Result<Prediction> {
    let ws = words(instruction);
    if ws.is_empty() {
        return Err(contract_err!("cannot predict the edit type of an empty instruction"));
    }
    let scores: Vec<(EditTaskType, u32)> = EditTaskType::ALL
        .iter()
        .map(|&t| (t, rule_score(t, instruction, &ws)))
        .collect();
    let best = scores.iter().map(|s| s.1).max().unwrap_or(0);
    let leaders: Vec<EditTaskType> = scores.iter().filter(|s| s.1 == best).map(|s| s.0).collect();
    let (task, confidence) = match leaders.as_slice() {
        [t] if best > 0 => (*t, Confidence::High),
        _ => (DEFAULT_TASK, Confidence::Low),
    };
    Ok(Prediction {
        task,
        confidence,
        source: PredictionSource::Rules,
        warning: None,
    })
}

#[derive(Deserialize)]
struct ClassifyResponse {
    #[serde(rename = "edit type")]
    edit_type: String,
}

fn parse_classification(text: &str) -> Option<EditTaskType> {
    let body = text.trim();
    let parsed: ClassifyResponse = serde_json::from_str(body)
        .ok()
        .or_else(|| serde_json::from_str(&normalize_single_quotes(body)?).ok())?;
    parsed.edit_type.parse().ok()
}

/// Predicts the edit type. With a client, its answer is used when it names
/// one of the known types; a transport failure or unusable answer falls back
/// to the rules and records a warning.
pub fn predict_edit_type(instruction: &str, client: Option<&dyn TextGenerator>) -> Result<Prediction> {
    if words(instruction).is_empty() {
        return Err(contract_err!("cannot predict the edit type of an empty instruction"));
    }
    let Some(client) = client else {
        return rule_predict(instruction);
    };
    let req = GenerateRequest {
        prompt: classify_prompt(instruction),
        max_tokens: 32,
        temperature: 0.0,
        seed: 0,
    };
    let warning = match client.generate(&req) {
        Ok(text) => match parse_classification(&text) {
            Some(task) => {
                return Ok(Prediction {
                    task,
                    confidence: Confidence::High,
                    source: PredictionSource::Model,
                    warning: None,
                })
            }
            None => format!("unusable classification response {text:?}"),
        },
        Err(e) => format!("classification request failed: {e}"),
    };
    log::warn!("{warning}; falling back to rules");
    let mut p = rule_predict(instruction)?;
    p.warning = Some(warning);
    Ok(p)
}
