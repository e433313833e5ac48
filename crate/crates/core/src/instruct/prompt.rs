//! Prompt templates and the self-enhancing in-context example pool.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::record::{EditRecord, ResponseFields};
use super::validate::{validate_instruction, VerbConstraints};
use crate::error::{contract_err, Error, Result};
use crate::rng::Rng;
use crate::task::EditTaskType::{self, *};

pub const SYSTEM_PROMPT: &str = "You are an assistant that only speaks JSON. Do not write normal text. The assistant answer is JSON with the following string fields: edit, edited object, output. Here is the latest conversation between the Assistant and the User.";

pub const INITIAL_MESSAGE: &str = "Sure, I'd be happy to help! Just provide me with the input (the original caption), and I'll generate the instruction, edited object, and output caption for you. Let's get started!";

/// Prefix of every caption line in the conversation.
pub const USER_INPUT: &str = "User input: ";
pub const ASSISTANT: &str = "Assistant: ";
pub const USER: &str = "User: ";

/// Number of pool examples placed in each prompt.
pub const EXAMPLES_PER_PROMPT: usize = 5;

/// (instruction purpose, edited-object gloss, output gloss) per task.
fn task_glosses(task: EditTaskType) -> (&'static str, &'static str, &'static str) {
    match task {
        Add => ("adding an object to the image", "the object to add", "the caption with the object"),
        Remove => ("removing an object from the image", "the object to remove", "the caption without the object"),
        Replace => ("replacing an object in the image with a new object", "the object to replace", "the caption with the new object"),
        ColorAlter => ("changing the color of an object in the image", "the object to recolor", "the caption with the new color"),
        AppearanceAlter => ("changing the appearance of an object in the image", "the object to alter", "the caption with the altered appearance"),
        MaterialChange => ("changing the material of an object in the image", "the object whose material changes", "the caption with the new material"),
        ActionChange => ("changing the action of a living subject in the image", "the subject whose action changes", "the caption with the new action"),
        TextualChange => ("changing the text shown in the image", "the object carrying the text", "the caption with the new text"),
        Counting => ("changing how many of an object appear in the image", "the counted object", "the caption with the new count"),
        BackgroundChange => ("changing the background of the image while keeping the foreground", "the word background", "the caption with the new background"),
        ToneTransfer => ("changing the time, weather or season of the scene", "the word scene", "the caption with the new tone"),
        StyleChange => ("changing the artistic style of the image", "the word style", "the caption in the new style"),
        Movement => ("moving an object to the left, right, up or down", "the object to move", "the caption with the object at its new position"),
        Outpaint => ("expanding the view beyond the current frame", "the object kept in view", "the caption of the expanded scene"),
        RotationChange => ("rotating the viewpoint of an object clockwise or counterclockwise", "the object to rotate", "the caption from the new viewpoint"),
        Resize => ("making an object larger or smaller", "the object to resize", "the caption with the resized object"),
        ImplicitChange => ("an implicit change that requires reasoning about the scene", "the affected object", "the caption after the change"),
        RelationChange => ("swapping the positions of two objects", "the first object", "the caption with the swapped positions"),
        VisualSketch => ("editing the image guided by a sketch image", "the object guided by the sketch", "the caption after the guided edit"),
        VisualScribble => ("editing the image guided by a scribble image", "the object guided by the scribble", "the caption after the guided edit"),
        VisualSegmentation => ("editing the image guided by a segmentation map", "the object guided by the segmentation", "the caption after the guided edit"),
        VisualDepth => ("editing the image guided by a depth map", "the object guided by the depth map", "the caption after the guided edit"),
        VisualLayout => ("editing the image guided by a layout of bounding boxes", "the object inside the layout box", "the caption after the guided edit"),
        MaterialTransfer => ("transferring the material of a reference image to an object", "the object receiving the material", "the caption with the transferred material"),
        ImageReference => ("replacing an object with the object from a reference image", "the object to replace", "the caption with the reference object"),
    }
}

pub fn task_description(task: EditTaskType) -> String {
    let (purpose, object, output) = task_glosses(task);
    format!(
        "Hi, My job is to take a given caption (input) and to output the following: an instruction for {purpose} (edit), {object} (edited object), and {output} (output). Please help me do it. I will give you the input, and you will help."
    )
}

pub fn output_format(task: EditTaskType, constraints: &VerbConstraints) -> String {
    let verbs = constraints.verbs(task).join(", ");
    let tail = if task == ActionChange {
        "Don\u{2019}t include any \\ in the instruction."
    } else {
        "Don\u{2019}t include any \\ or edit any actions in the instruction."
    };
    format!(
        "When you reply, use the following format: {{'edit': '<instruction>', 'edited object': '<object>', 'output': '<caption>'}}. Construct the instruction with one of the following instruction words: [{verbs}]. {tail}"
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub input: String,
    pub response: ResponseFields,
}

/// Seed examples bundled with the crate, five per task.
static SEED_POOL: &str = include_str!("../../data/seed_pool.jsonl");

#[derive(Serialize, Deserialize)]
struct PoolLine {
    #[serde(rename = "edit type")]
    edit_type: EditTaskType,
    input: String,
    #[serde(flatten)]
    response: ResponseFields,
}

/// Per-task examples shown to the generator. Entries are only ever
/// appended.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InContextPool {
    entries: BTreeMap<EditTaskType, Vec<PoolEntry>>,
}

impl InContextPool {
    /// The bundled seed examples.
    pub fn seeded() -> Self {
        Self::from_jsonl(SEED_POOL).expect("bundled seed pool parses")
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut pool = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: PoolLine = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("pool line {}: {e}", n + 1)))?;
            pool.push(l.edit_type, l.input, l.response);
        }
        Ok(pool)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (&task, entries) in &self.entries {
            for e in entries {
                let line = PoolLine {
                    edit_type: task,
                    input: e.input.clone(),
                    response: e.response.clone(),
                };
                out.push_str(&serde_json::to_string(&line).expect("pool line serializes"));
                out.push('\n');
            }
        }
        out
    }

    fn push(&mut self, task: EditTaskType, input: String, response: ResponseFields) {
        self.entries
            .entry(task)
            .or_default()
            .push(PoolEntry { input, response });
    }

    pub fn entries(&self, task: EditTaskType) -> &[PoolEntry] {
        self.entries.get(&task).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self, task: EditTaskType) -> usize {
        self.entries(task).len()
    }

    pub fn total(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Appends a validated record as a new example for its task.
    pub fn self_enhance(&mut self, caption: &str, record: &EditRecord, constraints: &VerbConstraints) -> Result<()> {
        let violations = validate_instruction(record, constraints);
        if !violations.is_empty() {
            let codes: Vec<_> = violations.iter().map(|v| v.code()).collect();
            return Err(contract_err!(
                "refusing to add an invalid {} record to the pool: {}",
                record.edit_type,
                codes.join(", ")
            ));
        }
        self.push(record.edit_type, caption.to_string(), record.response_fields());
        Ok(())
    }
}

/// The conversation sent to the generator: instructions, five examples
/// drawn uniformly without replacement from the task's pool, and the
/// caption to edit.
pub fn assemble_prompt(
    task: EditTaskType,
    caption: &str,
    pool: &InContextPool,
    constraints: &VerbConstraints,
    rng: &mut Rng,
) -> Result<String> {
    let entries = pool.entries(task);
    if entries.len() < EXAMPLES_PER_PROMPT {
        return Err(contract_err!(
            "in-context pool for {task} has {} entries, needs {EXAMPLES_PER_PROMPT}",
            entries.len()
        ));
    }
    let mut p = String::new();
    p.push_str(SYSTEM_PROMPT);
    p.push_str("\n\n");
    p.push_str(USER);
    p.push_str(&task_description(task));
    p.push(' ');
    p.push_str(&output_format(task, constraints));
    p.push('\n');
    p.push_str(ASSISTANT);
    p.push_str(INITIAL_MESSAGE);
    p.push('\n');
    for i in sample(rng, entries.len(), EXAMPLES_PER_PROMPT) {
        let e = &entries[i];
        p.push_str(USER_INPUT);
        p.push_str(&single_line(&e.input));
        p.push('\n');
        p.push_str(ASSISTANT);
        p.push_str(&serde_json::to_string(&e.response).expect("string fields serialize"));
        p.push('\n');
    }
    p.push_str(USER_INPUT);
    p.push_str(&single_line(caption));
    p.push('\n');
    p.push_str(ASSISTANT.trim_end());
    Ok(p)
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The caption a prompt asks about: the text after the last
/// [`USER_INPUT`] marker.
pub fn prompt_caption(prompt: &str) -> Option<&str> {
    let at = prompt.rfind(USER_INPUT)?;
    prompt[at + USER_INPUT.len()..].lines().next().map(str::trim)
}

/// The task a generation prompt was built for, recovered from its task
/// description.
pub fn prompt_task(prompt: &str) -> Option<EditTaskType> {
    EditTaskType::ALL
        .iter()
        .copied()
        .find(|&t| prompt.contains(&task_description(t)))
}
