//! Task-specific consistency checks on generated records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::lexicon::{allowed_verbs, contains_phrase, is_color_word, is_inanimate};
use super::record::EditRecord;
use crate::task::EditTaskType::{self, *};
use crate::text::words;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    EmptyField,
    MissingVerb,
    ObjectNotInInput,
    ObjectNotInOutput,
    MissingColor,
    InanimateActionTarget,
    UnchangedCaption,
}

impl Violation {
    pub fn code(self) -> &'static str {
        match self {
            Violation::EmptyField => "empty_field",
            Violation::MissingVerb => "missing_verb",
            Violation::ObjectNotInInput => "object_not_in_input",
            Violation::ObjectNotInOutput => "object_not_in_output",
            Violation::MissingColor => "missing_color",
            Violation::InanimateActionTarget => "inanimate_action_target",
            Violation::UnchangedCaption => "unchanged_caption",
        }
    }
}

/// Allowed instruction words per task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbConstraints {
    verbs: BTreeMap<EditTaskType, Vec<String>>,
}

impl Default for VerbConstraints {
    fn default() -> Self {
        Self {
            verbs: EditTaskType::ALL
                .iter()
                .map(|&t| (t, allowed_verbs(t).iter().map(|v| v.to_string()).collect()))
                .collect(),
        }
    }
}

impl VerbConstraints {
    pub fn verbs(&self, task: EditTaskType) -> &[String] {
        self.verbs.get(&task).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Replaces a task's verb list. An empty list is ignored so every task
    /// keeps at least one verb.
    pub fn set(&mut self, task: EditTaskType, verbs: Vec<String>) {
        if !verbs.is_empty() {
            self.verbs.insert(task, verbs);
        }
    }
}

fn normalized(text: &str) -> String {
    words(text).join(" ")
}

/// All rule violations of `record`, in a fixed order. An empty list means
/// the record is consistent.
pub fn validate_instruction(record: &EditRecord, constraints: &VerbConstraints) -> Vec<Violation> {
    let mut out = Vec::new();
    let r = record;
    if [&r.edit, &r.edited_object, &r.input, &r.output]
        .iter()
        .any(|s| s.trim().is_empty())
    {
        out.push(Violation::EmptyField);
    }
    let task = r.edit_type;
    if !constraints
        .verbs(task)
        .iter()
        .any(|v| contains_phrase(&r.edit, v))
    {
        out.push(Violation::MissingVerb);
    }
    match task {
        Replace | Remove | ColorAlter | AppearanceAlter | ActionChange
            if !contains_phrase(&r.input, &r.edited_object) =>
        {
            out.push(Violation::ObjectNotInInput)
        }
        Add if !contains_phrase(&r.output, &r.edited_object) => {
            out.push(Violation::ObjectNotInOutput)
        }
        _ => {}
    }
    if task == ColorAlter && !words(&r.edit).iter().any(|w| is_color_word(w)) {
        out.push(Violation::MissingColor);
    }
    if task == ActionChange && is_inanimate(&r.edited_object) {
        out.push(Violation::InanimateActionTarget);
    }
    if normalized(&r.input) == normalized(&r.output) {
        out.push(Violation::UnchangedCaption);
    }
    out
}
