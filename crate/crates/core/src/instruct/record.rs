use serde::{Deserialize, Serialize};

use crate::task::EditTaskType;

/// Placeholder the record schema uses for an absent visual input.
pub const NO_VISUAL_INPUT: &str = "None";

/// One edit triplet's text side. Field names follow the dataset schema,
/// spaces included.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRecord {
    pub edit: String,
    #[serde(rename = "edited object")]
    pub edited_object: String,
    pub input: String,
    pub output: String,
    #[serde(rename = "edit type")]
    pub edit_type: EditTaskType,
    #[serde(rename = "visual input", default = "none_string")]
    pub visual_input: String,
    #[serde(rename = "image file", default)]
    pub image_file: String,
    #[serde(rename = "edited file", default)]
    pub edited_file: String,
}

fn none_string() -> String {
    NO_VISUAL_INPUT.to_string()
}

impl EditRecord {
    pub fn new(
        edit_type: EditTaskType,
        input: impl Into<String>,
        response: ResponseFields,
    ) -> Self {
        Self {
            edit: response.edit,
            edited_object: response.edited_object,
            input: input.into(),
            output: response.output,
            edit_type,
            visual_input: none_string(),
            image_file: String::new(),
            edited_file: String::new(),
        }
    }

    pub fn visual_input_path(&self) -> Option<&str> {
        let v = self.visual_input.trim();
        (!v.is_empty() && v != NO_VISUAL_INPUT).then_some(v)
    }

    /// The three fields a model response carries.
    pub fn response_fields(&self) -> ResponseFields {
        ResponseFields {
            edit: self.edit.clone(),
            edited_object: self.edited_object.clone(),
            output: self.output.clone(),
        }
    }

    /// The record as a model response would state it.
    pub fn response_json(&self) -> String {
        serde_json::to_string(&self.response_fields()).expect("string fields serialize")
    }
}

/// The fields of a generation response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseFields {
    pub edit: String,
    #[serde(rename = "edited object")]
    pub edited_object: String,
    pub output: String,
}
