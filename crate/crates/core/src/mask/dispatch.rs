//! Edit type to pipeline family.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::task::EditTaskType;

/// One of the nine synthesis pipeline families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PipelineId(pub u8);

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pipeline{}", self.0)
    }
}

/// What a pipeline family does, in one line.
pub fn describe(p: PipelineId) -> &'static str {
    match p.0 {
        1 => "ground, mask, dilate and feather, inpaint or edit, merge with the original",
        2 => "attention-difference mask from the caption change, instruction edit, blend",
        3 => "object-preserving edit of the grounded object's pose",
        4 => "remove the object, then crop and paste it at a new place or size",
        5 => "implicit instruction made explicit, then an instruction edit",
        6 => "layout rearrangement of the grounded object",
        7 => "reference-guided customization inside the object mask",
        8 => "material fusion from a reference texture inside the object mask",
        9 => "condition image derived from an edited pair",
        _ => "unknown",
    }
}

/// The fixed dispatch table. Total over all task types.
pub fn dispatch(task: EditTaskType) -> PipelineId {
    use EditTaskType::*;
    PipelineId(match task {
        Remove | Replace | Add | Counting | BackgroundChange | ToneTransfer => 1,
        // whole-image instruction edits, like tone transfer
        StyleChange => 1,
        ColorAlter | AppearanceAlter => 2,
        // localized attribute edit driven by a caption difference
        TextualChange => 2,
        ActionChange => 3,
        Movement | Resize => 4,
        // bounding-box geometry on the grounded object
        Outpaint | RotationChange => 4,
        ImplicitChange => 5,
        RelationChange => 6,
        ImageReference => 7,
        MaterialTransfer => 8,
        // same fusion step with a textual material description
        MaterialChange => 8,
        VisualSketch | VisualScribble | VisualSegmentation | VisualDepth | VisualLayout => 9,
    })
}

/// `(task, pipeline)` for every task type, in taxonomy order.
pub fn dispatch_table() -> Vec<(EditTaskType, PipelineId)> {
    EditTaskType::ALL.iter().map(|&t| (t, dispatch(t))).collect()
}
