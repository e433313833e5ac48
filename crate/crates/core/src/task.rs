//! The closed taxonomy of edit tasks, their categories, and the canonical
//! expert each task is routed to.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{contract_err, Error};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EditTaskType {
    Add,
    Remove,
    Replace,
    ColorAlter,
    AppearanceAlter,
    MaterialChange,
    ActionChange,
    TextualChange,
    Counting,
    BackgroundChange,
    ToneTransfer,
    StyleChange,
    Movement,
    Outpaint,
    RotationChange,
    Resize,
    ImplicitChange,
    RelationChange,
    VisualSketch,
    VisualScribble,
    VisualSegmentation,
    VisualDepth,
    VisualLayout,
    MaterialTransfer,
    ImageReference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    Local,
    Global,
    CameraMovement,
    Implicit,
    Visual,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 5] = [
        TaskCategory::Local,
        TaskCategory::Global,
        TaskCategory::CameraMovement,
        TaskCategory::Implicit,
        TaskCategory::Visual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskCategory::Local => "local",
            TaskCategory::Global => "global",
            TaskCategory::CameraMovement => "camera movement",
            TaskCategory::Implicit => "implicit",
            TaskCategory::Visual => "visual",
        }
    }
}

/// One-based expert number as listed in the expert assignment table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExpertId(pub usize);

impl ExpertId {
    /// Zero-based column in the router projection.
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

/// Number of experts in the canonical assignment.
pub const CANONICAL_EXPERT_COUNT: usize = 11;

/// Instruction count of the full reference dataset, shown by `stats`.
pub const REFERENCE_TOTAL_INSTRUCTIONS: u64 = 2_506_320;

use EditTaskType::*;

impl EditTaskType {
    pub const ALL: [EditTaskType; 25] = [
        Add,
        Remove,
        Replace,
        ColorAlter,
        AppearanceAlter,
        MaterialChange,
        ActionChange,
        TextualChange,
        Counting,
        BackgroundChange,
        ToneTransfer,
        StyleChange,
        Movement,
        Outpaint,
        RotationChange,
        Resize,
        ImplicitChange,
        RelationChange,
        VisualSketch,
        VisualScribble,
        VisualSegmentation,
        VisualDepth,
        VisualLayout,
        MaterialTransfer,
        ImageReference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Add => "add",
            Remove => "remove",
            Replace => "replace",
            ColorAlter => "color alter",
            AppearanceAlter => "appearance alter",
            MaterialChange => "material change",
            ActionChange => "action change",
            TextualChange => "textual change",
            Counting => "counting",
            BackgroundChange => "background change",
            ToneTransfer => "tone transfer",
            StyleChange => "style change",
            Movement => "movement",
            Outpaint => "outpaint",
            RotationChange => "rotation change",
            Resize => "resize",
            ImplicitChange => "implicit change",
            RelationChange => "relation change",
            VisualSketch => "visual sketch",
            VisualScribble => "visual scribble",
            VisualSegmentation => "visual segmentation",
            VisualDepth => "visual depth",
            VisualLayout => "visual layout",
            MaterialTransfer => "material transfer",
            ImageReference => "image reference",
        }
    }

    /// Position in [`EditTaskType::ALL`]; also the row of the task-embedding table.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap()
    }

    pub fn category(self) -> TaskCategory {
        match self {
            Add | Remove | Replace | ColorAlter | AppearanceAlter | MaterialChange
            | ActionChange | TextualChange | Counting => TaskCategory::Local,
            BackgroundChange | ToneTransfer | StyleChange => TaskCategory::Global,
            Movement | Outpaint | RotationChange | Resize => TaskCategory::CameraMovement,
            ImplicitChange | RelationChange => TaskCategory::Implicit,
            VisualSketch | VisualScribble | VisualSegmentation | VisualDepth | VisualLayout
            | MaterialTransfer | ImageReference => TaskCategory::Visual,
        }
    }

    pub fn canonical_expert(self) -> ExpertId {
        ExpertId(match self {
            ToneTransfer | BackgroundChange | StyleChange => 1,
            ImplicitChange | RelationChange => 2,
            Add | Remove | Replace | ColorAlter | AppearanceAlter | MaterialChange
            | ActionChange | TextualChange | Counting => 3,
            Movement | Outpaint | Resize | RotationChange => 4,
            VisualLayout => 5,
            VisualDepth => 6,
            MaterialTransfer => 7,
            ImageReference => 8,
            VisualScribble => 9,
            VisualSegmentation => 10,
            VisualSketch => 11,
        })
    }

    /// Whether the task consumes a reference image as its visual prompt.
    pub fn is_visual(self) -> bool {
        self.category() == TaskCategory::Visual
    }

    /// Per-type instruction counts of the full reference dataset.
    pub fn reference_instruction_count(self) -> u64 {
        match self {
            Remove => 109_505,
            Replace => 98_109,
            Add => 395_667,
            ColorAlter => 337_078,
            AppearanceAlter => 79_720,
            MaterialChange => 21_646,
            ActionChange => 47_210,
            TextualChange => 2_500,
            Counting => 698,
            BackgroundChange => 413_570,
            ToneTransfer => 553_919,
            StyleChange => 27_488,
            Movement => 7_724,
            Outpaint => 57_462,
            RotationChange => 17_022,
            Resize => 10_219,
            ImplicitChange => 9_917,
            RelationChange => 410,
            VisualSketch | VisualScribble | VisualSegmentation | VisualDepth | VisualLayout => {
                55_385
            }
            MaterialTransfer => 21_646,
            ImageReference => 17_885,
        }
    }
}

impl fmt::Display for EditTaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EditTaskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s
            .trim()
            .to_lowercase()
            .replace(['_', '-'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        if let Some(t) = Self::ALL.iter().find(|t| t.name() == norm) {
            return Ok(*t);
        }
        let alias = match norm.as_str() {
            "color" | "colour alter" => ColorAlter,
            "appearance" => AppearanceAlter,
            "textual" | "text change" => TextualChange,
            "background" => BackgroundChange,
            "tune transfer" | "tone" => ToneTransfer,
            "style" => StyleChange,
            "outpainting" | "out painting" => Outpaint,
            "rotation" | "rotate" => RotationChange,
            "implicit" => ImplicitChange,
            "relation" => RelationChange,
            "sketch" => VisualSketch,
            "scribble" => VisualScribble,
            "segmentation" | "visual segment" => VisualSegmentation,
            "depth" => VisualDepth,
            "visual bbox" | "visual bounding box" | "layout" | "bbox" => VisualLayout,
            "visual material transfer" => MaterialTransfer,
            "visual reference" | "reference" => ImageReference,
            _ => return Err(contract_err!("unknown edit task {s:?}")),
        };
        Ok(alias)
    }
}

impl Serialize for EditTaskType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EditTaskType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
