//! Word lists behind instruction validation and rule-based task prediction.

use std::collections::HashSet;
use std::sync::OnceLock;

use crate::task::EditTaskType::{self, *};
use crate::text::words;

static COLORS_SRC: &str = include_str!("../../data/colors.txt");
static INANIMATE_SRC: &str = include_str!("../../data/inanimate.txt");

fn lines(src: &'static str) -> Vec<&'static str> {
    src.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

pub fn colors() -> &'static [&'static str] {
    static L: OnceLock<Vec<&'static str>> = OnceLock::new();
    L.get_or_init(|| lines(COLORS_SRC))
}

pub fn inanimate_nouns() -> &'static [&'static str] {
    static L: OnceLock<Vec<&'static str>> = OnceLock::new();
    L.get_or_init(|| lines(INANIMATE_SRC))
}

fn color_set() -> &'static HashSet<&'static str> {
    static S: OnceLock<HashSet<&'static str>> = OnceLock::new();
    S.get_or_init(|| colors().iter().copied().collect())
}

pub fn is_color_word(w: &str) -> bool {
    color_set().contains(w)
}

/// Whether `text` contains `phrase` as a run of whole words.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let hay = words(text);
    let needle = words(phrase);
    if needle.is_empty() {
        return false;
    }
    hay.windows(needle.len()).any(|w| {
        w.iter()
            .zip(&needle)
            .all(|(a, b)| a == b || singular(a) == singular(b))
    })
}

fn singular(w: &str) -> &str {
    w.strip_suffix('s').filter(|s| s.len() > 2).unwrap_or(w)
}

/// Whether an object phrase names an inanimate thing: the whole phrase or
/// its head noun (last word) is in the inanimate lexicon.
pub fn is_inanimate(object: &str) -> bool {
    let ws = words(object);
    let Some(head) = ws.last() else {
        return false;
    };
    let joined = ws.join(" ");
    inanimate_nouns().iter().any(|n| {
        *n == joined || *n == head || *n == singular(head) || joined.ends_with(&format!(" {n}"))
    })
}

/// Instruction words an instruction of the given task must use.
pub fn allowed_verbs(task: EditTaskType) -> &'static [&'static str] {
    match task {
        Add => &["place", "add", "include"],
        Remove => &["remove", "delete", "erase", "eliminate"],
        Replace => &["replace", "swap", "substitute", "exchange"],
        ColorAlter => &["change", "turn", "make", "paint", "color", "dye"],
        AppearanceAlter => &["make", "give", "change", "decorate", "cover"],
        MaterialChange => &["change", "make", "turn", "transform"],
        ActionChange => &["make", "let", "have", "change"],
        TextualChange => &["change", "write", "rewrite", "replace"],
        Counting => &["remove", "reduce", "leave", "keep"],
        BackgroundChange => &["change", "replace", "set", "make", "turn"],
        ToneTransfer => &["make", "turn", "change", "transform"],
        StyleChange => &["make", "turn", "transform", "render", "convert"],
        Movement => &["move", "shift", "slide", "drag"],
        Outpaint => &["zoom", "expand", "extend", "widen"],
        RotationChange => &["rotate", "spin"],
        Resize => &["enlarge", "shrink", "resize", "zoom", "make"],
        ImplicitChange => &["what", "imagine", "show", "let"],
        RelationChange => &["swap", "switch", "exchange", "put", "move"],
        VisualSketch | VisualScribble | VisualSegmentation | VisualDepth | VisualLayout => {
            &["follow", "use", "generate", "draw"]
        }
        MaterialTransfer => &["apply", "transfer", "use", "make"],
        ImageReference => &["replace", "put", "use"],
    }
}

/// Content words that signal a task independently of the verb.
pub fn cue_words(task: EditTaskType) -> &'static [&'static str] {
    match task {
        Add | Remove | Replace => &[],
        ColorAlter => &["color", "colour"],
        AppearanceAlter => &[
            "shiny", "glow", "glowing", "rusty", "cracked", "old", "muddy", "fluffy",
            "decorated", "pattern", "striped", "spotted", "sparkly", "wearing", "sprinkles",
        ],
        MaterialChange => &[
            "material", "wood", "wooden", "metal", "metallic", "glass", "stone", "marble",
            "plastic", "ceramic", "leather", "steel",
        ],
        ActionChange => &[
            "action", "jump", "run", "sit", "stand", "walk", "dance", "fly", "flying", "sleep",
            "wave", "stretch", "smile", "raise",
        ],
        TextualChange => &["text", "word", "words", "writing", "letters", "says", "reading"],
        Counting => &["one", "two", "three", "four", "five", "six", "only", "fewer"],
        BackgroundChange => &["background", "backdrop"],
        ToneTransfer => &[
            "night", "sunset", "sunrise", "dusk", "dawn", "winter", "summer", "autumn", "spring",
            "snowy", "rainy", "foggy", "stormy", "season", "weather", "evening",
        ],
        StyleChange => &[
            "style", "painting", "watercolor", "cartoon", "anime", "animated", "oil", "pixel",
            "impressionist",
        ],
        Movement => &["left", "right", "up", "down"],
        Outpaint => &["out", "view", "outpaint", "surroundings"],
        RotationChange => &["clockwise", "counterclockwise", "rotate"],
        Resize => &["bigger", "smaller", "larger", "enlarge", "shrink", "in"],
        ImplicitChange => &["would", "if", "after", "imagine"],
        RelationChange => &[
            "positions", "places", "position", "above", "below", "beside", "behind", "under",
        ],
        VisualSketch => &["sketch"],
        VisualScribble => &["scribble"],
        VisualSegmentation => &["segmentation"],
        VisualDepth => &["depth"],
        VisualLayout => &["layout", "bbox", "box"],
        MaterialTransfer => &["material"],
        ImageReference => &["reference"],
    }
}
