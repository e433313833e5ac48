//! Deterministic offline providers built on the toy shape world.
//!
//! Every stub is a pure function of its inputs: identical requests give
//! identical answers across runs and platforms.

use rand::seq::IndexedRandom;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{
    Detection, Detector, Embedder, EmbeddingVector, GenerateRequest, ImageOp, TextGenerator,
    VisionLanguageJudge, VlmVerdict,
};
use crate::error::{contract_err, Error, Result};
use crate::image::{dims, l1, pixel, set_pixel};
use crate::instruct::caption::{parse_compose_prompt, template_caption};
use crate::instruct::prompt::{prompt_caption, prompt_task};
use crate::model::predict::{parse_classify_prompt, rule_predict};
use crate::rng::{derive, normal_tensor};
use crate::task::EditTaskType::{self, *};
use crate::task::TaskCategory;
use crate::tensor::Tensor;
use crate::text::words;
use crate::toy::{analyze, color_rgb, parse_caption, Concepts, PALETTE, SHAPES};

pub const CLIP_TAG: &str = "stub-clip-v1";
pub const DINO_TAG: &str = "stub-dino-v1";
const EMBED_WIDTH: usize = 64;

fn hash64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Unit vector determined by a key.
fn unit_vector(key: &str) -> Vec<f64> {
    let mut rng = derive(hash64(&[key.as_bytes()]), "stub-unit");
    let v = normal_tensor(&mut rng, &[EMBED_WIDTH], 1.0).into_data();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

const STOPWORDS: [&str; 24] = [
    "a", "an", "the", "of", "on", "in", "with", "and", "to", "at", "is", "it", "its", "by",
    "for", "from", "into", "near", "next", "plain", "background", "this", "that", "as",
];

/// Text generator answering the crate's own prompt formats: instruction
/// generation, caption composition and task classification.
///
/// Generation responses are drawn from per-task templates keyed by a hash
/// of the prompt and seed. A fixed share of responses is deliberately
/// faulty (prose around the JSON, a missing key, or no instruction verb)
/// so retry and rejection paths see traffic.
pub struct StubTextGenerator;

impl TextGenerator for StubTextGenerator {
    fn generate(&self, req: &GenerateRequest) -> Result<String> {
        if let Some((concepts, context)) = parse_compose_prompt(&req.prompt) {
            return Ok(template_caption(&concepts, &context));
        }
        if let Some(instruction) = parse_classify_prompt(&req.prompt) {
            let p = rule_predict(instruction)?;
            return Ok(json!({ "edit type": p.task.name() }).to_string());
        }
        let (Some(task), Some(caption)) = (prompt_task(&req.prompt), prompt_caption(&req.prompt)) else {
            return Err(Error::Provider("stub text generator: unrecognized prompt".into()));
        };
        let h = hash64(&[req.prompt.as_bytes(), &req.seed.to_le_bytes()]);
        Ok(stub_response(task, caption, h))
    }
}

struct Picker(u64);

impl Picker {
    fn pick<'a>(&mut self, options: &[&'a str]) -> &'a str {
        let v = options[(self.0 % options.len() as u64) as usize];
        self.0 = self.0.rotate_right(7) ^ 0x9e37_79b9_7f4a_7c15;
        v
    }
}

/// The main object of a caption: the toy shape if present, else the first
/// word after an article that is not a color or common adjective.
pub fn caption_subject(caption: &str) -> String {
    if let Some(s) = parse_caption(caption).shape {
        return s;
    }
    const ADJ: [&str; 10] = ["small", "big", "large", "little", "old", "young", "beautiful", "tiny", "wooden", "empty"];
    let ws = words(caption);
    let after_article = ws
        .iter()
        .skip_while(|w| !matches!(w.as_str(), "a" | "an" | "the"))
        .skip(1)
        .find(|w| {
            !ADJ.contains(&w.as_str())
                && color_rgb(w).is_none()
                && !STOPWORDS.contains(&w.as_str())
        });
    after_article
        .or_else(|| ws.iter().find(|w| !STOPWORDS.contains(&w.as_str()) && !ADJ.contains(&w.as_str())))
        .cloned()
        .unwrap_or_else(|| "object".to_string())
}

fn other_color(p: &mut Picker, avoid: &[Option<&str>]) -> &'static str {
    let names: Vec<&str> = PALETTE
        .iter()
        .map(|(n, _)| *n)
        .filter(|n| !avoid.contains(&Some(*n)))
        .collect();
    p.pick(&names)
}

/// Replaces the first whole-word occurrence of `from` in `text`.
fn replace_word(text: &str, from: &str, to: &str) -> Option<String> {
    let mut out = Vec::new();
    let mut done = false;
    for tok in text.split_whitespace() {
        let bare = tok.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        if !done && bare == from {
            out.push(tok.to_lowercase().replace(&bare, to));
            done = true;
        } else {
            out.push(tok.to_string());
        }
    }
    done.then(|| out.join(" "))
}

fn toy_caption(c: &Concepts) -> Option<String> {
    Some(format!(
        "a {} {} on a {} background",
        c.color.as_ref()?,
        c.shape.as_ref()?,
        c.background.as_ref()?
    ))
}

/// (edit, edited object, output) for a task and caption.
fn stub_fields(task: EditTaskType, caption: &str, p: &mut Picker) -> (String, String, String) {
    let x = caption_subject(caption);
    let concepts = parse_caption(caption);
    let toy = toy_caption(&concepts).is_some();
    let color = concepts.color.as_deref();
    let bg = concepts.background.as_deref();
    let with_subject = |to: &str| replace_word(caption, &x, to).unwrap_or_else(|| format!("{caption} with a {to}"));
    match task {
        Add => {
            let obj = p.pick(&["hat", "ball", "star", "flower", "crown"]);
            let verb = p.pick(&["add", "place", "include"]);
            (format!("{verb} a {obj} next to the {x}"), obj.into(), format!("{caption} with a {obj}"))
        }
        Remove => {
            let out = match bg {
                Some(b) if toy => format!("a plain {b} background"),
                _ => format!("the scene of {caption} without the {x}"),
            };
            (format!("{} the {x}", p.pick(&["remove", "erase", "delete"])), x.clone(), out)
        }
        Replace => {
            let new = if toy {
                let others: Vec<&str> = SHAPES.iter().copied().filter(|s| *s != x).collect();
                p.pick(&others)
            } else {
                p.pick(&["dog", "lamp", "tree", "robot"])
            };
            (format!("replace the {x} with a {new}"), x.clone(), with_subject(new))
        }
        ColorAlter => {
            let c2 = other_color(p, &[color, bg]);
            let out = match toy_caption(&Concepts { color: Some(c2.into()), ..concepts.clone() }) {
                Some(c) => c,
                None => with_subject(&format!("{c2} {x}")),
            };
            let edit = match p.pick(&["make", "change", "turn", "paint"]) {
                "change" => format!("change the {x} to {c2}"),
                v => format!("{v} the {x} {c2}"),
            };
            (edit, x.clone(), out)
        }
        AppearanceAlter => {
            let look = p.pick(&["shiny", "rusty", "glowing", "striped"]);
            (format!("make the {x} look {look}"), x.clone(), with_subject(&format!("{look} {x}")))
        }
        MaterialChange => {
            let m = p.pick(&["wooden", "metal", "glass", "marble"]);
            (format!("make the {x} {m}"), x.clone(), with_subject(&format!("{m} {x}")))
        }
        ActionChange => {
            let (verb, ing) = *[("jump", "jumping"), ("dance", "dancing"), ("run", "running")]
                .choose(&mut derive(p.0, "action"))
                .unwrap();
            (format!("make the {x} {verb}"), x.clone(), with_subject(&format!("{x} {ing}")))
        }
        TextualChange => {
            let word = p.pick(&["hello", "open", "sale"]);
            (
                format!("write the word {word} on the {x}"),
                x.clone(),
                format!("{caption} with the word {word} written on the {x}"),
            )
        }
        Counting => (
            format!("leave only one {x}"),
            x.clone(),
            format!("only one {x} in {caption}"),
        ),
        BackgroundChange => match (toy, bg) {
            (true, Some(_)) => {
                let b2 = other_color(p, &[color, bg]);
                let out = toy_caption(&Concepts { background: Some(b2.into()), ..concepts.clone() }).unwrap();
                (format!("change the background to {b2}"), "background".into(), out)
            }
            _ => {
                let place = p.pick(&["a beach", "a forest", "a city street"]);
                (format!("change the background to {place}"), "background".into(), format!("{caption} in front of {place}"))
            }
        },
        ToneTransfer => {
            let (edit, tail) = *[("make it night", "at night"), ("turn the season to winter", "in winter"), ("make it a rainy day", "on a rainy day")]
                .choose(&mut derive(p.0, "tone"))
                .unwrap();
            (edit.into(), "scene".into(), format!("{caption} {tail}"))
        }
        StyleChange => {
            let s = p.pick(&["watercolor painting", "cartoon", "oil painting"]);
            (format!("make it look like a {s}"), "style".into(), format!("a {s} of {caption}"))
        }
        Movement => {
            let d = p.pick(&["left", "right", "up", "down"]);
            (format!("move the {x} {}", if matches!(d, "left" | "right") { format!("to the {d}") } else { d.to_string() }), x.clone(), format!("{caption} with the {x} moved {d}"))
        }
        Outpaint => (
            "zoom out to show more of the scene".into(),
            x.clone(),
            format!("a wide view of {caption}"),
        ),
        RotationChange => {
            let dir = p.pick(&["clockwise", "counterclockwise"]);
            (format!("rotate the {x} {dir}"), x.clone(), format!("{caption} seen from the side"))
        }
        Resize => {
            let (edit, adj) = if p.pick(&["up", "down"]) == "up" {
                (format!("make the {x} bigger"), "large")
            } else {
                (format!("make the {x} smaller"), "small")
            };
            (edit, x.clone(), with_subject(&format!("{adj} {x}")))
        }
        ImplicitChange => (
            format!("what would the {x} look like after a year outdoors"),
            x.clone(),
            with_subject(&format!("weathered {x}")),
        ),
        RelationChange => {
            let rel = p.pick(&["above", "below", "beside"]);
            (format!("put a ball {rel} the {x}"), x.clone(), format!("{caption} with a ball {rel} the {x}"))
        }
        VisualSketch | VisualScribble | VisualSegmentation | VisualDepth | VisualLayout => {
            let cond = match task {
                VisualSketch => "sketch",
                VisualScribble => "scribble",
                VisualSegmentation => "segmentation map",
                VisualDepth => "depth map",
                _ => "layout",
            };
            let new = p.pick(&["vase", "lamp", "ball"]);
            (format!("follow the {cond} to draw a {new} in place of the {x}"), x.clone(), with_subject(new))
        }
        MaterialTransfer => (
            format!("apply the material of the reference image to the {x}"),
            x.clone(),
            with_subject(&format!("{x} made of the reference material")),
        ),
        ImageReference => (
            format!("replace the {x} with the object in the reference image"),
            x.clone(),
            with_subject("reference object"),
        ),
    }
}

fn stub_response(task: EditTaskType, caption: &str, h: u64) -> String {
    let roll = h % 100;
    let mut p = Picker(h / 100);
    let (mut edit, obj, output) = stub_fields(task, caption, &mut p);
    if (10..14).contains(&roll) {
        // an instruction without any instruction word
        edit = format!("the {obj} should be different");
    }
    let single_quoted = (h >> 32).is_multiple_of(2);
    let body = if single_quoted {
        let q = |s: &str| s.replace('\'', "\\'");
        if (6..10).contains(&roll) {
            format!("{{'edit': '{}', 'edited object': '{}'}}", q(&edit), q(&obj))
        } else {
            format!("{{'edit': '{}', 'edited object': '{}', 'output': '{}'}}", q(&edit), q(&obj), q(&output))
        }
    } else {
        let mut v = json!({ "edit": edit, "edited object": obj, "output": output });
        if (6..10).contains(&roll) {
            v.as_object_mut().unwrap().remove("output");
        }
        v.to_string()
    };
    if roll < 6 {
        format!("Sure! Here is the edit you asked for: {body}")
    } else {
        body
    }
}

fn add_scaled(acc: &mut [f64], v: &[f64], s: f64) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += s * b);
}

fn concept_terms(c: &Concepts) -> Vec<String> {
    let mut t = Vec::new();
    if let Some(s) = &c.shape {
        t.push(format!("shape:{s}"));
    }
    if let Some(s) = &c.color {
        t.push(format!("color:{s}"));
    }
    if let Some(s) = &c.background {
        t.push(format!("bg:{s}"));
    }
    t
}

/// Weight of the component every embedding shares.
const SHARED_WEIGHT: f64 = 1.0;

fn concept_vector(terms: &[String], extra: &[String]) -> Vec<f64> {
    let mut acc = vec![0.0; EMBED_WIDTH];
    add_scaled(&mut acc, &unit_vector("shared"), SHARED_WEIGHT);
    for t in terms {
        add_scaled(&mut acc, &unit_vector(t), 1.0);
    }
    for w in extra {
        add_scaled(&mut acc, &unit_vector(&format!("word:{w}")), 0.35);
    }
    let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        acc.iter_mut().for_each(|x| *x /= n);
    }
    acc
}

/// Joint text/image embedder: a caption and a rendering of the scene it
/// describes map to the same vector. Vectors are normalized sums of
/// per-concept unit vectors and one shared component; caption words
/// outside the toy grammar add smaller per-word components.
#[derive(Clone, Debug, Default)]
pub struct ConceptEmbedder;

impl Embedder for ConceptEmbedder {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let c = parse_caption(text);
        let known: Vec<&str> = [&c.shape, &c.color, &c.background]
            .into_iter()
            .flatten()
            .map(String::as_str)
            .collect();
        let extra: Vec<String> = words(text)
            .into_iter()
            .filter(|w| !STOPWORDS.contains(&w.as_str()) && !known.contains(&w.as_str()))
            .collect();
        Ok(EmbeddingVector {
            values: concept_vector(&concept_terms(&c), &extra),
            provider: CLIP_TAG.into(),
        })
    }

    fn embed_image(&self, image: &Tensor) -> Result<EmbeddingVector> {
        dims(image)?;
        Ok(EmbeddingVector {
            values: concept_vector(&concept_terms(&analyze(image)), &[]),
            provider: CLIP_TAG.into(),
        })
    }
}

/// Image-only embedder: a fixed random projection of the 4x4
/// average-pooled image, centered at mid-gray.
#[derive(Clone, Debug, Default)]
pub struct PixelEmbedder;

const POOL: usize = 4;

impl PixelEmbedder {
    fn projection() -> &'static Tensor {
        static P: std::sync::OnceLock<Tensor> = std::sync::OnceLock::new();
        P.get_or_init(|| normal_tensor(&mut derive(0, "stub-dino-projection"), &[POOL * POOL * 3, EMBED_WIDTH], 1.0))
    }
}

impl Embedder for PixelEmbedder {
    fn embed_text(&self, _text: &str) -> Result<EmbeddingVector> {
        Err(contract_err!("{DINO_TAG} embeds images only"))
    }

    fn embed_image(&self, image: &Tensor) -> Result<EmbeddingVector> {
        let (h, w) = dims(image)?;
        let mut f = vec![0.0; POOL * POOL * 3];
        let mut n = [0.0f64; POOL * POOL];
        for y in 0..h {
            for x in 0..w {
                let cell = (y * POOL / h) * POOL + x * POOL / w;
                let p = pixel(image, y, x);
                (0..3).for_each(|c| f[cell * 3 + c] += p[c]);
                n[cell] += 1.0;
            }
        }
        for (i, v) in f.iter_mut().enumerate() {
            *v /= n[i / 3].max(1.0);
        }
        f.iter_mut().for_each(|v| *v -= 0.5);
        let values = Tensor::new(&[1, f.len()], f)?
            .matmul(Self::projection())?
            .into_data();
        Ok(EmbeddingVector {
            values,
            provider: DINO_TAG.into(),
        })
    }
}

/// Finds a queried object if it names the toy shape or color seen in the
/// image, or the background.
pub struct StubDetector;

impl Detector for StubDetector {
    fn detect(&self, image: &Tensor, query: &str) -> Result<Detection> {
        dims(image)?;
        let c = analyze(image);
        let ws = words(query);
        let hit = |v: &Option<String>| v.as_ref().is_some_and(|v| ws.contains(v));
        let present = hit(&c.shape) || (hit(&c.color) && c.shape.is_some()) || ws.iter().any(|w| w == "background");
        Ok(Detection {
            present,
            score: if present { 1.0 } else { 0.0 },
        })
    }
}

/// Judges an edit consistent when the image changed visibly.
pub struct StubJudge;

pub const JUDGE_MIN_CHANGE: f64 = 0.02;

impl VisionLanguageJudge for StubJudge {
    fn judge(&self, before: &Tensor, after: &Tensor, _instruction: &str) -> Result<VlmVerdict> {
        let d = l1(before, after)?;
        Ok(VlmVerdict {
            consistent: d > JUDGE_MIN_CHANGE,
            score: (d * 10.0).min(1.0),
        })
    }
}

/// Every operation is a flat color fill through the mask (second input,
/// all ones when absent). The color comes from `params.color` as an RGB
/// triple, else the first palette word in `params.prompt`, else a palette
/// color picked by hashing the operation name and prompt.
pub struct FillImageOp;

impl FillImageOp {
    pub fn fill_color(op: &str, params: &Value) -> [f64; 3] {
        if let Some(arr) = params.get("color").and_then(Value::as_array) {
            let v: Vec<f64> = arr.iter().filter_map(Value::as_f64).collect();
            if v.len() == 3 {
                return [v[0], v[1], v[2]];
            }
        }
        let prompt = params.get("prompt").and_then(Value::as_str).unwrap_or("");
        if let Some(c) = words(prompt).iter().find_map(|w| color_rgb(w)) {
            return c;
        }
        let h = hash64(&[op.as_bytes(), prompt.as_bytes()]);
        PALETTE[(h % PALETTE.len() as u64) as usize].1
    }
}

impl ImageOp for FillImageOp {
    fn apply(&self, op: &str, inputs: &[Tensor], params: &Value) -> Result<Tensor> {
        let base = inputs
            .first()
            .ok_or_else(|| contract_err!("image operation {op:?} needs an input image"))?;
        let (h, w) = dims(base)?;
        let mask = match inputs.get(1) {
            Some(m) if m.shape() == [h, w] => m.clone(),
            Some(m) => return Err(crate::error::shape_err!("mask shape {:?} does not match image {h}x{w}", m.shape())),
            None => Tensor::filled(&[h, w], 1.0),
        };
        let color = Self::fill_color(op, params);
        let mut out = base.clone();
        for y in 0..h {
            for x in 0..w {
                let m = mask.data()[y * w + x].clamp(0.0, 1.0);
                if m > 0.0 {
                    let p = pixel(base, y, x);
                    set_pixel(&mut out, y, x, std::array::from_fn(|c| m * color[c] + (1.0 - m) * p[c]));
                }
            }
        }
        Ok(out)
    }
}

/// Whether the judge applies to a task: edits of the whole image.
pub fn judge_applies(task: EditTaskType) -> bool {
    task.category() == TaskCategory::Global
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruct::prompt::{assemble_prompt, InContextPool};
    use crate::instruct::validate::VerbConstraints;
    use crate::rng::seeded;
    use crate::toy::Scene;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    }

    #[test]
    fn caption_and_rendering_embed_identically() {
        let mut rng = seeded(4);
        for _ in 0..10 {
            let s = Scene::centered(&mut rng);
            let t = ConceptEmbedder.embed_text(&s.caption()).unwrap();
            let i = ConceptEmbedder.embed_image(&s.render(16, 16)).unwrap();
            assert_eq!(t, i, "{}", s.caption());
        }
    }

    #[test]
    fn unrelated_images_are_dissimilar() {
        let a = Scene { shape: "square".into(), color: "red".into(), background: "blue".into(), cx: 0.5, cy: 0.5, size: 0.5 };
        let b = Scene { shape: "circle".into(), color: "green".into(), background: "white".into(), ..a.clone() };
        let ea = ConceptEmbedder.embed_image(&a.render(16, 16)).unwrap();
        let eb = ConceptEmbedder.embed_image(&b.render(16, 16)).unwrap();
        assert!(cosine(&ea.values, &eb.values) < 0.5);
    }

    #[test]
    fn generation_stub_is_deterministic_and_task_aware() {
        let pool = InContextPool::seeded();
        let c = VerbConstraints::default();
        let prompt = assemble_prompt(ColorAlter, "a red square on a blue background", &pool, &c, &mut seeded(0)).unwrap();
        let req = GenerateRequest { prompt, max_tokens: 100, temperature: 0.7, seed: 11 };
        let a = StubTextGenerator.generate(&req).unwrap();
        assert_eq!(a, StubTextGenerator.generate(&req).unwrap());
        let unknown = GenerateRequest { prompt: "hello".into(), ..req };
        assert!(matches!(StubTextGenerator.generate(&unknown), Err(Error::Provider(_))));
    }

    #[test]
    fn fill_respects_mask() {
        let img = Tensor::zeros(&[2, 2, 3]);
        let mask = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let out = FillImageOp.apply("inpaint", &[img, mask], &json!({ "color": [1.0, 0.5, 0.0] })).unwrap();
        assert_eq!(pixel(&out, 0, 0), [1.0, 0.5, 0.0]);
        assert_eq!(pixel(&out, 1, 1), [0.0; 3]);
    }

    #[test]
    fn subject_extraction() {
        assert_eq!(caption_subject("a red square on a blue background"), "square");
        assert_eq!(caption_subject("a small airplane sits on concrete"), "airplane");
        assert_eq!(caption_subject("Beautiful cat with mojito"), "cat");
    }
}
