//! Edited-image synthesis for generated instruction records.
//!
//! Each family composes the mask algebra with calls to the pluggable
//! [`ImageOp`] backend. Objects are grounded by [`segment_foreground`].

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{contract_err, Result};
use crate::image::{dims, pixel, set_pixel};
use crate::instruct::EditRecord;
use crate::providers::ImageOp;
use crate::task::EditTaskType;
use crate::tensor::Tensor;
use crate::text::words;
use crate::toy::{analyze, color_rgb, PALETTE};

use super::dispatch::{dispatch, PipelineId};
use super::ops::{
    background_mask, border_color, crop_paste, dilate, feather, merge, normalized_attention_difference,
    outpaint_mask, segment_foreground, BBox, Placement, RasterMask,
};

/// Mask smoothing at a reference resolution, scaled with the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskParams {
    pub radius_px: f64,
    pub sigma_px: f64,
    pub reference_size: f64,
    /// Mask opacity of whole-image tone and style edits.
    pub global_strength: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            radius_px: 8.0,
            sigma_px: 4.0,
            reference_size: 256.0,
            global_strength: 0.35,
        }
    }
}

impl MaskParams {
    /// `(radius, sigma)` for an image of the given size.
    pub fn scaled(&self, h: usize, w: usize) -> (usize, f64) {
        let s = h.min(w) as f64 / self.reference_size;
        ((self.radius_px * s).round() as usize, self.sigma_px * s)
    }
}

/// Result of running a record through its pipeline.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub pipeline: PipelineId,
    /// The original image of the pair; differs from the input only for
    /// outpainting, which is built in reverse.
    pub source: Tensor,
    pub edited: Tensor,
    pub mask: Option<RasterMask>,
    pub visual: Option<Tensor>,
    pub flags: Vec<String>,
}

const CAPTION_STOPWORDS: [&str; 8] = ["a", "an", "the", "on", "of", "in", "with", "and"];

/// Per-token attention stand-in on `image`: color words attend to pixels
/// of that palette color, the detected shape word to the foreground,
/// "background" to the rest. Other tokens attend nowhere.
fn token_map(image: &Tensor, fg: &RasterMask, shape: Option<&str>, token: &str) -> Vec<f64> {
    let (h, w) = (fg.height(), fg.width());
    if let Some(rgb) = color_rgb(token) {
        return (0..h * w)
            .map(|i| {
                let p = pixel(image, i / w, i % w);
                if crate::toy::nearest_color(p) == token || p == rgb {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
    }
    if Some(token) == shape {
        return fg.values().to_vec();
    }
    if token == "background" {
        return fg.complement().values().to_vec();
    }
    vec![0.0; h * w]
}

/// Attention stacks for the input and output captions over the union of
/// their content tokens; a token absent from a caption contributes zeros.
pub fn caption_attention(image: &Tensor, input: &str, output: &str) -> Result<(Tensor, Tensor)> {
    let (h, w) = dims(image)?;
    let fg = segment_foreground(image)?;
    let shape = analyze(image).shape;
    let content = |c: &str| -> Vec<String> {
        words(c)
            .into_iter()
            .filter(|t| !CAPTION_STOPWORDS.contains(&t.as_str()))
            .collect()
    };
    let (ti, to) = (content(input), content(output));
    let mut union: Vec<String> = Vec::new();
    for t in ti.iter().chain(&to) {
        if !union.contains(t) {
            union.push(t.clone());
        }
    }
    if union.is_empty() {
        return Err(contract_err!("captions carry no content tokens"));
    }
    let (mut a_in, mut a_out) = (Vec::new(), Vec::new());
    for t in &union {
        let m = token_map(image, &fg, shape.as_deref(), t);
        let zero = vec![0.0; h * w];
        a_in.extend(if ti.contains(t) { &m } else { &zero });
        a_out.extend(if to.contains(t) { &m } else { &zero });
    }
    let k = union.len();
    Ok((Tensor::new(&[k, h, w], a_in)?, Tensor::new(&[k, h, w], a_out)?))
}

fn mean_color(img: &Tensor, mask: Option<&RasterMask>) -> Result<[f64; 3]> {
    let (h, w) = dims(img)?;
    let (mut acc, mut n) = ([0.0; 3], 0.0);
    for y in 0..h {
        for x in 0..w {
            let m = mask.map_or(1.0, |m| m.get(y, x));
            let p = pixel(img, y, x);
            (0..3).for_each(|c| acc[c] += m * p[c]);
            n += m;
        }
    }
    if n == 0.0 {
        return Ok([0.5; 3]);
    }
    Ok(acc.map(|v| v / n))
}

/// Palette color chosen by hashing a key, skipping `avoid`.
fn keyed_color(key: &str, avoid: &[&str]) -> [f64; 3] {
    let h = crate::rng::derive_seed(0, key);
    let n = PALETTE.len();
    (0..n)
        .map(|i| PALETTE[(h as usize + i) % n])
        .find(|(name, _)| !avoid.contains(name))
        .map(|(_, c)| c)
        .unwrap_or([0.5; 3])
}

fn with_mask(m: &RasterMask) -> Tensor {
    m.to_tensor()
}

/// Runs the record's pipeline family on `original`.
pub fn synthesize(record: &EditRecord, original: &Tensor, op: &dyn ImageOp, params: &MaskParams) -> Result<Synthesis> {
    let (h, w) = dims(original)?;
    let (radius, sigma) = params.scaled(h, w);
    let pipeline = dispatch(record.edit_type);
    let fg = segment_foreground(original)?;
    let bg_name = border_color(original)?;
    let bg_rgb = color_rgb(bg_name).unwrap_or([0.5; 3]);
    let mut flags = Vec::new();
    let need_object = || -> Result<BBox> {
        fg.bbox()
            .ok_or_else(|| contract_err!("no foreground object found for {:?}", record.edit_type.name()))
    };
    let soft = |m: &RasterMask| feather(&dilate(m, radius), sigma);
    // background with the object inpainted away
    let cleared = |m: &RasterMask| -> Result<Tensor> {
        let mm = soft(m);
        let filled = op.apply("inpaint", &[original.clone(), with_mask(&mm)], &json!({"prompt": "", "color": bg_rgb}))?;
        merge(original, &filled, &mm)
    };
    let edit_in = |name: &str, m: &RasterMask, p: serde_json::Value| -> Result<Tensor> {
        let filled = op.apply(name, &[original.clone(), with_mask(m)], &p)?;
        merge(original, &filled, m)
    };

    let mut source = original.clone();
    let mut mask = None;
    let mut visual = None;
    use EditTaskType::*;
    let edited = match record.edit_type {
        Remove | Counting => {
            need_object()?;
            mask = Some(soft(&fg));
            cleared(&fg)?
        }
        Replace => {
            need_object()?;
            let m = soft(&fg);
            mask = Some(m.clone());
            edit_in("inpaint", &m, json!({"prompt": record.output}))?
        }
        Add => {
            let m = add_region(&fg, h, w);
            mask = Some(m.clone());
            let color = keyed_color(&record.edited_object, &[bg_name]);
            let prompt = format!("{} {}", record.edited_object, record.edit);
            edit_in("inpaint", &m, json!({"prompt": prompt, "color": prompt_color(&prompt).unwrap_or(color)}))?
        }
        BackgroundChange => {
            let m = soft(&background_mask(std::slice::from_ref(&fg))?);
            mask = Some(m.clone());
            edit_in("inpaint", &m, json!({"prompt": record.edit}))?
        }
        ToneTransfer | StyleChange => {
            let m = RasterMask::filled(h, w, params.global_strength);
            mask = Some(m.clone());
            edit_in("instruct_edit", &m, json!({"prompt": record.edit}))?
        }
        ColorAlter | AppearanceAlter | TextualChange => {
            let (a_in, a_out) = caption_attention(original, &record.input, &record.output)?;
            let nad = normalized_attention_difference(&a_in, &a_out)?;
            let m = if nad.constant {
                flags.push("attention_difference_constant".to_string());
                need_object()?;
                fg.clone()
            } else {
                nad.mask
            };
            let m = feather(&m, sigma);
            mask = Some(m.clone());
            edit_in("instruct_edit", &m, json!({"prompt": record.edit}))?
        }
        ActionChange => {
            need_object()?;
            let m = soft(&fg);
            mask = Some(m.clone());
            edit_in("action_edit", &m, json!({"prompt": record.edit}))?
        }
        Movement => {
            let b = need_object()?;
            let (dx, dy) = movement_offset(&record.edit, b, h, w)?;
            mask = Some(fg.clone());
            crop_paste(original, b, &cleared(&fg)?, Placement::Offset(dx, dy))?
        }
        Resize => {
            let b = need_object()?;
            let s = resize_scale(&record.edit, b, h, w);
            mask = Some(fg.clone());
            crop_paste(original, b, &cleared(&fg)?, Placement::Scale(s))?
        }
        Outpaint => {
            let b = need_object()?;
            let m = outpaint_mask(b, h, w)?;
            source = merge(original, &Tensor::filled(&[h, w, 3], 1.0), &m)?;
            mask = Some(m);
            original.clone()
        }
        RotationChange => {
            if h != w {
                return Err(contract_err!("rotation stand-in needs a square image, got {h}x{w}"));
            }
            let ccw = words(&record.edit).iter().any(|t| t == "counterclockwise" || t == "anticlockwise");
            rotate_quarter(original, ccw)
        }
        ImplicitChange => {
            need_object()?;
            let m = soft(&fg);
            mask = Some(m.clone());
            // the output caption is the explicit form of the instruction
            edit_in("instruct_edit", &m, json!({"prompt": record.output, "instruction": record.edit}))?
        }
        RelationChange => {
            let b = need_object()?;
            let dx = (w - b.x1) as isize - b.x0 as isize;
            if dx == 0 {
                flags.push("relation_symmetric".to_string());
            }
            mask = Some(fg.clone());
            crop_paste(original, b, &cleared(&fg)?, Placement::Offset(dx, 0))?
        }
        ImageReference | MaterialTransfer | MaterialChange => {
            let b = need_object()?;
            let m = soft(&fg);
            mask = Some(m.clone());
            let fg_name = crate::toy::nearest_color(mean_color(original, Some(&fg))?);
            let reference = if record.edit_type == ImageReference {
                reference_object(original, b, keyed_color(&record.edited_object, &[bg_name, fg_name]))?
            } else {
                texture(h, w, &record.edit, &[bg_name, fg_name])
            };
            let color = mean_color(&reference, None)?;
            let name = if record.edit_type == ImageReference { "customize" } else { "material_fusion" };
            let out = {
                let filled = op.apply(name, &[original.clone(), with_mask(&m), reference.clone()], &json!({"color": color, "prompt": record.edit}))?;
                merge(original, &filled, &m)?
            };
            if record.edit_type.is_visual() {
                visual = Some(reference);
            }
            out
        }
        VisualSketch | VisualScribble | VisualSegmentation | VisualDepth | VisualLayout => {
            need_object()?;
            let m = soft(&fg);
            let out = edit_in("inpaint", &m, json!({"prompt": record.output}))?;
            let new_fg = segment_foreground(&out)?;
            visual = Some(condition_image(record.edit_type, &new_fg)?);
            mask = Some(m);
            out
        }
    };
    Ok(Synthesis {
        pipeline,
        source,
        edited,
        mask,
        visual,
        flags,
    })
}

fn prompt_color(prompt: &str) -> Option<[f64; 3]> {
    words(prompt).iter().find_map(|t| color_rgb(t))
}

/// A square patch in the image corner that overlaps the foreground least.
fn add_region(fg: &RasterMask, h: usize, w: usize) -> RasterMask {
    let side = (h.min(w) / 4).max(1);
    let margin = h.min(w) / 16;
    let corners = [
        (margin, margin),
        (margin, w - side - margin),
        (h - side - margin, margin),
        (h - side - margin, w - side - margin),
    ];
    let overlap = |(y0, x0): (usize, usize)| -> f64 {
        (y0..y0 + side)
            .flat_map(|y| (x0..x0 + side).map(move |x| (y, x)))
            .map(|(y, x)| fg.get(y, x))
            .sum()
    };
    let (y0, x0) = corners
        .into_iter()
        .min_by(|a, b| overlap(*a).total_cmp(&overlap(*b)))
        .expect("four corners");
    let values = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            if (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    RasterMask::new(h, w, values).expect("sized")
}

/// Shift named by the instruction's direction words, a quarter of the
/// canvas or as far as the canvas allows. Defaults to the right.
fn movement_offset(edit: &str, b: BBox, h: usize, w: usize) -> Result<(isize, isize)> {
    let ws = words(edit);
    let has = |t: &str| ws.iter().any(|x| x == t);
    let (ux, uy): (isize, isize) = if has("left") {
        (-1, 0)
    } else if has("up") || has("top") || has("upward") || has("upwards") {
        (0, -1)
    } else if has("down") || has("bottom") || has("downward") || has("downwards") {
        (0, 1)
    } else {
        (1, 0)
    };
    let room = match (ux, uy) {
        (1, _) => w - b.x1,
        (-1, _) => b.x0,
        (_, -1) => b.y0,
        _ => h - b.y1,
    };
    let step = (if ux != 0 { w } else { h } / 4).min(room);
    if step == 0 {
        return Err(contract_err!("object at {b:?} has no room to move in a {h}x{w} canvas"));
    }
    Ok((ux * step as isize, uy * step as isize))
}

/// 1.5x when the instruction asks for larger, 0.6x otherwise, capped so
/// the scaled box stays on the canvas.
fn resize_scale(edit: &str, b: BBox, h: usize, w: usize) -> f64 {
    let ws = words(edit);
    let grow = ws
        .iter()
        .any(|t| ["bigger", "larger", "enlarge", "increase", "grow", "expand"].contains(&t.as_str()));
    if !grow {
        return 0.6;
    }
    let cx = (b.x0 + b.x1) as f64 / 2.0;
    let cy = (b.y0 + b.y1) as f64 / 2.0;
    let fit_x = 2.0 * cx.min(w as f64 - cx) / b.width() as f64;
    let fit_y = 2.0 * cy.min(h as f64 - cy) / b.height() as f64;
    let cap = (fit_x.min(fit_y) * 0.98).max(1.0);
    1.5f64.min(cap)
}

fn rotate_quarter(img: &Tensor, counterclockwise: bool) -> Tensor {
    let n = img.shape()[0];
    let mut out = img.clone();
    for y in 0..n {
        for x in 0..n {
            let (sy, sx) = if counterclockwise { (x, n - 1 - y) } else { (n - 1 - x, y) };
            set_pixel(&mut out, y, x, pixel(img, sy, sx));
        }
    }
    out
}

/// The object's box content recolored onto a white canvas.
fn reference_object(original: &Tensor, b: BBox, color: [f64; 3]) -> Result<Tensor> {
    let (h, w) = dims(original)?;
    let fg = segment_foreground(original)?;
    let mut out = Tensor::filled(&[h, w, 3], 1.0);
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            if fg.get(y, x) >= 0.5 {
                set_pixel(&mut out, y, x, color);
            }
        }
    }
    Ok(out)
}

/// Two-color checker texture standing in for a material swatch.
fn texture(h: usize, w: usize, key: &str, avoid: &[&str]) -> Tensor {
    let a = keyed_color(&format!("{key}/a"), avoid);
    let b = keyed_color(&format!("{key}/b"), avoid);
    let cell = (h.min(w) / 8).max(1);
    let mut out = Tensor::zeros(&[h, w, 3]);
    for y in 0..h {
        for x in 0..w {
            set_pixel(&mut out, y, x, if (y / cell + x / cell).is_multiple_of(2) { a } else { b });
        }
    }
    out
}

fn erode(m: &RasterMask) -> RasterMask {
    dilate(&m.binarized().complement(), 1).complement()
}

/// Condition image of the given visual type for a foreground mask.
pub fn condition_image(task: EditTaskType, fg: &RasterMask) -> Result<Tensor> {
    let (h, w) = (fg.height(), fg.width());
    let edges = |m: &RasterMask| -> Vec<f64> {
        let e = erode(m);
        m.binarized().values().iter().zip(e.values()).map(|(a, b)| a - b).collect()
    };
    let gray: Vec<f64> = match task {
        EditTaskType::VisualSketch => edges(fg),
        EditTaskType::VisualScribble => {
            let e = RasterMask::new(h, w, edges(fg))?;
            dilate(&e, 1).values().to_vec()
        }
        EditTaskType::VisualSegmentation => fg.binarized().values().to_vec(),
        EditTaskType::VisualDepth => (0..h * w)
            .map(|i| {
                let ramp = 0.2 * (i / w) as f64 / h.max(1) as f64;
                fg.binarized().values()[i] * 0.6 + ramp
            })
            .collect(),
        EditTaskType::VisualLayout => {
            let b = fg
                .bbox()
                .ok_or_else(|| contract_err!("layout condition needs a foreground object"))?;
            (0..h * w)
                .map(|i| {
                    let (y, x) = (i / w, i % w);
                    let inside = (b.y0..b.y1).contains(&y) && (b.x0..b.x1).contains(&x);
                    let border = y == b.y0 || y + 1 == b.y1 || x == b.x0 || x + 1 == b.x1;
                    if inside && border {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        t => return Err(contract_err!("{:?} has no condition image", t.name())),
    };
    let data = gray.iter().flat_map(|&v| [v, v, v]).collect();
    Tensor::new(&[h, w, 3], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruct::ResponseFields;
    use crate::providers::stub::FillImageOp;
    use crate::toy::Scene;

    fn scene() -> Scene {
        Scene {
            shape: "square".into(),
            color: "red".into(),
            background: "blue".into(),
            cx: 0.5,
            cy: 0.5,
            size: 0.5,
        }
    }

    fn record(task: EditTaskType, edit: &str, output: &str) -> EditRecord {
        EditRecord::new(
            task,
            scene().caption(),
            ResponseFields {
                edit: edit.into(),
                edited_object: "square".into(),
                output: output.into(),
            },
        )
    }

    #[test]
    fn color_alter_recolors_only_the_object() {
        let img = scene().render(32, 32);
        let r = record(EditTaskType::ColorAlter, "make the square green", "a green square on a blue background");
        let s = synthesize(&r, &img, &FillImageOp, &MaskParams::default()).unwrap();
        assert!(s.flags.is_empty());
        let got = analyze(&s.edited);
        assert_eq!(got.color.as_deref(), Some("green"));
        assert_eq!(got.background.as_deref(), Some("blue"));
        assert_eq!(pixel(&s.edited, 0, 0), pixel(&img, 0, 0));
    }

    #[test]
    fn remove_leaves_plain_background() {
        let img = scene().render(32, 32);
        let r = record(EditTaskType::Remove, "remove the square", "a plain blue background");
        let s = synthesize(&r, &img, &FillImageOp, &MaskParams::default()).unwrap();
        assert_eq!(analyze(&s.edited).shape, None);
    }

    #[test]
    fn movement_shifts_the_box() {
        let img = scene().render(32, 32);
        let r = record(EditTaskType::Movement, "move the square to the left", "a red square on a blue background");
        let s = synthesize(&r, &img, &FillImageOp, &MaskParams::default()).unwrap();
        let before = segment_foreground(&img).unwrap().bbox().unwrap();
        let after = segment_foreground(&s.edited).unwrap().bbox().unwrap();
        assert_eq!(after.x0 + 8, before.x0);
        assert_eq!(after.y0, before.y0);
    }

    #[test]
    fn every_task_synthesizes_on_a_toy_scene() {
        let img = scene().render(32, 32);
        for &t in EditTaskType::ALL.iter() {
            let r = record(t, "change the square", "a green square on a blue background");
            let s = synthesize(&r, &img, &FillImageOp, &MaskParams::default())
                .unwrap_or_else(|e| panic!("{t:?}: {e}"));
            assert_eq!(s.visual.is_some(), t.is_visual(), "{t:?}");
            assert_eq!(s.edited.shape(), img.shape());
        }
    }
}
