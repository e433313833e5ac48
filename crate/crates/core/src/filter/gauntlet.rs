//! Pre-filter and the post-filter gauntlet producing one report per record.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{
    clip_image_similarity, clip_text_alignment, directional_similarity, l1_distance, Similarity,
};
use crate::error::{config_err, Error, Result};
use crate::instruct::{validate_instruction, EditRecord, VerbConstraints};
use crate::providers::{Detector, Embedder, VisionLanguageJudge};
use crate::task::EditTaskType::{self, *};
use crate::task::TaskCategory;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterThresholds {
    pub min_clip_out: f64,
    pub min_clip_im: f64,
    pub max_l1: f64,
    pub min_dino: f64,
    pub min_directional: f64,
    /// On the aesthetic provider's own scale.
    pub min_aesthetic: f64,
    pub min_resolution: u32,
    pub aspect_ratio_band: [f64; 2],
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            min_clip_out: 0.20,
            min_clip_im: 0.70,
            max_l1: 0.30,
            min_dino: 0.50,
            min_directional: 0.05,
            min_aesthetic: 0.0,
            min_resolution: 256,
            aspect_ratio_band: [0.5, 2.0],
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_clip_out", self.min_clip_out),
            ("min_clip_im", self.min_clip_im),
            ("min_dino", self.min_dino),
            ("min_directional", self.min_directional),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(config_err!("{name} = {v} is outside [-1, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.max_l1) {
            return Err(config_err!("max_l1 = {} is outside [0, 1]", self.max_l1));
        }
        let [lo, hi] = self.aspect_ratio_band;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(config_err!("aspect ratio band [{lo}, {hi}] is not a positive interval"));
        }
        if !self.min_aesthetic.is_finite() {
            return Err(config_err!("min_aesthetic must be finite"));
        }
        Ok(())
    }
}

/// Source-image facts the pre-filter needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub width: u32,
    pub height: u32,
    /// Absent when no aesthetic scorer ran; the gate is then not applied.
    pub aesthetic: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PreFilterVerdict {
    pub pass: bool,
    pub reasons: Vec<String>,
}

pub fn pre_filter(
    record: &EditRecord,
    meta: &ImageMeta,
    thresholds: &FilterThresholds,
    constraints: &VerbConstraints,
) -> PreFilterVerdict {
    let mut reasons: Vec<String> = validate_instruction(record, constraints)
        .iter()
        .map(|v| format!("instruction_{}", v.code()))
        .collect();
    if meta.width.min(meta.height) < thresholds.min_resolution {
        reasons.push("resolution".into());
    }
    let [lo, hi] = thresholds.aspect_ratio_band;
    let ratio = meta.width as f64 / meta.height.max(1) as f64;
    if meta.width == 0 || meta.height == 0 || ratio < lo || ratio > hi {
        reasons.push("aspect_ratio".into());
    }
    if meta.aesthetic.is_some_and(|a| a < thresholds.min_aesthetic) {
        reasons.push("aesthetic".into());
    }
    PreFilterVerdict {
        pass: reasons.is_empty(),
        reasons,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreFilterStatus {
    Passed,
    Failed,
    Skipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// A provider failed; no verdict is given.
    Incomplete,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_im: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_out: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dino: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directional: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Gate {
    pub name: &'static str,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterReport {
    pub index: usize,
    #[serde(rename = "edit type")]
    pub edit_type: EditTaskType,
    pub edit: String,
    #[serde(rename = "image file")]
    pub image_file: String,
    #[serde(rename = "edited file")]
    pub edited_file: String,
    pub prefilter: PreFilterStatus,
    pub metrics: Metrics,
    pub flags: Vec<String>,
    pub gates: Vec<Gate>,
    pub verdict: Verdict,
    pub reasons: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Providers the gauntlet consults. The detector and judge are optional.
pub struct GauntletProviders<'a> {
    pub clip: &'a dyn Embedder,
    pub dino: &'a dyn Embedder,
    pub detector: Option<&'a dyn Detector>,
    pub judge: Option<&'a dyn VisionLanguageJudge>,
}

/// Expected detector outcome on the edited image for local edits.
fn detector_expectation(task: EditTaskType) -> Option<bool> {
    match task {
        Remove | Replace => Some(false),
        _ if task.category() == TaskCategory::Local => Some(true),
        _ => None,
    }
}

fn report_base(index: usize, record: &EditRecord, prefilter: PreFilterStatus) -> FilterReport {
    FilterReport {
        index,
        edit_type: record.edit_type,
        edit: record.edit.clone(),
        image_file: record.image_file.clone(),
        edited_file: record.edited_file.clone(),
        prefilter,
        metrics: Metrics::default(),
        flags: Vec::new(),
        gates: Vec::new(),
        verdict: Verdict::Fail,
        reasons: Vec::new(),
        error: None,
    }
}

/// Report for a record stopped by the pre-filter.
pub fn prefilter_report(index: usize, record: &EditRecord, verdict: &PreFilterVerdict) -> FilterReport {
    let mut r = report_base(index, record, PreFilterStatus::Failed);
    r.reasons = verdict.reasons.iter().map(|c| format!("prefilter_{c}")).collect();
    r
}

struct Run<'r> {
    report: &'r mut FilterReport,
}

impl Run<'_> {
    fn gate(&mut self, name: &'static str, pass: bool, reason: &str) {
        self.report.gates.push(Gate { name, pass });
        if !pass {
            self.report.reasons.push(reason.to_string());
        }
    }

    fn sim(&mut self, s: Similarity, flag: &str) -> f64 {
        if s.degenerate {
            self.report.flags.push(flag.to_string());
        }
        s.value
    }
}

/// Metrics, gates and verdict for one triplet. Shape and contract errors
/// propagate; provider failures yield an incomplete report.
pub fn run_gauntlet(
    index: usize,
    record: &EditRecord,
    original: &Tensor,
    edited: &Tensor,
    providers: &GauntletProviders<'_>,
    thresholds: &FilterThresholds,
    prefilter: PreFilterStatus,
) -> Result<FilterReport> {
    let mut report = report_base(index, record, prefilter);
    match gauntlet_inner(&mut report, record, original, edited, providers, thresholds) {
        Ok(()) => {
            report.verdict = if report.gates.iter().all(|g| g.pass) {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            Ok(report)
        }
        Err(Error::Provider(msg)) => {
            report.verdict = Verdict::Incomplete;
            report.reasons = vec!["provider_failure".into()];
            report.error = Some(msg);
            Ok(report)
        }
        Err(e) => Err(e),
    }
}

fn gauntlet_inner(
    report: &mut FilterReport,
    record: &EditRecord,
    original: &Tensor,
    edited: &Tensor,
    p: &GauntletProviders<'_>,
    th: &FilterThresholds,
) -> Result<()> {
    let e_io = p.clip.embed_image(original)?;
    let e_ie = p.clip.embed_image(edited)?;
    let e_to = p.clip.embed_text(&record.input)?;
    let e_te = p.clip.embed_text(&record.output)?;
    let d_io = p.dino.embed_image(original)?;
    let d_ie = p.dino.embed_image(edited)?;

    let clip_im = clip_image_similarity(&e_io, &e_ie)?;
    let clip_out = clip_text_alignment(&e_ie, &e_te)?;
    let l1 = l1_distance(original, edited)?;
    let dino = clip_image_similarity(&d_io, &d_ie)?;
    let directional = directional_similarity(&e_io, &e_ie, &e_to, &e_te)?;

    let mut run = Run { report };
    let clip_im = run.sim(clip_im, "clip_im_degenerate");
    let clip_out = run.sim(clip_out, "clip_out_degenerate");
    let dino = run.sim(dino, "dino_degenerate");
    let directional = run.sim(directional, "directional_degenerate");
    run.report.metrics = Metrics {
        clip_im: Some(clip_im),
        clip_out: Some(clip_out),
        l1: Some(l1),
        dino: Some(dino),
        directional: Some(directional),
    };
    run.gate("clip_im", clip_im >= th.min_clip_im, "clip_im_below_min");
    run.gate("clip_out", clip_out >= th.min_clip_out, "clip_out_below_min");
    run.gate("l1", l1 <= th.max_l1, "l1_above_max");
    run.gate("dino", dino >= th.min_dino, "dino_below_min");
    run.gate("directional", directional >= th.min_directional, "directional_below_min");

    if let (Some(det), Some(want)) = (p.detector, detector_expectation(record.edit_type)) {
        let found = det.detect(edited, &record.edited_object)?.present;
        let reason = if want { "detector_object_absent" } else { "detector_object_present" };
        run.gate("detector", found == want, reason);
    }
    if let Some(judge) = p.judge {
        if record.edit_type.category() == TaskCategory::Global {
            let v = judge.judge(original, edited, &record.edit)?;
            run.gate("vlm", v.consistent, "vlm_inconsistent");
        }
    }
    Ok(())
}

/// Counts over a batch of reports. Merging is associative and commutative.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub total: usize,
    pub pass: usize,
    pub fail: usize,
    pub incomplete: usize,
    pub reasons: BTreeMap<String, usize>,
    pub pass_by_type: BTreeMap<String, usize>,
}

impl FilterSummary {
    pub fn add(&mut self, r: &FilterReport) {
        self.total += 1;
        match r.verdict {
            Verdict::Pass => {
                self.pass += 1;
                *self.pass_by_type.entry(r.edit_type.name().to_string()).or_default() += 1;
            }
            Verdict::Fail => self.fail += 1,
            Verdict::Incomplete => self.incomplete += 1,
        }
        for reason in &r.reasons {
            *self.reasons.entry(reason.clone()).or_default() += 1;
        }
    }

    pub fn merge(mut self, other: &FilterSummary) -> FilterSummary {
        self.total += other.total;
        self.pass += other.pass;
        self.fail += other.fail;
        self.incomplete += other.incomplete;
        for (k, v) in &other.reasons {
            *self.reasons.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.pass_by_type {
            *self.pass_by_type.entry(k.clone()).or_default() += v;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruct::ResponseFields;
    use crate::providers::stub::{ConceptEmbedder, PixelEmbedder, StubDetector};
    use crate::toy::Scene;

    fn record(task: EditTaskType, input: &str, edit: &str, obj: &str, output: &str) -> EditRecord {
        EditRecord::new(task, input, ResponseFields { edit: edit.into(), edited_object: obj.into(), output: output.into() })
    }

    fn scene(color: &str) -> Scene {
        Scene { shape: "square".into(), color: color.into(), background: "blue".into(), cx: 0.5, cy: 0.5, size: 0.5 }
    }

    #[test]
    fn prefilter_cases() {
        let th = FilterThresholds::default();
        let c = VerbConstraints::default();
        let ok = record(Add, "a cat", "add a hat to the cat", "hat", "a cat with a hat");
        let meta = |w, h| ImageMeta { width: w, height: h, aesthetic: Some(6.0) };
        assert_eq!(pre_filter(&ok, &meta(32, 1024), &th, &c).reasons, ["resolution", "aspect_ratio"]);
        assert!(pre_filter(&ok, &meta(512, 512), &th, &c).pass);
        let desk = record(ActionChange, "a static desk", "change the action of the static desk", "desk", "a desk dancing");
        assert_eq!(pre_filter(&desk, &meta(512, 512), &th, &c).reasons, ["instruction_inanimate_action_target"]);
    }

    #[test]
    fn no_op_edit_fails_directional_gate() {
        let img = scene("red").render(16, 16);
        let r = record(ColorAlter, "a red square on a blue background", "make the square green", "square", "a green square on a blue background");
        let p = GauntletProviders { clip: &ConceptEmbedder, dino: &PixelEmbedder, detector: None, judge: None };
        let rep = run_gauntlet(0, &r, &img, &img, &p, &FilterThresholds::default(), PreFilterStatus::Skipped).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
        assert_eq!(rep.metrics.directional, Some(0.0));
        assert!(rep.flags.contains(&"directional_degenerate".to_string()));
        assert!(rep.reasons.contains(&"directional_below_min".to_string()));
    }

    #[test]
    fn good_recolor_passes_with_all_metrics() {
        let r = record(ColorAlter, "a red square on a blue background", "make the square green", "square", "a green square on a blue background");
        let p = GauntletProviders { clip: &ConceptEmbedder, dino: &PixelEmbedder, detector: Some(&StubDetector), judge: None };
        let th = FilterThresholds { min_clip_im: 0.3, ..Default::default() };
        let rep = run_gauntlet(0, &r, &scene("red").render(16, 16), &scene("green").render(16, 16), &p, &th, PreFilterStatus::Skipped).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{rep:?}");
        let m = &rep.metrics;
        assert!(m.clip_im.is_some() && m.clip_out == Some(1.0) && m.l1.is_some() && m.dino.is_some());
        assert!((m.directional.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detector_flags_missing_added_object() {
        let r = record(Add, "a red square on a blue background", "add a hat next to the square", "hat", "a red square on a blue background with a hat");
        let p = GauntletProviders { clip: &ConceptEmbedder, dino: &PixelEmbedder, detector: Some(&StubDetector), judge: None };
        let rep = run_gauntlet(0, &r, &scene("red").render(16, 16), &scene("green").render(16, 16), &p, &FilterThresholds::default(), PreFilterStatus::Skipped).unwrap();
        assert!(rep.reasons.contains(&"detector_object_absent".to_string()), "{rep:?}");
        assert_eq!(rep.verdict, Verdict::Fail);
    }

    #[test]
    fn thresholds_validate() {
        assert!(FilterThresholds::default().validate().is_ok());
        assert!(FilterThresholds { max_l1: 1.5, ..Default::default() }.validate().is_err());
        assert!(FilterThresholds { min_dino: -2.0, ..Default::default() }.validate().is_err());
        assert!(FilterThresholds { aspect_ratio_band: [2.0, 1.0], ..Default::default() }.validate().is_err());
    }
}
