//! End-to-end inference: instruction in, edited image out.

use serde::Serialize;

use crate::diffusion::{sample, ConditionSet, GuidanceScales, SamplerOptions, VisualCondition};
use crate::error::Result;
use crate::providers::TextGenerator;
use crate::task::EditTaskType;
use crate::tensor::Tensor;
use crate::text::tokenize;

use super::denoiser::{AnySdModel, Stage};
use super::predict::{predict_edit_type, Prediction};

#[derive(Clone, Debug, PartialEq)]
#[derive(Default)]
pub struct EditOptions {
    pub scales: GuidanceScales,
    pub seed: u64,
    /// Skips prediction and uses this type.
    pub task: Option<EditTaskType>,
}


#[derive(Clone, Debug, Serialize)]
pub struct EditOutcome {
    #[serde(skip)]
    pub image: Tensor,
    pub prediction: Prediction,
    pub evaluations_per_step: usize,
    pub warnings: Vec<String>,
}

/// Conditions for editing `original` with `instruction`. The visual slot
/// is filled only for models that finished stage 2; a missing reference
/// leaves the projected tokens at zero while the task token still routes.
pub fn edit_conditions(
    model: &AnySdModel,
    original: &Tensor,
    instruction: &str,
    task: EditTaskType,
    visual_ref: Option<&Tensor>,
) -> Result<ConditionSet> {
    let visual = if model.completed_stages.contains(&Stage::Stage2) {
        Some(VisualCondition {
            task,
            features: visual_ref.map(|r| model.encode_reference(r)).transpose()?,
        })
    } else {
        None
    };
    Ok(ConditionSet {
        image: Some(original.clone()),
        text: Some(tokenize(instruction)),
        visual,
    })
}

/// Predicts the edit type, builds the conditions and samples with guidance,
/// clamping the clean-image estimate to `[0, 1]`.
pub fn edit_image(
    model: &AnySdModel,
    original: &Tensor,
    instruction: &str,
    visual_ref: Option<&Tensor>,
    textgen: Option<&dyn TextGenerator>,
    opts: &EditOptions,
) -> Result<EditOutcome> {
    let mut prediction = predict_edit_type(instruction, textgen)?;
    if let Some(t) = opts.task {
        prediction.task = t;
    }
    let mut warnings: Vec<String> = prediction.warning.iter().cloned().collect();
    let task = prediction.task;
    if visual_ref.is_some() && !task.is_visual() {
        let w = format!("a visual reference was given for the non-visual task {task}; using it anyway");
        log::warn!("{w}");
        warnings.push(w);
    }
    if visual_ref.is_some() && !model.completed_stages.contains(&Stage::Stage2) {
        warnings.push("model has no trained visual branch; the reference is ignored".into());
    }
    let conds = edit_conditions(model, original, instruction, task, visual_ref)?;
    let report = sample(
        model,
        original.shape(),
        &conds,
        &opts.scales,
        &model.schedule,
        &SamplerOptions {
            seed: opts.seed,
            clip_x0: Some((0.0, 1.0)),
        },
    )?;
    Ok(EditOutcome {
        image: report.sample.map(|v| v.clamp(0.0, 1.0)),
        prediction,
        evaluations_per_step: report.evaluations_per_step,
        warnings,
    })
}
