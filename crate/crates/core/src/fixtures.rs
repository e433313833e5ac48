//! Bundled toy training setups with their pinned seeds and budgets.

use serde::Serialize;

use crate::attention::RoutingMode;
use crate::error::Result;
use crate::model::{train_stage1, train_stage2, AnySdModel, ModelConfig, TrainConfig, TrainReport};
use crate::param::OptimizerKind;
use crate::rng::seeded;
use crate::toy::{background_fixture, recolor_fixture, EditExample};

pub const OVERFIT_PAIRS: usize = 32;
pub const OVERFIT_STEPS: usize = 2000;
pub const OVERFIT_LEARNING_RATE: f64 = 1e-4;

/// The 32-pair 16x16 recolor set.
pub fn overfit_data() -> Vec<EditExample> {
    recolor_fixture(&mut seeded(7), OVERFIT_PAIRS, 16, 16)
}

pub fn overfit_config() -> TrainConfig {
    TrainConfig {
        steps: OVERFIT_STEPS,
        learning_rate: OVERFIT_LEARNING_RATE,
        optimizer: OptimizerKind::adam(),
        ..TrainConfig::default()
    }
}

/// Trains a fresh default model on the recolor set.
pub fn run_overfit() -> Result<(AnySdModel, TrainReport)> {
    let mut model = AnySdModel::new(ModelConfig::default())?;
    let report = train_stage1(&mut model, &overfit_data(), &overfit_config())?;
    Ok((model, report))
}

/// Learning rate for the model the edit examples run against. The overfit
/// budget above leaves a model whose samples are still far from the
/// targets.
pub const EDIT_MODEL_LEARNING_RATE: f64 = 1e-3;

/// Trains a fresh default model on the recolor set at
/// [`EDIT_MODEL_LEARNING_RATE`].
pub fn run_edit_model() -> Result<(AnySdModel, TrainReport)> {
    let mut model = AnySdModel::new(ModelConfig::default())?;
    let cfg = TrainConfig {
        learning_rate: EDIT_MODEL_LEARNING_RATE,
        ..overfit_config()
    };
    let report = train_stage1(&mut model, &overfit_data(), &cfg)?;
    Ok((model, report))
}

/// Sixteen recolor pairs followed by sixteen background fills.
pub fn two_task_data() -> Vec<EditExample> {
    let mut rng = seeded(11);
    let mut data = recolor_fixture(&mut rng, 16, 16, 16);
    data.extend(background_fixture(&mut rng, 16, 16, 16));
    data
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRun {
    pub mode: RoutingMode,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    /// Largest absolute change of any router weight.
    pub router_delta: f64,
}

/// Stage 1 on the recolor half only, then stage 2 on both tasks once per
/// routing mode, each from the same stage-1 weights.
pub fn run_routing_ablation(modes: &[RoutingMode]) -> Result<Vec<AblationRun>> {
    let data = two_task_data();
    let mut base = AnySdModel::new(ModelConfig::default())?;
    let stage1 = TrainConfig {
        steps: 1000,
        optimizer: OptimizerKind::adam(),
        ..TrainConfig::default()
    };
    train_stage1(&mut base, &data[..16], &stage1)?;
    let stage2 = TrainConfig {
        steps: 1000,
        seed: 5,
        optimizer: OptimizerKind::adam(),
        ..TrainConfig::default()
    };
    modes
        .iter()
        .map(|&mode| {
            let mut m = base.clone();
            m.set_routing_mode(mode);
            let before = m.param("router.proj")?.clone();
            let r = train_stage2(&mut m, &data, &stage2)?;
            Ok(AblationRun {
                mode,
                initial_eval_loss: r.initial_eval_loss,
                final_eval_loss: r.final_eval_loss,
                router_delta: m.param("router.proj")?.max_abs_diff(&before),
            })
        })
        .collect()
}
