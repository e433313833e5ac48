//! The two training stages.
//!
//! Stage 1 trains the denoiser backbone with the visual condition held null.
//! Stage 2 freezes the backbone and trains only the expert projections,
//! router, visual-prompt projector and task embeddings.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::diffusion::{condition_dropout, forward_noise, ConditionSet, DropoutProbs, VisualCondition};
use crate::error::{config_err, contract_err, Error, Result};
use crate::param::{Optimizer, OptimizerKind, ParamId, StageTag};
use crate::rng::{derive, normal_tensor, Rng};
use crate::tensor::Tensor;
use crate::text::tokenize;
use crate::toy::EditExample;

use super::denoiser::{AnySdModel, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub dropout: DropoutProbs,
    pub seed: u64,
    /// Fixed `(t, eps)` draws per example used to measure loss before and
    /// after training.
    pub eval_draws: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 1e-4,
            batch_size: 32,
            optimizer: OptimizerKind::Sgd,
            dropout: DropoutProbs::default(),
            seed: 0,
            eval_draws: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if self.eval_draws == 0 {
            return Err(config_err!("eval_draws must be at least 1"));
        }
        self.dropout.validate()?;
        Optimizer::new(self.optimizer.clone(), self.learning_rate).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    /// Minibatch loss at every step.
    pub loss_history: Vec<f64>,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
}

/// Conditions an example supplies in a given stage.
pub fn example_conditions(model: &AnySdModel, ex: &EditExample, stage: Stage) -> Result<ConditionSet> {
    let visual = match stage {
        Stage::Stage1 => None,
        Stage::Stage2 => Some(VisualCondition {
            task: ex.task,
            features: ex
                .reference
                .as_ref()
                .map(|r| model.encode_reference(r))
                .transpose()?,
        }),
    };
    Ok(ConditionSet {
        image: Some(ex.source.clone()),
        text: Some(tokenize(&ex.instruction)),
        visual,
    })
}

struct Item {
    t: usize,
    z_t: Tensor,
    eps: Tensor,
    conds: ConditionSet,
}

fn item_loss_and_grads(model: &AnySdModel, item: &Item) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
    let tape = Tape::new();
    let pred = model.forward(&tape, &item.z_t, item.t, &item.conds)?.eps;
    let loss = pred.sub(tape.constant(item.eps.clone()))?.square()?.mean()?;
    tape.backward(loss)?;
    Ok((loss.scalar_value(), tape.param_grads()))
}

fn item_loss(model: &AnySdModel, item: &Item) -> Result<f64> {
    let tape = Tape::new();
    let pred = model.forward(&tape, &item.z_t, item.t, &item.conds)?.eps;
    Ok(pred.sub(tape.constant(item.eps.clone()))?.square()?.mean()?.scalar_value())
}

/// Mean noise-prediction loss over a fixed set of draws, without dropout.
pub fn evaluation_loss(model: &AnySdModel, data: &[EditExample], stage: Stage, seed: u64, draws: usize) -> Result<f64> {
    let items = eval_items(model, data, stage, seed, draws)?;
    let losses = items
        .par_iter()
        .map(|it| item_loss(model, it))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn eval_items(model: &AnySdModel, data: &[EditExample], stage: Stage, seed: u64, draws: usize) -> Result<Vec<Item>> {
    let mut rng = derive(seed, "eval-draws");
    let steps = model.schedule.len();
    let mut items = Vec::with_capacity(data.len() * draws);
    for ex in data {
        let conds = example_conditions(model, ex, stage)?;
        for k in 0..draws {
            // spread the draws of each example across the schedule
            let lo = k * steps / draws;
            let hi = ((k + 1) * steps / draws).max(lo + 1);
            let t = rng.random_range(lo..hi);
            let eps = normal_tensor(&mut rng, ex.target.shape(), 1.0);
            let z_t = forward_noise(&ex.target, &eps, &model.schedule, t)?;
            items.push(Item {
                t,
                z_t,
                eps,
                conds: conds.clone(),
            });
        }
    }
    Ok(items)
}

/// Draws one minibatch. Examples are visited in shuffled epochs and the
/// batch's timesteps are stratified across the schedule, which keeps every
/// timestep's marginal uniform while lowering the variance of the loss.
fn draw_batch(
    model: &AnySdModel,
    data: &[EditExample],
    conds: &[ConditionSet],
    cfg: &TrainConfig,
    order: &mut Vec<usize>,
    rng: &mut Rng,
) -> Result<Vec<Item>> {
    let steps = model.schedule.len();
    let b = cfg.batch_size;
    let offset: f64 = rng.random();
    let mut strata: Vec<usize> = (0..b)
        .map(|k| (((k as f64 + offset) / b as f64) * steps as f64) as usize)
        .map(|t| t.min(steps - 1))
        .collect();
    strata.shuffle(rng);
    strata
        .into_iter()
        .map(|t| {
            if order.is_empty() {
                order.extend(0..data.len());
                order.shuffle(rng);
            }
            let example = order.pop().expect("refilled above");
            let x0 = &data[example].target;
            let eps = normal_tensor(rng, x0.shape(), 1.0);
            let z_t = forward_noise(x0, &eps, &model.schedule, t)?;
            let c = condition_dropout(&conds[example], &cfg.dropout, rng)?;
            Ok(Item {
                t,
                z_t,
                eps,
                conds: c,
            })
        })
        .collect()
}

fn run_stage(model: &mut AnySdModel, data: &[EditExample], cfg: &TrainConfig, stage: Stage) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(config_err!("training dataset is empty"));
    }
    for ex in data {
        if ex.target.shape() != model.image_shape() || ex.source.shape() != model.image_shape() {
            return Err(config_err!(
                "training image shape {:?} does not match model {:?}",
                ex.target.shape(),
                model.image_shape()
            ));
        }
    }
    model.store.train_only(match stage {
        Stage::Stage1 => StageTag::Backbone,
        Stage::Stage2 => StageTag::Adapter,
    });
    let conds = data
        .iter()
        .map(|ex| example_conditions(model, ex, stage))
        .collect::<Result<Vec<_>>>()?;
    let initial_eval_loss = evaluation_loss(model, data, stage, cfg.seed, cfg.eval_draws)?;

    let label = match stage {
        Stage::Stage1 => "train-stage1",
        Stage::Stage2 => "train-stage2",
    };
    let mut rng = derive(cfg.seed, label);
    let mut opt = Optimizer::new(cfg.optimizer.clone(), cfg.learning_rate)?;
    let mut history = Vec::with_capacity(cfg.steps);
    let mut order = Vec::new();
    for step in 0..cfg.steps {
        let batch = draw_batch(model, data, &conds, cfg, &mut order, &mut rng)?;
        let snapshot: &AnySdModel = model;
        let results = batch
            .par_iter()
            .map(|it| item_loss_and_grads(snapshot, it))
            .collect::<Result<Vec<_>>>()?;
        model.store.zero_grad();
        let mut total = 0.0;
        for (loss, grads) in &results {
            total += loss;
            for (id, g) in grads {
                if model.store.get(*id).trainable {
                    model.store.add_grad(*id, g);
                }
            }
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NumericDomain(format!("training loss non-finite at step {step}")));
        }
        model.store.scale_grads(1.0 / batch.len() as f64);
        opt.step(&mut model.store)?;
        history.push(loss);
        if step % 500 == 0 {
            log::debug!("{label} step {step} loss {loss:.6}");
        }
    }
    let final_eval_loss = evaluation_loss(model, data, stage, cfg.seed, cfg.eval_draws)?;
    model.store.set_all_trainable(true);
    model.completed_stages.insert(stage);
    Ok(TrainReport {
        stage,
        loss_history: history,
        initial_eval_loss,
        final_eval_loss,
    })
}

/// Trains the backbone. Adapter parameters stay frozen and the visual
/// condition is held null.
pub fn train_stage1(model: &mut AnySdModel, data: &[EditExample], cfg: &TrainConfig) -> Result<TrainReport> {
    run_stage(model, data, cfg, Stage::Stage1)
}

/// Trains expert projections, router, projector and task embeddings on top
/// of a stage-1 backbone, which stays frozen.
pub fn train_stage2(model: &mut AnySdModel, data: &[EditExample], cfg: &TrainConfig) -> Result<TrainReport> {
    if !model.completed_stages.contains(&Stage::Stage1) {
        return Err(contract_err!("stage 2 requires a stage-1 checkpoint"));
    }
    if !model.adapters_initialized {
        model.init_experts_from_text()?;
    }
    run_stage(model, data, cfg, Stage::Stage2)
}
