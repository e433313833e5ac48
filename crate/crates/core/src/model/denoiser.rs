//! The toy denoiser: patch tokens, self-attention, decoupled cross-attention
//! over text and visual-prompt tokens, and an MLP, with residual links.
//!
//! The network estimates the clean image from the noisy one and the source
//! image (added as a skip), and the noise estimate follows from the forward
//! relation `eps = (z_t - sqrt(ab) x0) / sqrt(1 - ab)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attention::{
    canonical_routing, decoupled_attention_var, route_var, scaled_dot_attention, AttentionVars,
    ExpertVars, RoutingMode,
};
use crate::autograd::{Tape, Var};
use crate::diffusion::{make_schedule, ConditionSet, Denoiser, NoiseSchedule};
use crate::error::{contract_err, shape_err, Result};
use crate::param::{ParamId, ParamStore, StageTag};
use crate::rng::{derive, normal_tensor};
use crate::task::{EditTaskType, CANONICAL_EXPERT_COUNT};
use crate::tensor::Tensor;
use crate::text::{vocab_size, MAX_TOKENS, NULL_TOKEN};

use super::config::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
}

#[derive(Clone, Debug)]
pub struct AnySdModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub schedule: NoiseSchedule,
    pub completed_stages: BTreeSet<Stage>,
    /// Whether expert projections have been copied from the trained text
    /// projections.
    pub adapters_initialized: bool,
    patch_index: Vec<usize>,
    unpatch_index: Vec<usize>,
}

/// Outputs of one forward pass.
pub struct Forward<'t> {
    pub eps: Var<'t>,
    pub routing: Option<Var<'t>>,
}

pub(crate) fn block_name(b: usize, part: &str) -> String {
    format!("block{b}.{part}")
}

pub(crate) fn expert_name(b: usize, e: usize, part: &str) -> String {
    format!("block{b}.expert{e}.{part}")
}

impl AnySdModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let schedule = make_schedule(config.diffusion_steps, config.beta_start, config.beta_end)?;
        let mut store = ParamStore::new();
        let mut rng = derive(config.seed, "model-init");
        let c = &config;
        let dm = c.d_model;
        let mut w = |store: &mut ParamStore, name: &str, shape: &[usize], std: f64, stage| {
            let t = if std == 0.0 {
                Tensor::zeros(shape)
            } else {
                normal_tensor(&mut rng, shape, std)
            };
            store.insert(name, t, stage).map(|_| ())
        };
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        use StageTag::{Adapter, Backbone};

        w(&mut store, "embed.in.w", &[2 * c.patch_dim(), dm], inv(2 * c.patch_dim()), Backbone)?;
        w(&mut store, "embed.in.b", &[dm], 0.0, Backbone)?;
        w(&mut store, "embed.pos", &[c.tokens(), dm], 0.1, Backbone)?;
        w(&mut store, "embed.time.w", &[c.time_features, dm], inv(c.time_features), Backbone)?;
        w(&mut store, "text.tokens", &[vocab_size(), dm], 1.0, Backbone)?;
        w(&mut store, "text.pos", &[MAX_TOKENS, dm], 0.1, Backbone)?;
        for b in 0..c.blocks {
            for p in ["q", "k", "v"] {
                w(&mut store, &block_name(b, &format!("self.{p}")), &[dm, c.d_attn], inv(dm), Backbone)?;
                w(&mut store, &block_name(b, &format!("cross.{p}")), &[dm, c.d_attn], inv(dm), Backbone)?;
            }
            w(&mut store, &block_name(b, "self.o"), &[c.d_attn, dm], inv(c.d_attn), Backbone)?;
            w(&mut store, &block_name(b, "cross.o"), &[c.d_attn, dm], inv(c.d_attn), Backbone)?;
            w(&mut store, &block_name(b, "mlp.w1"), &[dm, c.mlp_hidden], inv(dm), Backbone)?;
            w(&mut store, &block_name(b, "mlp.b1"), &[c.mlp_hidden], 0.0, Backbone)?;
            w(&mut store, &block_name(b, "mlp.w2"), &[c.mlp_hidden, dm], inv(c.mlp_hidden), Backbone)?;
            w(&mut store, &block_name(b, "mlp.b2"), &[dm], 0.0, Backbone)?;
        }
        w(&mut store, "head.w", &[dm, c.patch_dim()], 0.02, Backbone)?;
        w(&mut store, "head.b", &[c.patch_dim()], 0.0, Backbone)?;

        for b in 0..c.blocks {
            for e in 0..c.experts {
                for p in ["k", "v"] {
                    w(&mut store, &expert_name(b, e, p), &[c.task_width, c.d_attn], inv(c.task_width), Adapter)?;
                }
            }
        }
        w(
            &mut store,
            "visual.proj",
            &[c.reference_features(), c.visual_tokens * c.task_width],
            inv(c.reference_features()),
            Adapter,
        )?;
        let (table, router) = if c.experts == CANONICAL_EXPERT_COUNT {
            let (t, r) = canonical_routing(&mut rng, c.task_width, c.router_gain, c.router_temperature)?;
            (t.table, r.projection)
        } else {
            let n = EditTaskType::ALL.len();
            (
                normal_tensor(&mut rng, &[n, c.task_width], 1.0),
                normal_tensor(&mut rng, &[c.task_width, c.experts], inv(c.task_width)),
            )
        };
        store.insert("task.embeddings", table, Adapter)?;
        store.insert("router.proj", router, Adapter)?;

        let mut model = Self {
            patch_index: patch_index(&config),
            unpatch_index: Vec::new(),
            config,
            store,
            schedule,
            completed_stages: BTreeSet::new(),
            adapters_initialized: false,
        };
        model.unpatch_index = invert(&model.patch_index);
        model.init_experts_from_text()?;
        model.adapters_initialized = false;
        Ok(model)
    }

    /// Copies each block's text key/value projections into all of its
    /// experts, overlapping rows when the widths differ.
    pub fn init_experts_from_text(&mut self) -> Result<()> {
        let c = self.config.clone();
        for b in 0..c.blocks {
            for p in ["k", "v"] {
                let src = self.param(&block_name(b, &format!("cross.{p}")))?.clone();
                let rows = c.task_width.min(c.d_model);
                for e in 0..c.experts {
                    let id = self.id(&expert_name(b, e, p))?;
                    let mut data = vec![0.0; c.task_width * c.d_attn];
                    data[..rows * c.d_attn].copy_from_slice(&src.data()[..rows * c.d_attn]);
                    self.store.get_mut(id).tensor = Tensor::new(&[c.task_width, c.d_attn], data)?;
                }
            }
        }
        self.adapters_initialized = true;
        Ok(())
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.store
            .id(name)
            .ok_or_else(|| contract_err!("model has no parameter {name}"))
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.store.get(self.id(name)?).tensor)
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.config.image_shape()
    }

    /// Averages a reference image onto a `ref_pool x ref_pool` grid, giving
    /// the feature vector the visual-prompt projector consumes.
    pub fn encode_reference(&self, image: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let (h, w) = crate::image::dims(image)?;
        let g = c.ref_pool;
        if h < g || w < g {
            return Err(shape_err!("reference image {h}x{w} smaller than pool grid {g}"));
        }
        let mut out = vec![0.0; g * g * c.channels];
        let mut counts = vec![0.0; g * g];
        for y in 0..h {
            for x in 0..w {
                let cell = (y * g / h) * g + x * g / w;
                let p = crate::image::pixel(image, y, x);
                for ch in 0..c.channels.min(3) {
                    out[cell * c.channels + ch] += p[ch];
                }
                counts[cell] += 1.0;
            }
        }
        for (cell, n) in counts.iter().enumerate() {
            for ch in 0..c.channels {
                out[cell * c.channels + ch] /= n;
            }
        }
        Ok(Tensor::vector(out))
    }

    fn check_image(&self, t: &Tensor, what: &str) -> Result<()> {
        if t.shape() != self.image_shape() {
            return Err(shape_err!(
                "{what} has shape {:?}, model expects {:?}",
                t.shape(),
                self.image_shape()
            ));
        }
        Ok(())
    }

    /// Records the noise estimate for `z_t` at step `t` under `conds`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        z_t: &Tensor,
        t: usize,
        conds: &ConditionSet,
    ) -> Result<Forward<'t>> {
        self.forward_with(&self.store, tape, z_t, t, conds)
    }

    /// Like [`AnySdModel::forward`] but reading parameters from `store`,
    /// which must share this model's layout.
    pub fn forward_with<'t>(
        &self,
        store: &ParamStore,
        tape: &'t Tape,
        z_t: &Tensor,
        t: usize,
        conds: &ConditionSet,
    ) -> Result<Forward<'t>> {
        let c = &self.config;
        self.schedule.check_timestep(t)?;
        self.check_image(z_t, "noisy sample")?;
        let p = |name: &str| -> Result<Var<'t>> { Ok(tape.param(store, self.id(name)?)) };
        let (tokens, pd) = (c.tokens(), c.patch_dim());

        let z = tape.constant(z_t.clone()).gather(self.patch_index.clone(), &[tokens, pd])?;
        let source = match &conds.image {
            Some(img) => {
                self.check_image(img, "source image")?;
                img.clone()
            }
            None => Tensor::zeros(&self.image_shape()),
        };
        let src = tape.constant(source).gather(self.patch_index.clone(), &[tokens, pd])?;

        let mut h = z
            .concat(1, src)?
            .matmul(p("embed.in.w")?)?
            .add_row(p("embed.in.b")?)?
            .add(p("embed.pos")?)?;
        let time = tape
            .constant(time_features(t, self.schedule.len(), c.time_features))
            .matmul(p("embed.time.w")?)?
            .reshape(&[c.d_model])?;
        h = h.add_row(time)?;

        let c_text = self.text_tokens(store, tape, conds.text.as_deref())?;
        let (c_visual, routing) = match &conds.visual {
            Some(vc) => {
                let (cv, w) = self.visual_tokens(store, tape, vc.task, vc.features.as_ref())?;
                (Some(cv), Some(w))
            }
            None => (None, None),
        };
        let uniform;
        let weights = match routing {
            Some(w) => w,
            None => {
                uniform = tape.constant(Tensor::filled(&[c.experts], 1.0 / c.experts as f64));
                uniform
            }
        };

        for b in 0..c.blocks {
            let q = h.matmul(p(&block_name(b, "self.q"))?)?;
            let k = h.matmul(p(&block_name(b, "self.k"))?)?;
            let v = h.matmul(p(&block_name(b, "self.v"))?)?;
            let a = scaled_dot_attention(q, k, v)?.matmul(p(&block_name(b, "self.o"))?)?;
            h = h.add(a)?;

            let attn = AttentionVars {
                w_q: p(&block_name(b, "cross.q"))?,
                w_k: p(&block_name(b, "cross.k"))?,
                w_v: p(&block_name(b, "cross.v"))?,
            };
            let experts = if c_visual.is_some() {
                (0..c.experts)
                    .map(|e| {
                        Ok(ExpertVars {
                            w_k: p(&expert_name(b, e, "k"))?,
                            w_v: p(&expert_name(b, e, "v"))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let x = decoupled_attention_var(h, c_text, c_visual, &attn, &experts, weights)?
                .matmul(p(&block_name(b, "cross.o"))?)?;
            h = h.add(x)?;

            let m = h
                .matmul(p(&block_name(b, "mlp.w1"))?)?
                .add_row(p(&block_name(b, "mlp.b1"))?)?
                .gelu()?
                .matmul(p(&block_name(b, "mlp.w2"))?)?
                .add_row(p(&block_name(b, "mlp.b2"))?)?;
            h = h.add(m)?;
        }

        let x0 = h
            .matmul(p("head.w")?)?
            .add_row(p("head.b")?)?
            .add(src)?;
        let ab = self.schedule.alpha_bar(t);
        let eps = z
            .sub(x0.scale(ab.sqrt())?)?
            .scale(1.0 / (1.0 - ab).sqrt())?
            .gather(self.unpatch_index.clone(), &self.image_shape())?;
        Ok(Forward { eps, routing })
    }

    fn text_tokens<'t>(&self, store: &ParamStore, tape: &'t Tape, ids: Option<&[usize]>) -> Result<Var<'t>> {
        let dm = self.config.d_model;
        let null = [NULL_TOKEN];
        let ids = ids.unwrap_or(&null);
        if ids.is_empty() {
            return Err(contract_err!("text condition has no tokens"));
        }
        let ids = &ids[..ids.len().min(MAX_TOKENS)];
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab_size()) {
            return Err(contract_err!("token id {bad} outside the vocabulary"));
        }
        let index = ids.iter().flat_map(|&i| i * dm..(i + 1) * dm).collect();
        let emb = tape
            .param(store, self.id("text.tokens")?)
            .gather(index, &[ids.len(), dm])?;
        let pos = tape
            .param(store, self.id("text.pos")?)
            .rows(0, ids.len())?;
        emb.add(pos)
    }

    /// Visual-prompt tokens `[v_task ; project(z_V)]` and the routing
    /// weights derived from the same task embedding.
    pub(crate) fn visual_tokens<'t>(
        &self,
        store: &ParamStore,
        tape: &'t Tape,
        task: EditTaskType,
        features: Option<&Tensor>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let c = &self.config;
        let n = c.task_width;
        let row = task.index();
        let v_task = tape
            .param(store, self.id("task.embeddings")?)
            .gather((row * n..(row + 1) * n).collect(), &[1, n])?;
        let f = match features {
            Some(f) if f.numel() == c.reference_features() => f.clone(),
            Some(f) => {
                return Err(shape_err!(
                    "visual features of length {} but projector expects {}",
                    f.numel(),
                    c.reference_features()
                ))
            }
            None => Tensor::zeros(&[c.reference_features()]),
        };
        let projected = tape
            .constant(f.reshaped(&[1, c.reference_features()])?)
            .matmul(tape.param(store, self.id("visual.proj")?))?
            .reshape(&[c.visual_tokens, n])?;
        let weights = route_var(
            v_task.reshape(&[n])?,
            tape.param(store, self.id("router.proj")?),
            c.router_temperature,
            c.routing,
        )?;
        Ok((v_task.concat(0, projected)?, weights))
    }

    /// Routing weights for a task under the current parameters.
    pub fn routing_weights(&self, task: EditTaskType) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let (_, w) = self.visual_tokens(&self.store, &tape, task, None)?;
        Ok(w.value().into_data())
    }

    pub fn set_routing_mode(&mut self, mode: RoutingMode) {
        self.config.routing = mode;
    }

    pub fn predict_noise_value(&self, z_t: &Tensor, t: usize, conds: &ConditionSet) -> Result<Tensor> {
        let tape = Tape::new();
        Ok(self.forward(&tape, z_t, t, conds)?.eps.value())
    }
}

impl Denoiser for AnySdModel {
    fn predict_noise(&self, z_t: &Tensor, t: usize, conds: &ConditionSet) -> Result<Tensor> {
        self.predict_noise_value(z_t, t, conds)
    }
}

/// Sinusoidal features of the normalized timestep.
fn time_features(t: usize, steps: usize, width: usize) -> Tensor {
    let x = (t as f64 + 0.5) / steps as f64;
    let data = (0..width)
        .map(|k| {
            let freq = std::f64::consts::PI * (1 << (k / 2)) as f64;
            if k % 2 == 0 {
                (freq * x).sin()
            } else {
                (freq * x).cos()
            }
        })
        .collect();
    Tensor::new(&[1, width], data).expect("width >= 1")
}

/// Flat image offsets in token-major patch order.
fn patch_index(c: &ModelConfig) -> Vec<usize> {
    let (p, ch) = (c.patch, c.channels);
    let mut idx = Vec::with_capacity(c.height * c.width * ch);
    for py in 0..c.height / p {
        for px in 0..c.width / p {
            for dy in 0..p {
                for dx in 0..p {
                    for k in 0..ch {
                        let (y, x) = (py * p + dy, px * p + dx);
                        idx.push((y * c.width + x) * ch + k);
                    }
                }
            }
        }
    }
    idx
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
