//! Cross-attention with a mixture of visual-attention experts.
//!
//! Text tokens go through the shared key/value projections. Visual-prompt
//! tokens go through per-expert key/value projections whose outputs are mixed
//! by router weights and added to the text branch. With no visual condition
//! the layer reduces exactly to plain text cross-attention.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{config_err, contract_err, shape_err, Result};
use crate::rng::{normal, normal_tensor, Rng};
use crate::task::{EditTaskType, CANONICAL_EXPERT_COUNT};
use crate::tensor::Tensor;

/// Tolerance for router weights to count as lying on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// Shared projections `W_q`, `W_k`, `W_v`, each `[d_model, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

/// Key/value projections `W'_k`, `W'_v` of one expert, each `[d_cond, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertParams {
    pub w_k: Tensor,
    pub w_v: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertBank {
    pub experts: Vec<ExpertParams>,
}

/// One learnable embedding row per edit task, `[25, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskEmbeddingTable {
    pub table: Tensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    /// Softmax weights over all experts.
    #[default]
    Soft,
    /// One-hot on the highest-scoring expert.
    Top1,
    /// Routing disabled: every task uses the first expert.
    Shared,
}

/// Projection `[N, E]` from task embedding to expert logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Router {
    pub projection: Tensor,
    pub temperature: f64,
    pub mode: RoutingMode,
}

impl AttentionParams {
    pub fn random(rng: &mut Rng, d_model: usize, d: usize) -> Self {
        let std = 1.0 / (d_model as f64).sqrt();
        Self {
            w_q: normal_tensor(rng, &[d_model, d], std),
            w_k: normal_tensor(rng, &[d_model, d], std),
            w_v: normal_tensor(rng, &[d_model, d], std),
        }
    }

    pub fn on_tape<'t>(&self, tape: &'t Tape) -> AttentionVars<'t> {
        AttentionVars {
            w_q: tape.constant(self.w_q.clone()),
            w_k: tape.constant(self.w_k.clone()),
            w_v: tape.constant(self.w_v.clone()),
        }
    }
}

impl ExpertBank {
    pub fn zeros(count: usize, d_cond: usize, d: usize) -> Self {
        let e = ExpertParams {
            w_k: Tensor::zeros(&[d_cond, d]),
            w_v: Tensor::zeros(&[d_cond, d]),
        };
        Self {
            experts: vec![e; count],
        }
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn on_tape<'t>(&self, tape: &'t Tape) -> Vec<ExpertVars<'t>> {
        self.experts
            .iter()
            .map(|e| ExpertVars {
                w_k: tape.constant(e.w_k.clone()),
                w_v: tape.constant(e.w_v.clone()),
            })
            .collect()
    }
}

/// Copies the shared key/value projections into every expert.
///
/// When `d_cond` differs from `d_model` the overlapping leading rows are
/// copied and any remaining rows are zero. The copies are independent of
/// the source.
pub fn init_experts_from_text(bank: &mut ExpertBank, params: &AttentionParams) -> Result<()> {
    let (d_model, d) = params.w_k.dims2()?;
    for (i, e) in bank.experts.iter_mut().enumerate() {
        let (d_cond, de) = e.w_k.dims2()?;
        if de != d || e.w_v.dims2()? != (d_cond, d) {
            return Err(shape_err!(
                "expert {i} projects to width {de}, shared projections to {d}"
            ));
        }
        let rows = d_cond.min(d_model);
        e.w_k = overlap_copy(&params.w_k, d_cond, rows, d);
        e.w_v = overlap_copy(&params.w_v, d_cond, rows, d);
    }
    Ok(())
}

fn overlap_copy(src: &Tensor, d_cond: usize, rows: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; d_cond * d];
    data[..rows * d].copy_from_slice(&src.data()[..rows * d]);
    Tensor::new(&[d_cond, d], data).expect("extents nonzero")
}

impl TaskEmbeddingTable {
    /// Row of `task`.
    pub fn embedding(&self, task: EditTaskType) -> &[f64] {
        let n = self.table.shape()[1];
        let r = task.index();
        &self.table.data()[r * n..(r + 1) * n]
    }

    pub fn width(&self) -> usize {
        self.table.shape()[1]
    }
}

impl Router {
    pub fn new(projection: Tensor, temperature: f64, mode: RoutingMode) -> Result<Self> {
        projection.dims2()?;
        check_temperature(temperature)?;
        Ok(Self {
            projection,
            temperature,
            mode,
        })
    }

    pub fn expert_count(&self) -> usize {
        self.projection.shape()[1]
    }

    /// Expert weights for one task embedding.
    pub fn route(&self, task_embedding: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let v = tape.constant(Tensor::vector(task_embedding.to_vec()));
        let p = tape.constant(self.projection.clone());
        Ok(route_var(v, p, self.temperature, self.mode)?.value().into_data())
    }

    /// Raw logits `v^T P / temperature`.
    pub fn logits(&self, task_embedding: &[f64]) -> Result<Vec<f64>> {
        let (n, _) = self.projection.dims2()?;
        if task_embedding.len() != n {
            return Err(shape_err!(
                "task embedding of width {} against router input width {n}",
                task_embedding.len()
            ));
        }
        let v = Tensor::new(&[1, n], task_embedding.to_vec())?;
        Ok(v.matmul(&self.projection)?.scale(1.0 / self.temperature).into_data())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(config_err!("router temperature must be positive, got {t}"))
    }
}

/// Differentiable routing: `softmax(v^T P / temperature)` as an `[E]` vector.
///
/// The hard modes produce constant one-hot weights; no gradient reaches the
/// router through them.
pub fn route_var<'t>(
    task_embedding: Var<'t>,
    projection: Var<'t>,
    temperature: f64,
    mode: RoutingMode,
) -> Result<Var<'t>> {
    check_temperature(temperature)?;
    let n = task_embedding.value().numel();
    let logits = task_embedding
        .reshape(&[1, n])?
        .matmul(projection)?
        .scale(1.0 / temperature)?;
    let e = logits.shape()[1];
    let tape = task_embedding.tape();
    match mode {
        RoutingMode::Soft => logits.softmax_rows()?.reshape(&[e]),
        RoutingMode::Top1 => {
            let l = logits.value();
            let best = argmax(l.data());
            Ok(tape.constant(one_hot(e, best)))
        }
        RoutingMode::Shared => Ok(tape.constant(one_hot(e, 0))),
    }
}

fn one_hot(n: usize, k: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n]);
    t.data_mut()[k] = 1.0;
    t
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Builds a task-embedding table and router whose initial argmax sends every
/// task to its canonical expert.
///
/// Each expert gets an orthonormal prototype direction `u_e`. A task's
/// embedding is its expert's prototype plus a small random perturbation,
/// and router column `e` is `gain * u_e`. The perturbation norm is kept
/// below `1/sqrt(2)` of the prototype, so the canonical logit always wins.
pub fn canonical_routing(
    rng: &mut Rng,
    width: usize,
    gain: f64,
    temperature: f64,
) -> Result<(TaskEmbeddingTable, Router)> {
    let experts = CANONICAL_EXPERT_COUNT;
    if width < experts {
        return Err(config_err!(
            "task embedding width {width} is smaller than the expert count {experts}"
        ));
    }
    let prototypes = orthonormal_rows(rng, experts, width);
    let mut table = Vec::with_capacity(EditTaskType::ALL.len() * width);
    for task in EditTaskType::ALL {
        let u = &prototypes[task.canonical_expert().index()];
        let mut r: Vec<f64> = (0..width).map(|_| normal(rng)).collect();
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        r.iter_mut().for_each(|x| *x *= 0.25 / norm);
        table.extend(u.iter().zip(&r).map(|(a, b)| a + b));
    }
    let mut proj = vec![0.0; width * experts];
    for (e, u) in prototypes.iter().enumerate() {
        for (i, &x) in u.iter().enumerate() {
            proj[i * experts + e] = gain * x;
        }
    }
    Ok((
        TaskEmbeddingTable {
            table: Tensor::new(&[EditTaskType::ALL.len(), width], table)?,
        },
        Router::new(
            Tensor::new(&[width, experts], proj)?,
            temperature,
            RoutingMode::Soft,
        )?,
    ))
}

/// Gram-Schmidt on Gaussian draws.
fn orthonormal_rows(rng: &mut Rng, count: usize, width: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    while rows.len() < count {
        let mut v: Vec<f64> = (0..width).map(|_| normal(rng)).collect();
        for u in &rows {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    rows
}

/// Tape handles for the shared projections.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars<'t> {
    pub w_q: Var<'t>,
    pub w_k: Var<'t>,
    pub w_v: Var<'t>,
}

/// Tape handles for one expert.
#[derive(Clone, Copy, Debug)]
pub struct ExpertVars<'t> {
    pub w_k: Var<'t>,
    pub w_v: Var<'t>,
}

/// `Softmax(Q K^T / sqrt(d)) V` for already projected operands.
pub fn scaled_dot_attention<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
    let k_shape = k.shape();
    if k_shape.len() != 2 || k_shape[0] == 0 {
        return Err(contract_err!("attention over an empty key set"));
    }
    let d = q.shape()[1] as f64;
    q.matmul(k.transpose()?)?
        .scale(1.0 / d.sqrt())?
        .softmax_rows()?
        .matmul(v)
}

/// `Softmax(Q K^T / sqrt(d)) V` with `Q = z W_q`, `K = c W_k`, `V = c W_v`.
pub fn text_cross_attention_var<'t>(
    z: Var<'t>,
    c_text: Var<'t>,
    p: &AttentionVars<'t>,
) -> Result<Var<'t>> {
    if c_text.shape().first() == Some(&0) {
        return Err(contract_err!("attention over an empty key set"));
    }
    let q = z.matmul(p.w_q)?;
    scaled_dot_attention(q, c_text.matmul(p.w_k)?, c_text.matmul(p.w_v)?)
}

/// Text attention plus the router-weighted sum of expert attentions over
/// the visual tokens. A missing visual condition returns the text branch
/// untouched.
pub fn decoupled_attention_var<'t>(
    z: Var<'t>,
    c_text: Var<'t>,
    c_visual: Option<Var<'t>>,
    p: &AttentionVars<'t>,
    experts: &[ExpertVars<'t>],
    weights: Var<'t>,
) -> Result<Var<'t>> {
    let text = text_cross_attention_var(z, c_text, p)?;
    let Some(c_v) = c_visual else {
        return Ok(text);
    };
    let w = weights.value();
    check_simplex(w.data(), experts.len())?;
    if c_v.shape().first() == Some(&0) {
        return Err(contract_err!("attention over an empty visual key set"));
    }
    let q = z.matmul(p.w_q)?;
    let (rows, d) = (text.shape()[0], text.shape()[1]);
    let hard = !weights.requires_grad();
    let tape = z.tape();

    // Stack the selected expert outputs as rows of [k, rows*d] and mix them
    // with a [1, k] weight row.
    let mut stacked: Option<Var<'t>> = None;
    let mut picked = Vec::new();
    for (e, ex) in experts.iter().enumerate() {
        if hard && w.data()[e] == 0.0 {
            continue;
        }
        let out = scaled_dot_attention(q, c_v.matmul(ex.w_k)?, c_v.matmul(ex.w_v)?)?
            .reshape(&[1, rows * d])?;
        stacked = Some(match stacked {
            None => out,
            Some(s) => s.concat(0, out)?,
        });
        picked.push(e);
    }
    let stacked = stacked.expect("simplex weights have a nonzero entry");
    let w_row = if picked.len() == experts.len() {
        weights.reshape(&[1, experts.len()])?
    } else {
        let sel = Tensor::new(&[1, picked.len()], picked.iter().map(|&e| w.data()[e]).collect())?;
        tape.constant(sel)
    };
    let visual = w_row.matmul(stacked)?.reshape(&[rows, d])?;
    text.add(visual)
}

fn check_simplex(w: &[f64], experts: usize) -> Result<()> {
    if w.len() != experts {
        return Err(shape_err!("{} routing weights for {experts} experts", w.len()));
    }
    let total: f64 = w.iter().sum();
    if w.iter().any(|&x| !x.is_finite() || x < -SIMPLEX_TOLERANCE)
        || (total - 1.0).abs() > SIMPLEX_TOLERANCE
    {
        return Err(contract_err!(
            "routing weights are not on the simplex (sum {total})"
        ));
    }
    Ok(())
}

/// Plain-tensor text cross-attention.
pub fn text_cross_attention(z: &Tensor, c_text: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let tape = Tape::new();
    let vars = p.on_tape(&tape);
    let out = text_cross_attention_var(
        tape.constant(z.clone()),
        tape.constant(c_text.clone()),
        &vars,
    )?;
    Ok(out.value())
}

/// Plain-tensor decoupled attention.
pub fn decoupled_attention(
    z: &Tensor,
    c_text: &Tensor,
    c_visual: Option<&Tensor>,
    p: &AttentionParams,
    bank: &ExpertBank,
    weights: &[f64],
) -> Result<Tensor> {
    let tape = Tape::new();
    let vars = p.on_tape(&tape);
    let experts = bank.on_tape(&tape);
    let out = decoupled_attention_var(
        tape.constant(z.clone()),
        tape.constant(c_text.clone()),
        c_visual.map(|c| tape.constant(c.clone())),
        &vars,
        &experts,
        tape.leaf(Tensor::vector(weights.to_vec())),
    )?;
    Ok(out.value())
}
