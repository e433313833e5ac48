//! Named parameters, gradient-descent updates and finite-difference checks.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{contract_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Training group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    /// Denoiser backbone: trained in stage 1, frozen in stage 2.
    Backbone,
    /// Expert visual-attention projections, router, projector and task
    /// embeddings: frozen in stage 1, trained in stage 2.
    Adapter,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
    pub stage: StageTag,
    pub grad: Option<Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, stage: StageTag) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(contract_err!("duplicate parameter name {name}"));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            tensor,
            trainable: true,
            stage,
            grad: None,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.params.len()).map(ParamId).collect()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    /// Marks exactly the parameters of `stage` as trainable.
    pub fn train_only(&mut self, stage: StageTag) {
        for p in &mut self.params {
            p.trainable = p.stage == stage;
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.params.iter_mut().for_each(|p| p.trainable = trainable);
    }

    /// Resets every trainable gradient to zeros.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = p.trainable.then(|| Tensor::zeros(p.tensor.shape()));
        }
    }

    pub fn clear_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    pub fn add_grad(&mut self, id: ParamId, g: &Tensor) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, v)| *a += v),
            None => p.grad = Some(g.clone()),
        }
    }

    /// Scales all accumulated gradients, e.g. to average over a minibatch.
    pub fn scale_grads(&mut self, s: f64) {
        for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Flat snapshot of every parameter value, keyed by name.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.clone()))
            .collect()
    }
}

/// Plain gradient descent or the optional Adam variant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    step: u64,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Self {
            kind,
            learning_rate,
            step: 0,
            moments: HashMap::new(),
        })
    }

    /// Applies one update to every trainable parameter and clears gradients.
    /// Frozen parameters are never touched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(contract_err!("parameter {} has no gradient", p.name));
        }
        self.step += 1;
        let lr = self.learning_rate;
        for (i, p) in store.params.iter_mut().enumerate() {
            let grad = p.grad.take();
            if !p.trainable {
                continue;
            }
            let grad = grad.expect("checked above");
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in p.tensor.data_mut().iter_mut().zip(grad.data()) {
                        *w -= lr * g;
                    }
                }
                OptimizerKind::Adam {
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    let n = grad.numel();
                    let (m, v) = self
                        .moments
                        .entry(ParamId(i))
                        .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    for (((w, g), m), v) in p
                        .tensor
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Single plain gradient-descent step: `p <- p - lr * grad` for trainable
/// parameters, then gradients are cleared.
pub fn optimizer_step(store: &mut ParamStore, learning_rate: f64) -> Result<()> {
    Optimizer::new(OptimizerKind::Sgd, learning_rate)?.step(store)
}

/// Pins a closure to the signature [`finite_diff_check`] expects, so it can
/// be bound to a variable before use.
pub fn objective<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    f
}

/// Compares reverse-mode gradients against central differences.
///
/// `f` records a scalar on the tape it is handed. Returns the maximum over all
/// coordinates of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, store: &ParamStore, params: &[ParamId], epsilon: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(contract_err!("epsilon must lie in (0, 1e-2], got {epsilon}"));
    }
    let mut work = store.clone();
    for id in params {
        work.get_mut(*id).trainable = true;
    }
    let tape = Tape::new();
    let out = f(&tape, &work)?;
    ensure_finite(out.scalar_value())?;
    tape.backward(out)?;
    work.clear_grad();
    tape.accumulate_into(&mut work);

    let eval = |s: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let v = f(&tape, s)?.scalar_value();
        ensure_finite(v)
    };

    let mut worst = 0.0f64;
    for &id in params {
        let analytic = work
            .get(id)
            .grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(work.get(id).tensor.shape()));
        for k in 0..analytic.numel() {
            let orig = work.get(id).tensor.data()[k];
            work.get_mut(id).tensor.data_mut()[k] = orig + epsilon;
            let plus = eval(&work)?;
            work.get_mut(id).tensor.data_mut()[k] = orig - epsilon;
            let minus = eval(&work)?;
            work.get_mut(id).tensor.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn ensure_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericDomain(format!("function evaluated to {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, values: &[f64]) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s
            .insert(name, Tensor::vector(values.to_vec()), StageTag::Backbone)
            .unwrap();
        (s, id)
    }

    #[test]
    fn sgd_arithmetic() {
        let (mut s, id) = store_with("p", &[1.0]);
        s.get_mut(id).grad = Some(Tensor::vector(vec![2.0]));
        optimizer_step(&mut s, 0.1).unwrap();
        assert!((s.get(id).tensor.data()[0] - 0.8).abs() < 1e-15);
        assert!(s.get(id).grad.is_none());
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let (mut s, id) = store_with("p", &[1.5, -2.0]);
        s.zero_grad();
        optimizer_step(&mut s, 0.5).unwrap();
        assert_eq!(s.get(id).tensor.data(), &[1.5, -2.0]);
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let (mut s, id) = store_with("p", &[1.0]);
        s.get_mut(id).trainable = false;
        s.get_mut(id).grad = Some(Tensor::vector(vec![5.0]));
        optimizer_step(&mut s, 0.1).unwrap();
        assert_eq!(s.get(id).tensor.data(), &[1.0]);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let (mut s, _) = store_with("p", &[1.0]);
        assert!(matches!(optimizer_step(&mut s, 0.1), Err(Error::Contract(_))));
        assert!(matches!(Optimizer::new(OptimizerKind::Sgd, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut s, _) = store_with("p", &[1.0]);
        assert!(s.insert("p", Tensor::scalar(0.0), StageTag::Adapter).is_err());
    }

    #[test]
    fn fd_check_quadratic() {
        let (s, id) = store_with("x", &[3.0]);
        let err = finite_diff_check(
            |tape, st| tape.param(st, id).square()?.sum(),
            &s,
            &[id],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn fd_check_constant_function() {
        let (s, id) = store_with("x", &[3.0, 4.0]);
        let err = finite_diff_check(
            |tape, _| Ok(tape.constant(Tensor::scalar(7.0))),
            &s,
            &[id],
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn fd_check_rejects_bad_epsilon_and_nonfinite() {
        let (s, id) = store_with("x", &[3.0]);
        let f = objective(move |tape, st| tape.param(st, id).sum());
        assert!(finite_diff_check(f, &s, &[id], 0.5).is_err());
        let bad = objective(|tape, _| Ok(tape.constant(Tensor::scalar(f64::NAN))));
        assert!(matches!(
            finite_diff_check(bad, &s, &[id], 1e-4),
            Err(Error::NumericDomain(_))
        ));
    }
}
