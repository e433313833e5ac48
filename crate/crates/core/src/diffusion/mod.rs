//! Denoising diffusion: schedule, condition handling, guidance and sampling.

pub mod guidance;
pub mod sampler;
pub mod schedule;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::rng::{normal_tensor, Rng};
use crate::task::EditTaskType;
use crate::tensor::Tensor;

pub use guidance::{cfg_compose, GuidanceScales};
pub use sampler::{sample, SampleReport, SamplerOptions};
pub use schedule::{forward_noise, make_schedule, NoiseSchedule};

/// Visual-prompt slot: the task whose embedding leads the visual tokens and
/// optional reference-image features. Missing features mean a zero feature
/// vector; a missing slot means the whole visual condition is null.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualCondition {
    pub task: EditTaskType,
    pub features: Option<Tensor>,
}

/// The three conditioning slots. `None` is the learned null condition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConditionSet {
    pub image: Option<Tensor>,
    pub text: Option<Vec<usize>>,
    pub visual: Option<VisualCondition>,
}

impl ConditionSet {
    pub fn null() -> Self {
        Self::default()
    }

    /// The nested subsets used by guidance: nothing, image, image+text,
    /// image+text+visual.
    pub fn nested(&self) -> [ConditionSet; 4] {
        let i = ConditionSet {
            image: self.image.clone(),
            ..Default::default()
        };
        let it = ConditionSet {
            text: self.text.clone(),
            ..i.clone()
        };
        [ConditionSet::null(), i, it, self.clone()]
    }
}

/// Independent drop probability of each slot during training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutProbs {
    pub image: f64,
    pub text: f64,
    pub visual: f64,
}

impl Default for DropoutProbs {
    fn default() -> Self {
        Self {
            image: 0.05,
            text: 0.05,
            visual: 0.05,
        }
    }
}

impl DropoutProbs {
    pub fn none() -> Self {
        Self {
            image: 0.0,
            text: 0.0,
            visual: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("image", self.image), ("text", self.text), ("visual", self.visual)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err!("{name} dropout probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Replaces each slot by its null independently with its probability.
pub fn condition_dropout(conds: &ConditionSet, probs: &DropoutProbs, rng: &mut Rng) -> Result<ConditionSet> {
    probs.validate()?;
    let mut keep = |p: f64| !rng.random_bool(p);
    Ok(ConditionSet {
        image: conds.image.clone().filter(|_| keep(probs.image)),
        text: conds.text.clone().filter(|_| keep(probs.text)),
        visual: conds.visual.clone().filter(|_| keep(probs.visual)),
    })
}

/// A noise predictor `eps_theta(z_t, t, c)`.
pub trait Denoiser {
    fn predict_noise(&self, z_t: &Tensor, t: usize, conds: &ConditionSet) -> Result<Tensor>;
}

impl<F> Denoiser for F
where
    F: Fn(&Tensor, usize, &ConditionSet) -> Result<Tensor>,
{
    fn predict_noise(&self, z_t: &Tensor, t: usize, conds: &ConditionSet) -> Result<Tensor> {
        self(z_t, t, conds)
    }
}

/// One draw of the noise-prediction objective's randomness.
#[derive(Clone, Debug)]
pub struct NoisedSample {
    pub t: usize,
    pub eps: Tensor,
    pub z_t: Tensor,
}

/// Draws a uniform timestep and Gaussian noise and noises `x0`.
pub fn draw_noised(x0: &Tensor, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<NoisedSample> {
    let t = rng.random_range(0..schedule.len());
    let eps = normal_tensor(rng, x0.shape(), 1.0);
    let z_t = forward_noise(x0, &eps, schedule, t)?;
    Ok(NoisedSample { t, eps, z_t })
}

/// `mean |eps - eps_theta(z_t, t, c)|^2` for one sampled timestep, with
/// condition dropout applied.
pub fn training_loss(
    model: &dyn Denoiser,
    x0: &Tensor,
    conds: &ConditionSet,
    schedule: &NoiseSchedule,
    dropout: &DropoutProbs,
    rng: &mut Rng,
) -> Result<f64> {
    let s = draw_noised(x0, schedule, rng)?;
    let c = condition_dropout(conds, dropout, rng)?;
    let pred = model.predict_noise(&s.z_t, s.t, &c)?;
    let diff = s.eps.sub(&pred)?;
    Ok(diff.data().iter().map(|d| d * d).sum::<f64>() / diff.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn full() -> ConditionSet {
        ConditionSet {
            image: Some(Tensor::vector(vec![1.0])),
            text: Some(vec![3]),
            visual: Some(VisualCondition {
                task: EditTaskType::Add,
                features: None,
            }),
        }
    }

    #[test]
    fn dropout_extremes() {
        let mut rng = seeded(0);
        let c = full();
        assert_eq!(condition_dropout(&c, &DropoutProbs::none(), &mut rng).unwrap(), c);
        let all = DropoutProbs {
            image: 1.0,
            text: 1.0,
            visual: 1.0,
        };
        assert_eq!(condition_dropout(&c, &all, &mut rng).unwrap(), ConditionSet::null());
        let bad = DropoutProbs {
            image: 1.5,
            ..DropoutProbs::none()
        };
        assert!(condition_dropout(&c, &bad, &mut rng).is_err());
    }

    #[test]
    fn dropout_frequency_at_half() {
        let mut rng = seeded(42);
        let p = DropoutProbs {
            image: 0.5,
            text: 0.5,
            visual: 0.5,
        };
        let c = full();
        let trials = 10_000;
        let mut dropped = [0usize; 3];
        for _ in 0..trials {
            let d = condition_dropout(&c, &p, &mut rng).unwrap();
            dropped[0] += d.image.is_none() as usize;
            dropped[1] += d.text.is_none() as usize;
            dropped[2] += d.visual.is_none() as usize;
        }
        for n in dropped {
            assert!((n as f64 / trials as f64 - 0.5).abs() < 0.02, "{n}");
        }
    }

    #[test]
    fn loss_of_oracle_and_offset_predictors() {
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let x0 = Tensor::vector(vec![0.3, -0.7, 1.2]);
        // oracle recovers eps exactly from z_t and the known x0
        let sched = s.clone();
        let x = x0.clone();
        let oracle = move |z: &Tensor, t: usize, _: &ConditionSet| {
            let ab = sched.alpha_bar(t);
            z.zip_with(&x, |z, x| (z - ab.sqrt() * x) / (1.0 - ab).sqrt())
        };
        let l = training_loss(&oracle, &x0, &full(), &s, &DropoutProbs::default(), &mut seeded(1)).unwrap();
        assert!(l < 1e-20, "{l}");

        let sched = s.clone();
        let x = x0.clone();
        let offset = move |z: &Tensor, t: usize, _: &ConditionSet| {
            let ab = sched.alpha_bar(t);
            z.zip_with(&x, |z, x| (z - ab.sqrt() * x) / (1.0 - ab).sqrt() - 0.5)
        };
        let l = training_loss(&offset, &x0, &full(), &s, &DropoutProbs::default(), &mut seeded(1)).unwrap();
        assert!((l - 0.25).abs() < 1e-12, "{l}");
    }

    #[test]
    fn forward_noise_monte_carlo_moments() {
        let s = make_schedule(10, 1e-4, 0.02).unwrap();
        let t = 9;
        let x0 = Tensor::vector(vec![0.8]);
        let mut rng = seeded(9);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| draw_at(&x0, &s, t, &mut rng))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let ab = s.alpha_bar(t);
        assert!((var / (1.0 - ab) - 1.0).abs() < 0.05, "{var}");
        assert!((mean - ab.sqrt() * 0.8).abs() < 4.0 * ((1.0 - ab) / n as f64).sqrt());
    }

    fn draw_at(x0: &Tensor, s: &NoiseSchedule, t: usize, rng: &mut Rng) -> f64 {
        let eps = normal_tensor(rng, &[1], 1.0);
        forward_noise(x0, &eps, s, t).unwrap().data()[0]
    }
}
