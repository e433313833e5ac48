//! Linear variance schedule and the closed-form forward process.

use crate::error::{config_err, contract_err, shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_bar: Vec<f64>,
}

/// Linearly spaced `beta` from `beta_start` to `beta_end` over `steps`
/// timesteps, with cumulative products `alpha_bar_t = prod_{s<=t} (1 - beta_s)`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(config_err!("schedule needs at least one timestep"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(config_err!(
            "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
        ));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut acc = 1.0;
    let alphas_bar = betas
        .iter()
        .map(|b| {
            acc *= 1.0 - b;
            acc
        })
        .collect();
    Ok(NoiseSchedule { betas, alphas_bar })
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_bar[t]
    }

    /// `alpha_bar` one step earlier; 1 before the first step.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_bar[t - 1]
        }
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t < self.len() {
            Ok(())
        } else {
            Err(contract_err!("timestep {t} outside 0..{}", self.len()))
        }
    }
}

/// `z_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_noise(x0: &Tensor, eps: &Tensor, schedule: &NoiseSchedule, t: usize) -> Result<Tensor> {
    schedule.check_timestep(t)?;
    if x0.shape() != eps.shape() {
        return Err(shape_err!(
            "clean sample {:?} and noise {:?} differ in shape",
            x0.shape(),
            eps.shape()
        ));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_with(eps, |x, e| a * x + b * e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_half_beta() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alphas_bar(), &[0.5]);
    }

    #[test]
    fn ten_steps_against_product_oracle() {
        let s = make_schedule(10, 1e-4, 0.02).unwrap();
        for t in 0..10 {
            let mut prod = 1.0;
            for i in 0..=t {
                let beta = 1e-4 + (0.02 - 1e-4) * i as f64 / 9.0;
                prod *= 1.0 - beta;
            }
            assert!((s.alpha_bar(t) - prod).abs() < 1e-12);
        }
        assert!(s.alphas_bar().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn invalid_schedules() {
        assert!(make_schedule(0, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 0.03, 0.02).is_err());
        assert!(make_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn forward_noise_endpoints() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        let x = Tensor::vector(vec![2.0]);
        let e = Tensor::vector(vec![0.0]);
        let z = forward_noise(&x, &e, &s, 0).unwrap();
        assert!((z.data()[0] - 2.0 * 0.5f64.sqrt()).abs() < 1e-15);
        assert!(forward_noise(&x, &e, &s, 1).is_err());
    }
}
