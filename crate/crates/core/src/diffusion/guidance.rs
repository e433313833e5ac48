//! Classifier-free guidance over nested conditions.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Guidance weights for the image, text and visual-prompt terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceScales {
    pub image: f64,
    pub text: f64,
    pub visual: f64,
}

impl Default for GuidanceScales {
    fn default() -> Self {
        Self {
            image: 1.5,
            text: 7.0,
            visual: 1.0,
        }
    }
}

impl GuidanceScales {
    pub fn unit() -> Self {
        Self {
            image: 1.0,
            text: 1.0,
            visual: 1.0,
        }
    }

    pub fn is_unit(&self) -> bool {
        *self == Self::unit()
    }
}

/// `e_null + s_I (e_I - e_null) + s_T (e_IT - e_I) + s_V (e_ITV - e_IT)`.
///
/// Without `e_itv` the visual term is omitted (two-condition mode).
pub fn cfg_compose(
    e_null: &Tensor,
    e_i: &Tensor,
    e_it: &Tensor,
    e_itv: Option<&Tensor>,
    scales: &GuidanceScales,
) -> Result<Tensor> {
    let shape = e_null.shape();
    for t in [Some(e_i), Some(e_it), e_itv].into_iter().flatten() {
        if t.shape() != shape {
            return Err(shape_err!(
                "guidance operands differ in shape: {:?} vs {:?}",
                shape,
                t.shape()
            ));
        }
    }
    let mut out = Vec::with_capacity(e_null.numel());
    for k in 0..e_null.numel() {
        let (n, i, it) = (e_null.data()[k], e_i.data()[k], e_it.data()[k]);
        let mut v = n + scales.image * (i - n) + scales.text * (it - i);
        if let Some(itv) = e_itv {
            v += scales.visual * (itv.data()[k] - it);
        }
        out.push(v);
    }
    Tensor::new(shape, out)
}
