//! Imperceptibility constraints and the combined objective.
//!
//! The objective is minimized:
//!
//! ```text
//! total = −L_SP + w_p·penalty(S ⊙ δ) + λ_L·L_L + λ_LP·L_LP + λ_C·L_C
//! ```
//!
//! so a descent step on `total` ascends the style-protection loss while
//! descending the penalty and bank terms. Terms with zero weight are not
//! evaluated and read as zero in [`LossTerms`].

mod clip;
mod lowpass;
mod lpips;
mod penalty;
pub mod wavelet;

use serde::{Deserialize, Serialize};

pub use clip::{clip_alignment_loss, cosine_alignment};
pub use lowpass::masked_lowpass_loss;
pub use lpips::{masked_lpips_loss, ConvFeatureExtractor, ConvLayer, FeatureExtractor, SURROGATE_LAYER_CHANNELS};
pub use penalty::{linf_penalty, PenaltyConfig, PenaltyKind};
pub use wavelet::{dwt2, dwt_lowpass, idwt2, Subbands, WaveletFilterPair};

use crate::error::{Error, Result};
use crate::oracle::{GuidanceOracle, LspSpec};
use crate::tensor::{Plane, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintWeights {
    pub lambda_l: f64,
    pub lambda_lp: f64,
    pub lambda_c: f64,
    /// Multiplies the three bank weights whenever `λ_SD > 0`.
    pub unet_scale: f64,
}

impl Default for ConstraintWeights {
    fn default() -> Self {
        ConstraintWeights {
            lambda_l: 5.0,
            lambda_lp: 10.0,
            lambda_c: 0.1,
            unet_scale: 0.05,
        }
    }
}

impl ConstraintWeights {
    pub const ZERO: ConstraintWeights = ConstraintWeights {
        lambda_l: 0.0,
        lambda_lp: 0.0,
        lambda_c: 0.0,
        unet_scale: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_l", self.lambda_l),
            ("lambda_lp", self.lambda_lp),
            ("lambda_c", self.lambda_c),
            ("unet_scale", self.unet_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// `(λ_L, λ_LP, λ_C)` after the diffusion-term scaling.
    pub fn effective(&self, lambda_sd: f64) -> (f64, f64, f64) {
        let k = if lambda_sd > 0.0 { self.unet_scale } else { 1.0 };
        (self.lambda_l * k, self.lambda_lp * k, self.lambda_c * k)
    }
}

/// Unweighted value of every term, as logged per step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub lsp: f64,
    pub penalty: f64,
    pub lpips: f64,
    pub lowpass: f64,
    pub clip: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub terms: LossTerms,
    /// `∂ total / ∂x̂`
    pub grad: Tensor,
}

/// Everything [`total_loss`] needs besides the evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    /// Clean image.
    pub x: &'a Tensor,
    pub target: &'a Tensor,
    /// Mean sensitivity map, used by the penalty and all masked terms.
    pub sensitivity: &'a Plane,
    pub lambda_e: f64,
    pub lambda_sd: f64,
    pub weights: ConstraintWeights,
    pub penalty: PenaltyConfig,
    pub wavelet: &'a WaveletFilterPair,
}

impl Objective<'_> {
    pub fn lsp_spec(&self, seed: u64) -> LspSpec<'_> {
        LspSpec {
            lambda_e: self.lambda_e,
            lambda_sd: self.lambda_sd,
            target: self.target,
            seed,
        }
    }
}

/// Evaluate the combined objective at `x_hat`. `seed` drives any stochastic
/// draws inside the oracle's style-protection loss.
pub fn total_loss<O: GuidanceOracle + ?Sized>(
    obj: &Objective<'_>,
    x_hat: &Tensor,
    seed: u64,
    oracle: &mut O,
) -> Result<TotalLoss> {
    obj.x.ensure_same_shape(x_hat, "objective")?;
    obj.x.ensure_plane_extent(obj.sensitivity, "sensitivity map")?;
    let lsp = oracle.eval_lsp(x_hat, &obj.lsp_spec(seed))?;
    let mut terms = LossTerms {
        lsp: lsp.loss,
        ..Default::default()
    };
    let mut grad = lsp.grad.scale(-1.0);
    let mut total = -lsp.loss;

    let pw = obj.penalty.weight;
    if pw > 0.0 {
        let delta = x_hat.sub(obj.x);
        let p = linf_penalty(&delta, obj.sensitivity, &obj.penalty)?;
        terms.penalty = p.loss;
        total += pw * p.loss;
        grad.axpy(pw, &p.grad);
    }

    let (wl, wlp, wc) = obj.weights.effective(obj.lambda_sd);
    if wl > 0.0 {
        let r = oracle.masked_lpips(obj.x, x_hat, obj.sensitivity)?;
        terms.lpips = r.loss;
        total += wl * r.loss;
        grad.axpy(wl, &r.grad);
    }
    if wlp > 0.0 {
        let r = masked_lowpass_loss(obj.x, x_hat, obj.sensitivity, obj.wavelet)?;
        terms.lowpass = r.loss;
        total += wlp * r.loss;
        grad.axpy(wlp, &r.grad);
    }
    if wc > 0.0 {
        let r = clip_alignment_loss(x_hat, oracle)?;
        terms.clip = r.loss;
        total += wc * r.loss;
        grad.axpy(wc, &r.grad);
    }
    terms.total = total;
    Ok(TotalLoss { terms, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diffusion_term_scales_bank() {
        let w = ConstraintWeights::default();
        assert_eq!(w.effective(0.0), (5.0, 10.0, 0.1));
        let (a, b, c) = w.effective(1.0);
        assert!((a - 0.25).abs() < 1e-15 && (b - 0.5).abs() < 1e-15 && (c - 0.005).abs() < 1e-15);
    }

    #[test]
    fn negative_weight_rejected() {
        let w = ConstraintWeights {
            lambda_c: -0.1,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
