//! The guidance-oracle contract.
//!
//! Every neural quantity the protection loop needs comes through
//! [`GuidanceOracle`]: the mixed style-protection loss and its gradient, a
//! partial diffusion roundtrip, a spatial perceptual distance, the
//! text-alignment loss and the masked feature-distance loss. Two
//! implementations ship: [`SurrogateOracle`], an analytic stand-in for
//! tests and desk-scale runs, and [`RemoteOracle`], a client for a worker
//! process speaking the [`wire`] protocol.

mod diagnostics;
mod remote;
mod surrogate;
pub mod wire;

use serde::{Deserialize, Serialize};

pub use diagnostics::{spot_check_lsp_gradient, GradientSpot};
pub use remote::{Endpoint, RemoteOracle};
pub use surrogate::{HashProjection, SurrogateOracle, SURROGATE_SEED};
pub(crate) use surrogate::splitmix64;

use crate::error::{Error, Result};
use crate::tensor::{Plane, Tensor};

/// Prompt for the text-alignment term.
pub const CLIP_PROMPT: &str = "Noise-free image";

/// A scalar loss and its gradient with respect to the image argument.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Tensor,
}

impl LossGrad {
    pub fn zero_like(t: &Tensor) -> Self {
        LossGrad {
            loss: 0.0,
            grad: Tensor::zeros(t.height(), t.width(), t.channels()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub lsp_grad: bool,
    pub lpips_features: bool,
    pub clip_embed: bool,
    pub diffusion_roundtrip: bool,
    pub spatial_distance: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities {
        lsp_grad: true,
        lpips_features: true,
        clip_embed: true,
        diffusion_roundtrip: true,
        spatial_distance: true,
    };
}

/// Arguments for the style-protection loss
/// `L_SP = -λ_E · ‖E(x̂) − E(y)‖² + λ_SD · L_SD(E(x̂))`.
#[derive(Debug, Clone, Copy)]
pub struct LspSpec<'a> {
    pub lambda_e: f64,
    pub lambda_sd: f64,
    /// Target image `y` for the encoder term.
    pub target: &'a Tensor,
    /// Seed for any timestep/noise draws in the diffusion term.
    pub seed: u64,
}

impl LspSpec<'_> {
    pub fn validate(&self, x_hat: &Tensor) -> Result<()> {
        if !(self.lambda_e >= 0.0 && self.lambda_sd >= 0.0) {
            return Err(Error::config("λ_E and λ_SD must be non-negative"));
        }
        if self.lambda_e == 0.0 && self.lambda_sd == 0.0 {
            return Err(Error::config("λ_E and λ_SD cannot both be zero"));
        }
        if self.lambda_e > 0.0 {
            x_hat.ensure_same_shape(self.target, "L_SP target")?;
        }
        Ok(())
    }
}

/// Source of loss values, gradients and diffusion/perceptual services.
///
/// Methods take `&mut self` so that implementations can hold connections
/// and caches. Unimplemented capabilities return [`Error::Unsupported`].
pub trait GuidanceOracle {
    fn capabilities(&self) -> Capabilities;

    /// Style-protection loss and `∇_{x̂} L_SP`.
    fn eval_lsp(&mut self, x_hat: &Tensor, spec: &LspSpec<'_>) -> Result<LossGrad>;

    /// Encode, `t` forward noise steps out of a `total`-step schedule, `t`
    /// reverse steps, decode.
    fn diffusion_roundtrip(&mut self, _x: &Tensor, _t: usize, _total: usize, _seed: u64) -> Result<Tensor> {
        Err(Error::Unsupported("diffusion_roundtrip"))
    }

    /// Non-negative per-pixel perceptual distance at input resolution.
    fn spatial_distance(&mut self, _a: &Tensor, _b: &Tensor) -> Result<Plane> {
        Err(Error::Unsupported("spatial_distance"))
    }

    /// `-cos(image_embedding(x̂), text_embedding(prompt))` and its gradient.
    fn clip_align(&mut self, _x_hat: &Tensor, _prompt: &str) -> Result<LossGrad> {
        Err(Error::Unsupported("clip_align"))
    }

    /// Masked multi-layer feature distance between `x` and `x̂`, gradient
    /// with respect to `x̂`.
    fn masked_lpips(&mut self, _x: &Tensor, _x_hat: &Tensor, _mask: &Plane) -> Result<LossGrad> {
        Err(Error::Unsupported("lpips_masked"))
    }
}

impl<O: GuidanceOracle + ?Sized> GuidanceOracle for Box<O> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn eval_lsp(&mut self, x_hat: &Tensor, spec: &LspSpec<'_>) -> Result<LossGrad> {
        (**self).eval_lsp(x_hat, spec)
    }

    fn diffusion_roundtrip(&mut self, x: &Tensor, t: usize, total: usize, seed: u64) -> Result<Tensor> {
        (**self).diffusion_roundtrip(x, t, total, seed)
    }

    fn spatial_distance(&mut self, a: &Tensor, b: &Tensor) -> Result<Plane> {
        (**self).spatial_distance(a, b)
    }

    fn clip_align(&mut self, x_hat: &Tensor, prompt: &str) -> Result<LossGrad> {
        (**self).clip_align(x_hat, prompt)
    }

    fn masked_lpips(&mut self, x: &Tensor, x_hat: &Tensor, mask: &Plane) -> Result<LossGrad> {
        (**self).masked_lpips(x, x_hat, mask)
    }
}

pub(crate) fn check_finite(lg: LossGrad, what: &str) -> Result<LossGrad> {
    if lg.loss.is_finite() && lg.grad.all_finite() {
        Ok(lg)
    } else {
        Err(Error::InvalidOracle(format!("{what} returned non-finite values")))
    }
}

pub(crate) fn validate_diffusion_steps(t: usize, total: usize) -> Result<()> {
    if t == 0 || t > total {
        return Err(Error::config(format!(
            "diffusion roundtrip needs 0 < t <= T, got t={t}, T={total}"
        )));
    }
    Ok(())
}
