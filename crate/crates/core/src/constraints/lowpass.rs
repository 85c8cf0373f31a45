use super::wavelet::{lowpass_plane, lowpass_plane_adjoint, WaveletFilterPair};
use crate::error::Result;
use crate::oracle::LossGrad;
use crate::tensor::{Plane, Tensor};

/// `(1/d) Σᵢ Sᵢ ‖LP(x)ᵢ − LP(x̂)ᵢ‖²`, where `i` runs over the `d` pixels and
/// the norm is over channels. The gradient is with respect to `x̂`.
pub fn masked_lowpass_loss(
    x: &Tensor,
    x_hat: &Tensor,
    mask: &Plane,
    filt: &WaveletFilterPair,
) -> Result<LossGrad> {
    x.ensure_same_shape(x_hat, "masked low-pass")?;
    x.ensure_plane_extent(mask, "masked low-pass mask")?;
    let d = x.pixels() as f64;
    // LP is linear, so LP(x̂) − LP(x) = LP(x̂ − x).
    let diff = x_hat.sub(x);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(x.height(), x.width(), x.channels());
    for c in 0..x.channels() {
        let r = lowpass_plane(&diff.channel(c), filt);
        let weighted = Plane::from_vec(
            r.height(),
            r.width(),
            r.data().iter().zip(mask.data()).map(|(v, m)| m * v).collect(),
        )?;
        loss += r.data().iter().zip(weighted.data()).map(|(v, w)| v * w).sum::<f64>();
        let back = lowpass_plane_adjoint(&weighted, filt).map(|v| 2.0 * v / d);
        grad.set_channel(c, &back);
    }
    Ok(LossGrad { loss: loss / d, grad })
}
