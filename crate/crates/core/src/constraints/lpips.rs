//! Masked multi-layer feature distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::oracle::LossGrad;
use crate::tensor::{sgn, Plane, Tensor};

/// A differentiable stack of spatial feature maps.
pub trait FeatureExtractor {
    /// Feature tensors for every layer, shallowest first.
    fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>>;

    /// Per-channel weights `w_l` of layer `layer`.
    fn channel_weights(&self, layer: usize) -> &[f64];

    /// Vector-Jacobian product: given `∂L/∂φ_l(x)` for every layer, return
    /// `∂L/∂x`.
    fn backward(&self, x: &Tensor, grads: &[Tensor]) -> Result<Tensor>;
}

/// 3×3 convolution, stride 2, zero padding 1, followed by `|·|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][ky][kx]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * 3 + ky) * 3 + kx]
    }

    pub fn output_extent(h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(2), w.div_ceil(2))
    }

    /// Pre-activation output.
    fn linear(&self, x: &Tensor) -> Tensor {
        let (oh, ow) = Self::output_extent(x.height(), x.width());
        let mut out = Tensor::zeros(oh, ow, self.out_channels);
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..self.out_channels {
                    let mut s = self.bias[o];
                    for ky in 0..3 {
                        let Some(iy) = (2 * oy + ky).checked_sub(1).filter(|&v| v < x.height()) else {
                            continue;
                        };
                        for kx in 0..3 {
                            let Some(ix) = (2 * ox + kx).checked_sub(1).filter(|&v| v < x.width()) else {
                                continue;
                            };
                            for i in 0..self.in_channels {
                                s += self.weight(o, i, ky, kx) * x.get(iy, ix, i);
                            }
                        }
                    }
                    out.set(oy, ox, o, s);
                }
            }
        }
        out
    }

    /// Adjoint of [`linear`](Self::linear) without the bias.
    fn linear_adjoint(&self, g: &Tensor, h: usize, w: usize) -> Tensor {
        let mut out = Tensor::zeros(h, w, self.in_channels);
        for oy in 0..g.height() {
            for ox in 0..g.width() {
                for o in 0..self.out_channels {
                    let v = g.get(oy, ox, o);
                    if v == 0.0 {
                        continue;
                    }
                    for ky in 0..3 {
                        let Some(iy) = (2 * oy + ky).checked_sub(1).filter(|&q| q < h) else {
                            continue;
                        };
                        for kx in 0..3 {
                            let Some(ix) = (2 * ox + kx).checked_sub(1).filter(|&q| q < w) else {
                                continue;
                            };
                            for i in 0..self.in_channels {
                                let idx = out.index(iy, ix, i);
                                out.data_mut()[idx] += self.weight(o, i, ky, kx) * v;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Seeded convolution stack standing in for a perceptual network in tests
/// and surrogate runs. It is not a trained perceptual metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFeatureExtractor {
    pub layers: Vec<ConvLayer>,
    weights: Vec<Vec<f64>>,
}

pub const SURROGATE_LAYER_CHANNELS: [usize; 2] = [8, 16];

impl ConvFeatureExtractor {
    /// Two layers with 8 and 16 channels, uniform weights scaled by fan-in,
    /// channel weights all one.
    pub fn seeded(in_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut c_in = in_channels;
        for &c_out in &SURROGATE_LAYER_CHANNELS {
            let bound = (3.0 / (9 * c_in) as f64).sqrt();
            let weights = (0..c_out * c_in * 9).map(|_| rng.random_range(-bound..bound)).collect();
            let bias = (0..c_out).map(|_| rng.random_range(-0.1..0.1)).collect();
            layers.push(ConvLayer {
                in_channels: c_in,
                out_channels: c_out,
                weights,
                bias,
            });
            c_in = c_out;
        }
        let weights = SURROGATE_LAYER_CHANNELS.iter().map(|&c| vec![1.0; c]).collect();
        ConvFeatureExtractor { layers, weights }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = self.layers.first().map_or(0, |l| l.in_channels);
        if x.channels() != want {
            return Err(Error::input(format!(
                "feature extractor expects {want} channels, got {}",
                x.channels()
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer.
    fn pre_activations(&self, x: &Tensor) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let pre = layer.linear(&cur);
            cur = pre.map(f64::abs);
            out.push(pre);
        }
        out
    }
}

impl FeatureExtractor for ConvFeatureExtractor {
    fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        Ok(self.pre_activations(x).into_iter().map(|p| p.map(f64::abs)).collect())
    }

    fn channel_weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    fn backward(&self, x: &Tensor, grads: &[Tensor]) -> Result<Tensor> {
        self.check_input(x)?;
        if grads.len() != self.layers.len() {
            return Err(Error::input("one gradient per layer required"));
        }
        let pre = self.pre_activations(x);
        let mut carry: Option<Tensor> = None;
        for l in (0..self.layers.len()).rev() {
            let mut g = grads[l].clone();
            if let Some(c) = carry.take() {
                g.axpy(1.0, &c);
            }
            let g_pre = g.zip_map(&pre[l], |gv, p| gv * sgn(p));
            let (h, w) = if l == 0 {
                (x.height(), x.width())
            } else {
                (pre[l - 1].height(), pre[l - 1].width())
            };
            carry = Some(self.layers[l].linear_adjoint(&g_pre, h, w));
        }
        Ok(carry.expect("at least one layer"))
    }
}

/// `Σ_l (1/d_l) Σᵢ m_l,ᵢ ‖w_l ⊙ (φ_l(x)ᵢ − φ_l(x̂)ᵢ)‖²`, with the mask
/// area-averaged to each layer's resolution and `d_l` that layer's pixel
/// count. The gradient is with respect to `x̂`.
pub fn masked_lpips_loss<F: FeatureExtractor + ?Sized>(
    x: &Tensor,
    x_hat: &Tensor,
    mask: &Plane,
    feat: &F,
) -> Result<LossGrad> {
    x.ensure_same_shape(x_hat, "masked feature distance")?;
    x.ensure_plane_extent(mask, "masked feature distance mask")?;
    let fx = feat.forward(x)?;
    let fh = feat.forward(x_hat)?;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(fx.len());
    for (l, (a, b)) in fx.iter().zip(&fh).enumerate() {
        a.ensure_same_shape(b, "feature layer")?;
        let w = feat.channel_weights(l);
        let m = mask.area_resample(a.height(), a.width());
        let d = a.pixels() as f64;
        let c = a.channels();
        let mut g = Tensor::zeros(a.height(), a.width(), c);
        for (p, &mi) in m.data().iter().enumerate() {
            for ch in 0..c {
                let k = p * c + ch;
                let diff = a.data()[k] - b.data()[k];
                let w2 = w[ch] * w[ch];
                loss += mi * w2 * diff * diff / d;
                g.data_mut()[k] = -2.0 * mi * w2 * diff / d;
            }
        }
        grads.push(g);
    }
    let grad = feat.backward(x_hat, &grads)?;
    Ok(LossGrad { loss, grad })
}
