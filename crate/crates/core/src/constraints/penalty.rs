use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::LossGrad;
use crate::tensor::{sgn, Plane, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `τ·log Σ exp(vⱼ/τ) − τ·log n`
    #[default]
    SmoothMax,
    /// `max vⱼ`, subgradient at the first argmax.
    ExactMax,
}

/// L∞ penalty on the sensitivity-weighted perturbation `S ⊙ δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    pub weight: f64,
    pub kind: PenaltyKind,
    pub temperature: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            weight: 1.0,
            kind: PenaltyKind::SmoothMax,
            temperature: 0.01,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::config("penalty weight must be finite and non-negative"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("penalty temperature must be positive"));
        }
        Ok(())
    }
}

/// Penalty value and gradient with respect to `δ`. Each element of `δ` is
/// weighted by the mask value of its pixel. The smooth form is zero at
/// `δ = 0` and never negative.
pub fn linf_penalty(delta: &Tensor, mask: &Plane, cfg: &PenaltyConfig) -> Result<LossGrad> {
    delta.ensure_plane_extent(mask, "penalty mask")?;
    let c = delta.channels();
    let weight = |j: usize| mask.data()[j / c];
    let v: Vec<f64> = delta.data().iter().enumerate().map(|(j, d)| (weight(j) * d).abs()).collect();
    let mut grad = Tensor::zeros(delta.height(), delta.width(), c);
    if v.is_empty() {
        return Ok(LossGrad { loss: 0.0, grad });
    }
    let (argmax, vmax) = v
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, x)| if x > best.1 { (j, x) } else { best });
    let loss = match cfg.kind {
        PenaltyKind::ExactMax => {
            grad.data_mut()[argmax] = weight(argmax) * sgn(delta.data()[argmax]);
            vmax
        }
        PenaltyKind::SmoothMax => {
            let tau = cfg.temperature;
            let e: Vec<f64> = v.iter().map(|x| ((x - vmax) / tau).exp()).collect();
            let z: f64 = e.iter().sum();
            for (j, g) in grad.data_mut().iter_mut().enumerate() {
                *g = e[j] / z * weight(j) * sgn(delta.data()[j]);
            }
            (vmax + tau * z.ln() - tau * (v.len() as f64).ln()).max(0.0)
        }
    };
    Ok(LossGrad { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_zero_perturbation() {
        let d = Tensor::zeros(4, 4, 3);
        let m = Plane::filled(4, 4, 0.7);
        for kind in [PenaltyKind::SmoothMax, PenaltyKind::ExactMax] {
            let cfg = PenaltyConfig { kind, ..Default::default() };
            let r = linf_penalty(&d, &m, &cfg).unwrap();
            assert_eq!(r.loss, 0.0);
            assert_eq!(r.grad.max_abs(), 0.0);
        }
    }

    #[test]
    fn smooth_bounds_exact() {
        let d = Tensor::from_fn(5, 5, 1, |y, x, _| ((y * 5 + x) as f64 * 0.7).sin() * 0.03);
        let m = Plane::from_fn(5, 5, |y, _| y as f64 / 4.0);
        let smooth = linf_penalty(&d, &m, &PenaltyConfig::default()).unwrap().loss;
        let exact = linf_penalty(
            &d,
            &m,
            &PenaltyConfig {
                kind: PenaltyKind::ExactMax,
                ..Default::default()
            },
        )
        .unwrap()
        .loss;
        let n = 25f64;
        assert!(smooth <= exact + 1e-15);
        assert!(smooth >= exact - 0.01 * n.ln() - 1e-15);
        assert!(smooth >= 0.0);
    }

    #[test]
    fn exact_gradient_at_argmax() {
        let mut d = Tensor::zeros(2, 2, 1);
        d.set(1, 0, 0, -0.5);
        d.set(0, 1, 0, 0.2);
        let m = Plane::filled(2, 2, 2.0);
        let cfg = PenaltyConfig {
            kind: PenaltyKind::ExactMax,
            ..Default::default()
        };
        let r = linf_penalty(&d, &m, &cfg).unwrap();
        assert_eq!(r.loss, 1.0);
        assert_eq!(r.grad.get(1, 0, 0), -2.0);
        assert_eq!(r.grad.get(0, 1, 0), 0.0);
    }
}
