//! Fusion of the strength maps and per-image refinement of the fusion
//! weights.
//!
//! The fused map is `𝓜(ω) = Σₖ softmax(ω)ₖ · Mᵏ`. Refinement takes one
//! gradient step on
//!
//! ```text
//! L_𝓜(ω) = A·(ℓ′ − ℓ)² + ‖𝓜(ω) ⊙ δ‖₂
//! ℓ′ = L_SP(x + 𝓜′ ⊙ δ),  ℓ = L_SP(x + 𝓜(ω) ⊙ δ)
//! ```
//!
//! where `𝓜′` is the plain average fixed at initialization, keeping the
//! refined map consistent with the protection effect of the initial one
//! while shrinking the modulated perturbation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{GuidanceOracle, LspSpec};
use crate::tensor::{Plane, Tensor};

pub const DEFAULT_IWR_STEP: f64 = 1e-2;
pub const DEFAULT_IWR_AMPLIFICATION: f64 = 5e7;

/// Logits `ω` of the fusion weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FusionWeights {
    omega: Vec<f64>,
}

impl FusionWeights {
    /// `ω = (1/K)·1`.
    pub fn uniform(k: usize) -> Self {
        FusionWeights {
            omega: vec![1.0 / k as f64; k],
        }
    }

    pub fn from_omega(omega: Vec<f64>) -> Result<Self> {
        if omega.is_empty() || omega.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("fusion logits must be finite and non-empty"));
        }
        Ok(FusionWeights { omega })
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn softmax(&self) -> Vec<f64> {
        let m = self.omega.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.omega.iter().map(|w| (w - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }
}

/// Convex combination of `maps`; `None` weights each map `1/K`.
pub fn fuse_maps(maps: &[Plane], weights: Option<&FusionWeights>) -> Result<Plane> {
    let first = maps.first().ok_or_else(|| Error::input("no maps to fuse"))?;
    if let Some(m) = maps.iter().find(|m| !m.same_extent(first)) {
        return Err(Error::input(format!(
            "map extents differ: {}x{} vs {}x{}",
            first.height(),
            first.width(),
            m.height(),
            m.width()
        )));
    }
    let coeffs = match weights {
        Some(w) if w.len() != maps.len() => {
            return Err(Error::input(format!("{} weights for {} maps", w.len(), maps.len())));
        }
        Some(w) => w.softmax(),
        None => vec![1.0 / maps.len() as f64; maps.len()],
    };
    let mut out = Plane::zeros(first.height(), first.width());
    for (m, c) in maps.iter().zip(&coeffs) {
        for (o, v) in out.data_mut().iter_mut().zip(m.data()) {
            *o += c * v;
        }
    }
    Ok(out)
}

/// Result of one refinement step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IwrStep {
    /// `L_𝓜` before the update.
    pub loss: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FusionState {
    components: Vec<Plane>,
    initial: Plane,
    current: Plane,
    weights: FusionWeights,
    pub step_size: f64,
    pub amplification: f64,
    log: String,
}

impl FusionState {
    pub fn new(components: Vec<Plane>, step_size: f64, amplification: f64) -> Result<Self> {
        let initial = fuse_maps(&components, None)?;
        let weights = FusionWeights::uniform(components.len());
        let current = fuse_maps(&components, Some(&weights))?;
        let mut state = FusionState {
            components,
            initial,
            current,
            weights,
            step_size,
            amplification,
            log: String::new(),
        };
        state.log_weights();
        Ok(state)
    }

    pub fn components(&self) -> &[Plane] {
        &self.components
    }

    /// `𝓜′`
    pub fn initial_map(&self) -> &Plane {
        &self.initial
    }

    /// `𝓜(ω)`
    pub fn current_map(&self) -> &Plane {
        &self.current
    }

    pub fn weights(&self) -> &FusionWeights {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: FusionWeights) -> Result<()> {
        self.current = fuse_maps(&self.components, Some(&weights))?;
        self.weights = weights;
        Ok(())
    }

    /// One line per weight change: `ω₁ … ω_K` as space-separated values.
    pub fn weight_log(&self) -> &str {
        &self.log
    }

    fn log_weights(&mut self) {
        let line: Vec<String> = self.weights.omega().iter().map(|w| format!("{w:.12e}")).collect();
        let _ = writeln!(self.log, "{}", line.join(" "));
    }

    /// `L_𝓜` at arbitrary logits. Used for gradient checks.
    pub fn objective<O: GuidanceOracle + ?Sized>(
        &self,
        omega: &FusionWeights,
        x: &Tensor,
        delta: &Tensor,
        spec: &LspSpec<'_>,
        oracle: &mut O,
    ) -> Result<f64> {
        let map = fuse_maps(&self.components, Some(omega))?;
        let l0 = oracle.eval_lsp(&x.add(&delta.modulate(&self.initial)), spec)?.loss;
        let md = delta.modulate(&map);
        let l = oracle.eval_lsp(&x.add(&md), spec)?.loss;
        Ok(self.amplification * (l0 - l).powi(2) + md.norm_sq().sqrt())
    }

    /// `L_𝓜` and `∇_ω L_𝓜` at the current logits.
    pub fn objective_and_gradient<O: GuidanceOracle + ?Sized>(
        &self,
        x: &Tensor,
        delta: &Tensor,
        spec: &LspSpec<'_>,
        oracle: &mut O,
    ) -> Result<IwrStep> {
        x.ensure_same_shape(delta, "refinement perturbation")?;
        x.ensure_plane_extent(&self.current, "fused map")?;
        let k = self.components.len();
        if delta.max_abs() == 0.0 {
            return Ok(IwrStep {
                loss: 0.0,
                grad: vec![0.0; k],
            });
        }
        let l0 = oracle.eval_lsp(&x.add(&delta.modulate(&self.initial)), spec)?.loss;
        let md = delta.modulate(&self.current);
        let r = oracle.eval_lsp(&x.add(&md), spec)?;
        let norm = md.norm_sq().sqrt();
        let gap = l0 - r.loss;
        let loss = self.amplification * gap * gap + norm;

        let c = x.channels();
        let s = self.weights.softmax();
        let mut g_s = vec![0.0; k];
        for (kk, comp) in self.components.iter().enumerate() {
            let mut dl = 0.0;
            let mut dn = 0.0;
            for (j, (&gj, &dj)) in r.grad.data().iter().zip(delta.data()).enumerate() {
                let p = j / c;
                let mk = comp.data()[p];
                dl += gj * mk * dj;
                dn += self.current.data()[p] * dj * dj * mk;
            }
            g_s[kk] = -2.0 * self.amplification * gap * dl + if norm > 0.0 { dn / norm } else { 0.0 };
        }
        let mean: f64 = s.iter().zip(&g_s).map(|(a, b)| a * b).sum();
        let grad = s.iter().zip(&g_s).map(|(sk, gk)| sk * (gk - mean)).collect();
        Ok(IwrStep { loss, grad })
    }

    /// One gradient-descent step on `ω`.
    pub fn iwr_update<O: GuidanceOracle + ?Sized>(
        &mut self,
        x: &Tensor,
        delta: &Tensor,
        spec: &LspSpec<'_>,
        oracle: &mut O,
    ) -> Result<IwrStep> {
        let step = self.objective_and_gradient(x, delta, spec, oracle)?;
        if step.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidOracle("refinement gradient is not finite".into()));
        }
        let omega: Vec<f64> = self
            .weights
            .omega()
            .iter()
            .zip(&step.grad)
            .map(|(w, g)| w - self.step_size * g)
            .collect();
        self.set_weights(FusionWeights::from_omega(omega)?)?;
        self.log_weights();
        Ok(step)
    }
}
