//! The protection loop.
//!
//! Each iteration takes a sign step against the combined objective, scales
//! it per pixel by the fused strength map and the difficulty map, and
//! projects back into the L∞ ball around the clean image. Every `interval`
//! steps the fusion weights get one refinement step and the difficulty map
//! is recomputed from a diffusion roundtrip of the clean and current images.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::constraints::{total_loss, ConstraintWeights, LossTerms, Objective, PenaltyConfig, TotalLoss, WaveletFilterPair};
use crate::error::{Error, Result};
use crate::fusion::{FusionState, FusionWeights, DEFAULT_IWR_AMPLIFICATION, DEFAULT_IWR_STEP};
use crate::image::{to_luminance, ImageTensor};
use crate::jnd::{PerceptualMaps, DEFAULT_PPD};
use crate::oracle::{splitmix64, GuidanceOracle};
use crate::tensor::{sgn, Plane, Tensor};

/// Baseline objectives, as `(λ_E, λ_SD)` mixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Encoder attack toward the target.
    #[default]
    Photoguard,
    /// Diffusion-loss ascent.
    Advdm,
    Mist,
    AntiDb,
    DiffProtect,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Photoguard, Preset::Advdm, Preset::Mist, Preset::AntiDb, Preset::DiffProtect];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Photoguard => "photoguard",
            Preset::Advdm => "advdm",
            Preset::Mist => "mist",
            Preset::AntiDb => "anti-db",
            Preset::DiffProtect => "diff-protect",
        }
    }

    /// `(λ_E, λ_SD)`
    pub fn lambdas(self) -> (f64, f64) {
        match self {
            Preset::Photoguard => (1.0, 0.0),
            Preset::Advdm => (0.0, 1.0),
            Preset::Mist | Preset::AntiDb | Preset::DiffProtect => (1.0, 1.0),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown preset `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtectionConfig {
    /// L∞ budget in [0,1] pixel units.
    pub eta: f64,
    pub alpha: f64,
    pub steps: usize,
    /// Refinement and difficulty interval `P`.
    pub interval: usize,
    pub preset: Preset,
    pub weights: ConstraintWeights,
    pub penalty: PenaltyConfig,
    /// Modulate steps by the fused strength map. Off means a map of ones.
    pub perceptual_map: bool,
    pub iwr: bool,
    pub dap: bool,
    pub iwr_step: f64,
    pub iwr_amplification: f64,
    /// Lower end `m_lo` of the difficulty map.
    pub dap_floor: f64,
    pub dap_t: usize,
    pub dap_total: usize,
    pub ppd: f64,
    pub wavelet: String,
    pub seed: u64,
}

impl Default for ProtectionConfig {
    fn default() -> Self {
        ProtectionConfig {
            eta: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            steps: 100,
            interval: 4,
            preset: Preset::Photoguard,
            weights: ConstraintWeights::default(),
            penalty: PenaltyConfig::default(),
            perceptual_map: true,
            iwr: true,
            dap: true,
            iwr_step: DEFAULT_IWR_STEP,
            iwr_amplification: DEFAULT_IWR_AMPLIFICATION,
            dap_floor: 0.5,
            dap_t: 5,
            dap_total: 25,
            ppd: DEFAULT_PPD,
            wavelet: "haar".into(),
            seed: 0,
        }
    }
}

impl ProtectionConfig {
    /// Plain sign-gradient ascent on the style-protection loss: no maps, no
    /// refinement, no difficulty map, no penalty or bank terms.
    pub fn plain(mut self) -> Self {
        self.perceptual_map = false;
        self.iwr = false;
        self.dap = false;
        self.weights = ConstraintWeights::ZERO;
        self.penalty.weight = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("eta", self.eta)?;
        positive("alpha", self.alpha)?;
        positive("ppd", self.ppd)?;
        if !(self.iwr_step >= 0.0 && self.iwr_step.is_finite()) {
            return Err(Error::config("iwr_step must be finite and non-negative"));
        }
        if !(self.iwr_amplification >= 0.0 && self.iwr_amplification.is_finite()) {
            return Err(Error::config("iwr_amplification must be finite and non-negative"));
        }
        if self.interval == 0 {
            return Err(Error::config("interval must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.dap_floor) {
            return Err(Error::config(format!("dap_floor must lie in [0,1], got {}", self.dap_floor)));
        }
        if self.dap_t == 0 || self.dap_t > self.dap_total {
            return Err(Error::config(format!(
                "need 0 < dap_t <= dap_total, got {} and {}",
                self.dap_t, self.dap_total
            )));
        }
        self.weights.validate()?;
        self.penalty.validate()?;
        WaveletFilterPair::by_name(&self.wavelet)?;
        Ok(())
    }

    pub fn lambdas(&self) -> (f64, f64) {
        self.preset.lambdas()
    }
}

/// Seed for the oracle's stochastic draws at step `step` of a run.
pub fn step_seed(run_seed: u64, step: usize) -> u64 {
    splitmix64(run_seed ^ splitmix64(step as u64))
}

/// Per-pixel difficulty multiplier in `[m_lo, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyMap(Plane);

impl DifficultyMap {
    pub fn ones(height: usize, width: usize) -> Self {
        DifficultyMap(Plane::filled(height, width, 1.0))
    }

    /// `m_lo + (1 − m_lo)·minmax(distance)`; a constant distance gives ones.
    pub fn from_distance(distance: &Plane, floor: f64) -> Self {
        match distance.minmax_normalized() {
            Some(n) => DifficultyMap(n.map(|v| floor + (1.0 - floor) * v)),
            None => Self::ones(distance.height(), distance.width()),
        }
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }
}

/// Clamp `candidate` into `[x − η, x + η] ∩ [0, 1]`.
pub fn project_linf(x: &Tensor, candidate: &Tensor, eta: f64) -> Tensor {
    x.zip_map(candidate, |xv, c| c.max((xv - eta).max(0.0)).min((xv + eta).min(1.0)))
}

#[derive(Debug, Clone)]
pub struct PgdStep {
    pub next: Tensor,
    /// Unmodulated step `−α·sgn(∇ total)`.
    pub delta: Tensor,
    /// Objective at the previous iterate.
    pub loss: TotalLoss,
}

/// One projected sign step from `x_prev`, scaled per pixel by `modulation`.
pub fn pgd_step<O: GuidanceOracle + ?Sized>(
    obj: &Objective<'_>,
    x_prev: &Tensor,
    modulation: &Plane,
    alpha: f64,
    eta: f64,
    seed: u64,
    oracle: &mut O,
) -> Result<PgdStep> {
    obj.x.ensure_plane_extent(modulation, "step modulation")?;
    let loss = total_loss(obj, x_prev, seed, oracle)?;
    let delta = loss.grad.map(|g| -alpha * sgn(g));
    let candidate = x_prev.add(&delta.modulate(modulation));
    Ok(PgdStep {
        next: project_linf(obj.x, &candidate, eta),
        delta,
        loss,
    })
}

/// Difficulty map for one pair, without caching.
pub fn dap_difficulty<O: GuidanceOracle + ?Sized>(
    x: &Tensor,
    x_i: &Tensor,
    config: &ProtectionConfig,
    oracle: &mut O,
) -> Result<DifficultyMap> {
    DapState::default().difficulty(x, x_i, config, oracle)
}

#[derive(Debug, Default)]
struct DapState {
    reference: Option<Tensor>,
    disabled: bool,
}

impl DapState {
    fn roundtrip_seed(config: &ProtectionConfig) -> u64 {
        splitmix64(config.seed ^ 0xDA9)
    }

    fn difficulty<O: GuidanceOracle + ?Sized>(
        &mut self,
        x: &Tensor,
        x_i: &Tensor,
        config: &ProtectionConfig,
        oracle: &mut O,
    ) -> Result<DifficultyMap> {
        let ones = DifficultyMap::ones(x.height(), x.width());
        let caps = oracle.capabilities();
        if self.disabled || !(caps.diffusion_roundtrip && caps.spatial_distance) {
            if !self.disabled {
                log::warn!("oracle lacks diffusion roundtrip or spatial distance; difficulty map disabled");
                self.disabled = true;
            }
            return Ok(ones);
        }
        let seed = Self::roundtrip_seed(config);
        let result = (|| {
            if self.reference.is_none() {
                self.reference = Some(oracle.diffusion_roundtrip(x, config.dap_t, config.dap_total, seed)?);
            }
            let current = oracle.diffusion_roundtrip(x_i, config.dap_t, config.dap_total, seed)?;
            let reference = self.reference.as_ref().expect("set above");
            oracle.spatial_distance(reference, &current)
        })();
        match result {
            Ok(d) => Ok(DifficultyMap::from_distance(&d, config.dap_floor)),
            Err(Error::Unsupported(op)) => {
                log::warn!("oracle does not support {op}; difficulty map disabled");
                self.disabled = true;
                Ok(ones)
            }
            Err(e) => Err(e),
        }
    }
}

/// One line of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub terms: LossTerms,
    /// `‖x⁽ⁱ⁾ − x‖∞` after the step.
    pub linf: f64,
    /// Refinement objective when a refinement happened at this step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iwr: Option<f64>,
    #[serde(default)]
    pub dap: bool,
}

#[derive(Debug, Clone)]
pub struct ProtectionResult {
    pub protected: ImageTensor,
    /// `x̂ − x`
    pub delta: Tensor,
    /// Mean sensitivity map `S`.
    pub sensitivity: Plane,
    /// Final fused strength map `𝓜(ω)`; ones when maps are disabled.
    pub fused_map: Plane,
    pub difficulty: DifficultyMap,
    pub weights: Option<FusionWeights>,
    pub weight_log: String,
    pub trace: Vec<StepRecord>,
    pub iwr_events: usize,
    pub dap_events: usize,
    pub initial_lsp: f64,
    pub final_lsp: f64,
    pub elapsed: Duration,
}

/// A failed run with the steps that completed before the failure.
#[derive(Debug)]
pub struct RunError {
    pub error: Error,
    pub trace: Vec<StepRecord>,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} completed steps)", self.error, self.trace.len())
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunError {
    fn from(error: Error) -> Self {
        RunError { error, trace: Vec::new() }
    }
}

/// Mid-gray-mean target: a checkerboard of 16-pixel cells at 0.1 and 0.9.
pub fn grid_target(height: usize, width: usize, channels: usize) -> Result<ImageTensor> {
    ImageTensor::new(Tensor::from_fn(height, width, channels, |y, x, _| {
        if (y / 16 + x / 16) % 2 == 0 {
            0.1
        } else {
            0.9
        }
    }))
}

/// Run the full loop on `x` toward target `y`.
pub fn protect_run<O: GuidanceOracle + ?Sized>(
    x: &ImageTensor,
    y: &ImageTensor,
    config: &ProtectionConfig,
    oracle: &mut O,
) -> std::result::Result<ProtectionResult, RunError> {
    protect_run_observed(x, y, config, oracle, |_, _| {})
}

/// [`protect_run`], calling `observer(record, iterate)` after every step.
pub fn protect_run_observed<O: GuidanceOracle + ?Sized>(
    x: &ImageTensor,
    y: &ImageTensor,
    config: &ProtectionConfig,
    oracle: &mut O,
    mut observer: impl FnMut(&StepRecord, &Tensor),
) -> std::result::Result<ProtectionResult, RunError> {
    let start = Instant::now();
    config.validate()?;
    x.ensure_same_shape(y, "target image")?;
    let (h, w) = (x.height(), x.width());
    let (lambda_e, lambda_sd) = config.lambdas();

    let maps = PerceptualMaps::compute(&to_luminance(x)?, config.ppd)?;
    let sensitivity = maps.mean_sensitivity().plane().clone();
    let mut fusion = if config.perceptual_map {
        let comps = maps.strength.iter().map(|m| m.plane().clone()).collect();
        Some(FusionState::new(comps, config.iwr_step, config.iwr_amplification)?)
    } else {
        None
    };
    let ones = Plane::filled(h, w, 1.0);
    let mut difficulty = DifficultyMap::ones(h, w);
    let mut dap = DapState::default();
    let wavelet = WaveletFilterPair::by_name(&config.wavelet)?;
    let obj = Objective {
        x,
        target: y,
        sensitivity: &sensitivity,
        lambda_e,
        lambda_sd,
        weights: config.weights,
        penalty: config.penalty,
        wavelet: &wavelet,
    };
    let eval_spec = obj.lsp_spec(step_seed(config.seed, 0));
    let initial_lsp = oracle.eval_lsp(x, &eval_spec)?.loss;

    let mut trace = Vec::with_capacity(config.steps);
    let mut current: Tensor = x.tensor().clone();
    let mut iwr_events = 0;
    let mut dap_events = 0;
    for i in 1..=config.steps {
        let seed = step_seed(config.seed, i);
        let outcome = (|| -> Result<(Tensor, StepRecord)> {
            let fused = fusion.as_ref().map_or(&ones, |f| f.current_map());
            let modulation = if config.dap {
                Plane::from_vec(
                    h,
                    w,
                    fused.data().iter().zip(difficulty.plane().data()).map(|(a, b)| a * b).collect(),
                )?
            } else {
                fused.clone()
            };
            let step = pgd_step(&obj, &current, &modulation, config.alpha, config.eta, seed, oracle)?;
            let mut record = StepRecord {
                step: i,
                terms: step.loss.terms,
                linf: step.next.sub(x).max_abs(),
                iwr: None,
                dap: false,
            };
            if i % config.interval == 0 {
                if config.iwr {
                    if let Some(f) = fusion.as_mut() {
                        let spec = obj.lsp_spec(seed);
                        record.iwr = Some(f.iwr_update(x, &step.delta, &spec, oracle)?.loss);
                        iwr_events += 1;
                    }
                }
                if config.dap {
                    difficulty = dap.difficulty(x, &step.next, config, oracle)?;
                    if !dap.disabled {
                        record.dap = true;
                        dap_events += 1;
                    }
                }
            }
            Ok((step.next, record))
        })();
        match outcome {
            Ok((next, record)) => {
                log::debug!("step {i}: lsp {:.6e} total {:.6e}", record.terms.lsp, record.terms.total);
                current = next;
                observer(&record, &current);
                trace.push(record);
            }
            Err(error) => return Err(RunError { error, trace }),
        }
    }

    let final_lsp = match oracle.eval_lsp(&current, &eval_spec) {
        Ok(r) => r.loss,
        Err(error) => return Err(RunError { error, trace }),
    };
    let delta = current.sub(x);
    let protected = match ImageTensor::new(current) {
        Ok(p) => p,
        Err(error) => return Err(RunError { error, trace }),
    };
    Ok(ProtectionResult {
        protected,
        delta,
        sensitivity,
        fused_map: fusion.as_ref().map_or(ones, |f| f.current_map().clone()),
        difficulty,
        weights: fusion.as_ref().map(|f| f.weights().clone()),
        weight_log: fusion.as_ref().map(|f| f.weight_log().to_string()).unwrap_or_default(),
        trace,
        iwr_events,
        dap_events,
        initial_lsp,
        final_lsp,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        let x = Tensor::filled(1, 1, 1, 0.5);
        let c = Tensor::filled(1, 1, 1, 0.6);
        let p = project_linf(&x, &c, 8.0 / 255.0);
        assert!((p.get(0, 0, 0) - 0.531_37).abs() < 1e-5);
        let x0 = Tensor::filled(1, 1, 1, 0.0);
        let c0 = Tensor::filled(1, 1, 1, -0.1);
        assert_eq!(project_linf(&x0, &c0, 8.0 / 255.0).get(0, 0, 0), 0.0);
        let inside = Tensor::filled(1, 1, 1, 0.51);
        assert_eq!(project_linf(&x, &inside, 8.0 / 255.0), inside);
    }

    #[test]
    fn presets_roundtrip_by_name() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(json, format!("\"{}\"", p.name()));
        }
        assert!("glaze".parse::<Preset>().is_err());
    }

    #[test]
    fn preset_lambdas() {
        assert_eq!(Preset::Photoguard.lambdas(), (1.0, 0.0));
        assert_eq!(Preset::Advdm.lambdas(), (0.0, 1.0));
        assert_eq!(Preset::AntiDb.lambdas(), (1.0, 1.0));
    }

    #[test]
    fn config_validation() {
        assert!(ProtectionConfig::default().validate().is_ok());
        let bad = [
            ProtectionConfig { eta: 0.0, ..Default::default() },
            ProtectionConfig { alpha: -1.0, ..Default::default() },
            ProtectionConfig { interval: 0, ..Default::default() },
            ProtectionConfig { dap_floor: 1.5, ..Default::default() },
            ProtectionConfig { dap_t: 30, ..Default::default() },
            ProtectionConfig { wavelet: "coif3".into(), ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn config_json_defaults_and_unknown_fields() {
        let c: ProtectionConfig = serde_json::from_str(r#"{"steps": 7, "preset": "anti-db"}"#).unwrap();
        assert_eq!(c.steps, 7);
        assert_eq!(c.preset, Preset::AntiDb);
        assert_eq!(c.eta, 8.0 / 255.0);
        assert!(serde_json::from_str::<ProtectionConfig>(r#"{"stpes": 7}"#).is_err());
    }

    #[test]
    fn difficulty_from_distance() {
        let d = Plane::from_vec(1, 3, vec![0.0, 1.0, 2.0]).unwrap();
        let m = DifficultyMap::from_distance(&d, 0.5);
        assert_eq!(m.plane().data(), &[0.5, 0.75, 1.0]);
        let flat = DifficultyMap::from_distance(&Plane::filled(2, 2, 3.0), 0.5);
        assert!(flat.plane().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn grid_target_cells() {
        let g = grid_target(32, 32, 3).unwrap();
        assert_eq!(g.get(0, 0, 0), 0.1);
        assert_eq!(g.get(0, 16, 2), 0.9);
        assert_eq!(g.get(16, 16, 1), 0.1);
    }
}
