//! Just-noticeable-difference estimators and their conversion into
//! sensitivity and strength maps.
//!
//! Five estimators run on the 8-bit-scaled luminance of an image:
//! luminance adaptation, contrast masking, a frequency-domain contrast
//! sensitivity filter, and 9×9 block standard deviation and entropy. Each
//! raw map is high where a perturbation is hard to see. [`postprocess_map`]
//! turns a raw map into a [`SensitivityMap`] (1 = most visible) and a
//! four-level [`StrengthMap`] used to scale perturbation steps.

mod blockstat;
mod csf;
pub mod kernels;
mod luminance;
mod masking;
mod quantize;

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

pub use blockstat::{estimate_blockstat, window_entropy, window_stdev, BLOCK_SIZE};
pub use csf::{csf_response, estimate_csf, perceived_lightness, CSF_CUTOFF, DEFAULT_PPD};
pub use luminance::{estimate_la, luminance_adaptation};
pub use masking::{contrast_masking, estimate_cm, estimate_cm_with, luminance_contrast};
pub use quantize::{postprocess_map, quantize_sensitivity, STRENGTH_BETA, STRENGTH_LEVELS};

use crate::error::Result;
use crate::image::LuminancePlane;
use crate::tensor::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JndKind {
    La,
    Cm,
    Csf,
    Stdev,
    Entropy,
}

impl JndKind {
    pub const ALL: [JndKind; 5] = [JndKind::La, JndKind::Cm, JndKind::Csf, JndKind::Stdev, JndKind::Entropy];

    pub fn name(self) -> &'static str {
        match self {
            JndKind::La => "la",
            JndKind::Cm => "cm",
            JndKind::Csf => "csf",
            JndKind::Stdev => "stdev",
            JndKind::Entropy => "entropy",
        }
    }
}

impl fmt::Display for JndKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Output of one estimator: non-negative, finite, same extent as the source.
#[derive(Debug, Clone, PartialEq)]
pub struct RawJndMap {
    pub kind: JndKind,
    pub values: Plane,
}

/// Per-pixel visibility in `[0,1]`, 1 = most perceptible.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap(pub(crate) Plane);

impl SensitivityMap {
    /// Wrap a plane, clamping into `[0,1]`.
    pub fn from_plane(plane: Plane) -> Self {
        SensitivityMap(plane.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    /// Pointwise mean of several sensitivity maps.
    pub fn average(maps: &[SensitivityMap]) -> Option<SensitivityMap> {
        average_planes(maps.iter().map(|m| &m.0)).map(SensitivityMap)
    }
}

impl Deref for SensitivityMap {
    type Target = Plane;

    fn deref(&self) -> &Plane {
        &self.0
    }
}

/// Per-pixel step multiplier drawn from [`STRENGTH_LEVELS`].
#[derive(Debug, Clone, PartialEq)]
pub struct StrengthMap(pub(crate) Plane);

impl StrengthMap {
    pub fn plane(&self) -> &Plane {
        &self.0
    }

    /// Pixel count at each of the four levels, strongest first.
    pub fn level_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for &v in self.0.data() {
            if let Some(i) = STRENGTH_LEVELS.iter().position(|&l| l == v) {
                counts[i] += 1;
            }
        }
        counts
    }
}

impl Deref for StrengthMap {
    type Target = Plane;

    fn deref(&self) -> &Plane {
        &self.0
    }
}

pub(crate) fn average_planes<'a>(mut planes: impl Iterator<Item = &'a Plane>) -> Option<Plane> {
    let first = planes.next()?;
    let mut acc = first.clone();
    let mut n = 1.0;
    for p in planes {
        for (a, b) in acc.data_mut().iter_mut().zip(p.data()) {
            *a += b;
        }
        n += 1.0;
    }
    Some(acc.map(|v| v / n))
}

/// Run one estimator.
pub fn estimate(kind: JndKind, lum: &LuminancePlane, ppd: f64) -> Result<RawJndMap> {
    match kind {
        JndKind::La => Ok(estimate_la(lum)),
        JndKind::Cm => Ok(estimate_cm(lum)),
        JndKind::Csf => estimate_csf(lum, ppd),
        JndKind::Stdev | JndKind::Entropy => Ok(estimate_blockstat(lum, kind)),
    }
}

/// The five estimators after post-processing, in [`JndKind::ALL`] order.
#[derive(Debug, Clone)]
pub struct PerceptualMaps {
    pub raw: Vec<RawJndMap>,
    pub sensitivity: Vec<SensitivityMap>,
    pub strength: Vec<StrengthMap>,
}

impl PerceptualMaps {
    pub fn compute(lum: &LuminancePlane, ppd: f64) -> Result<Self> {
        let mut raw = Vec::with_capacity(JndKind::ALL.len());
        let mut sensitivity = Vec::with_capacity(JndKind::ALL.len());
        let mut strength = Vec::with_capacity(JndKind::ALL.len());
        for kind in JndKind::ALL {
            let r = estimate(kind, lum, ppd)?;
            let (s, m) = postprocess_map(&r);
            raw.push(r);
            sensitivity.push(s);
            strength.push(m);
        }
        Ok(PerceptualMaps {
            raw,
            sensitivity,
            strength,
        })
    }

    pub fn mean_sensitivity(&self) -> SensitivityMap {
        SensitivityMap::average(&self.sensitivity).expect("five maps")
    }

    pub fn mean_strength(&self) -> Plane {
        average_planes(self.strength.iter().map(|m| &m.0)).expect("five maps")
    }
}
