use super::{RawJndMap, SensitivityMap, StrengthMap};
use crate::tensor::Plane;

pub const STRENGTH_BETA: f64 = 0.85;

/// Powers of [`STRENGTH_BETA`], strongest (least visible quartile) first.
pub const STRENGTH_LEVELS: [f64; 4] = [
    1.0,
    STRENGTH_BETA,
    STRENGTH_BETA * STRENGTH_BETA,
    STRENGTH_BETA * STRENGTH_BETA * STRENGTH_BETA,
];

/// Invert-normalize a raw map into sensitivity, then quantize by quartile.
///
/// A constant raw map carries no spatial information: sensitivity is all
/// zero and strength all 1.0.
pub fn postprocess_map(raw: &RawJndMap) -> (SensitivityMap, StrengthMap) {
    match raw.values.minmax_normalized() {
        Some(norm) => {
            let sens = SensitivityMap(norm.map(|v| 1.0 - v));
            let strength = quantize_sensitivity(&sens);
            (sens, strength)
        }
        None => {
            let (h, w) = (raw.values.height(), raw.values.width());
            (SensitivityMap(Plane::zeros(h, w)), StrengthMap(Plane::filled(h, w, 1.0)))
        }
    }
}

/// Rank pixels by (sensitivity, raster index) and give each quarter of the
/// ranking one level. Ties straddling a boundary go to the stronger level in
/// raster order, so every level holds `n/4` pixels up to rounding.
pub fn quantize_sensitivity(sens: &SensitivityMap) -> StrengthMap {
    let data = sens.data();
    let n = data.len();
    if n == 0 || sens.min() == sens.max() {
        return StrengthMap(Plane::filled(sens.height(), sens.width(), 1.0));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data[a].total_cmp(&data[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = STRENGTH_LEVELS[rank * 4 / n];
    }
    StrengthMap(Plane::from_vec(sens.height(), sens.width(), out).expect("same extent"))
}
