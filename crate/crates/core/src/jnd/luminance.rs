use super::{JndKind, RawJndMap};
use crate::image::LuminancePlane;

/// Visibility threshold for background luminance `b` in `[0,255]`.
/// Dark backgrounds tolerate the most, mid-greys the least.
pub fn luminance_adaptation(b: f64) -> f64 {
    if b <= 127.0 {
        17.0 * (1.0 - (b / 127.0).sqrt()) + 3.0
    } else {
        3.0 / 128.0 * (b - 127.0) + 3.0
    }
}

/// Luminance adaptation over the 3×3 background mean (edge-replicated).
pub fn estimate_la(lum: &LuminancePlane) -> RawJndMap {
    RawJndMap {
        kind: JndKind::La,
        values: lum.box_mean(1).map(luminance_adaptation),
    }
}
