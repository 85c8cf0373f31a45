use super::kernels::{default_kernels, DirectionalKernel, KERNEL_SIZE};
use super::{JndKind, RawJndMap};
use crate::image::LuminancePlane;
use crate::tensor::Plane;

/// Maps luminance contrast onto a masking threshold. Monotone for `lc ≥ 0`.
pub fn contrast_masking(lc: f64) -> f64 {
    0.115 * 16.0 * lc.powf(2.4) / (lc * lc + 26.0 * 26.0)
}

/// `max_k |lum ⋆ ∇_k| / 16`, edge-replicated.
pub fn luminance_contrast(lum: &Plane, kernels: &[DirectionalKernel]) -> Plane {
    let responses: Vec<Plane> = kernels
        .iter()
        .map(|k| lum.correlate(&k.weights, KERNEL_SIZE))
        .collect();
    Plane::from_fn(lum.height(), lum.width(), |y, x| {
        responses.iter().fold(0.0_f64, |m, r| m.max(r.get(y, x).abs())) / 16.0
    })
}

pub fn estimate_cm(lum: &LuminancePlane) -> RawJndMap {
    estimate_cm_with(lum, &default_kernels())
}

pub fn estimate_cm_with(lum: &LuminancePlane, kernels: &[DirectionalKernel]) -> RawJndMap {
    RawJndMap {
        kind: JndKind::Cm,
        values: luminance_contrast(lum, kernels).map(contrast_masking),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_at_lc_26() {
        let want = 0.115 * 16.0 * 26f64.powf(2.4) / (2.0 * 26.0 * 26.0);
        assert!((contrast_masking(26.0) - want).abs() < 1e-12);
    }

    #[test]
    fn monotone_on_grid() {
        assert!(contrast_masking(10.0) < contrast_masking(20.0));
        let mut prev = contrast_masking(0.0);
        assert_eq!(prev, 0.0);
        for i in 1..=2000 {
            let v = contrast_masking(i as f64 * 0.25);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn vertical_edge_response() {
        // A step from 0 to 160 across columns: the 90deg kernel responds with
        // (1+3+8+3+1) * 160 / 16 = 160 right at the edge.
        let p = Plane::from_fn(16, 16, |_, x| if x < 8 { 0.0 } else { 160.0 });
        let lc = luminance_contrast(&p, &default_kernels());
        assert!((lc.get(8, 7) - 160.0).abs() < 1e-9);
        assert_eq!(lc.get(8, 0), 0.0);
    }
}
