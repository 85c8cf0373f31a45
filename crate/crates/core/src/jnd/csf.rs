//! Frequency-domain contrast sensitivity filtering.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{JndKind, RawJndMap};
use crate::error::{Error, Result};
use crate::image::LuminancePlane;
use crate::tensor::Plane;

/// Assumed display resolution in pixels per degree of visual angle.
pub const DEFAULT_PPD: f64 = 32.0;

/// Below this radial frequency (cycles/degree) the response is flat.
pub const CSF_CUTOFF: f64 = 7.8909;

const CSF_ALPHA: f64 = 0.0192;
const CSF_BETA: f64 = 0.114;
const CSF_FLAT: f64 = 0.981;

/// Contrast sensitivity at radial frequency `f` (c/deg) and orientation
/// `theta` (radians), with the oblique-effect correction.
pub fn csf_response(f: f64, theta: f64) -> f64 {
    if f >= CSF_CUTOFF {
        let f_theta = f / (0.15 * (4.0 * theta).cos() + 0.85);
        let bf = CSF_BETA * f_theta;
        2.6 * (CSF_ALPHA + bf) * (-bf.powf(1.1)).exp()
    } else {
        CSF_FLAT
    }
}

/// Display-calibrated relative lightness of an 8-bit luminance value.
pub fn perceived_lightness(l: f64) -> f64 {
    (0.02874 * l).powf(2.2).cbrt()
}

/// Signed frequency of DFT bin `k` out of `n`, in cycles per pixel.
fn bin_frequency(k: usize, n: usize) -> f64 {
    let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    signed / n as f64
}

/// Filter the perceived-lightness image with the CSF and report, per pixel,
/// the magnitude of what the filter changed. The DC term passes unscaled so
/// a constant image yields an all-zero map.
pub fn estimate_csf(lum: &LuminancePlane, ppd: f64) -> Result<RawJndMap> {
    if !(ppd > 0.0) || !ppd.is_finite() {
        return Err(Error::config(format!("pixels-per-degree must be positive, got {ppd}")));
    }
    let (h, w) = (lum.height(), lum.width());
    let lightness = lum.map(perceived_lightness);

    let mut spectrum: Vec<Complex64> = lightness.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spectrum, h, w, false);

    for v in 0..h {
        let fv = bin_frequency(v, h) * ppd;
        for u in 0..w {
            if u == 0 && v == 0 {
                continue;
            }
            let fu = bin_frequency(u, w) * ppd;
            let f = fu.hypot(fv);
            let theta = fv.atan2(fu);
            spectrum[v * w + u] *= csf_response(f, theta);
        }
    }
    fft2(&mut spectrum, h, w, true);

    let scale = 1.0 / (h * w) as f64;
    let values = Plane::from_vec(
        h,
        w,
        lightness
            .data()
            .iter()
            .zip(&spectrum)
            .map(|(&orig, filtered)| (orig - filtered.re * scale).abs())
            .collect(),
    )?;
    Ok(RawJndMap {
        kind: JndKind::Csf,
        values,
    })
}

/// In-place unnormalized 2-D DFT over a row-major `h×w` buffer.
fn fft2(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_region_value() {
        assert_eq!(csf_response(0.0, 0.0), 0.981);
        assert_eq!(csf_response(7.89, 1.0), 0.981);
    }

    #[test]
    fn closed_form_at_ten_cpd() {
        let want = 2.6 * (0.0192 + 1.14) * (-(1.14f64).powf(1.1)).exp();
        assert!((csf_response(10.0, 0.0) - want).abs() < 1e-12);
    }

    #[test]
    fn nearly_continuous_at_cutoff() {
        assert!((csf_response(CSF_CUTOFF, 0.0) - 0.981).abs() < 1e-3);
    }

    #[test]
    fn oblique_orientation_lowers_effective_frequency_response() {
        // At 45 degrees the denominator is 0.7, pushing f_theta higher, and
        // beyond the peak that reduces sensitivity.
        assert!(csf_response(20.0, std::f64::consts::FRAC_PI_4) < csf_response(20.0, 0.0));
    }

    #[test]
    fn constant_plane_gives_zero_map() {
        let lum = LuminancePlane::new(Plane::filled(16, 20, 90.0)).unwrap();
        let m = estimate_csf(&lum, DEFAULT_PPD).unwrap();
        assert!(m.values.max() < 1e-9);
    }

    #[test]
    fn rejects_bad_ppd() {
        let lum = LuminancePlane::new(Plane::filled(16, 16, 90.0)).unwrap();
        assert!(estimate_csf(&lum, 0.0).is_err());
        assert!(estimate_csf(&lum, -3.0).is_err());
        assert!(estimate_csf(&lum, f64::NAN).is_err());
    }

    #[test]
    fn fine_texture_is_attenuated_more_than_coarse() {
        let fine = Plane::from_fn(32, 32, |_, x| if x % 2 == 0 { 60.0 } else { 200.0 });
        let coarse = Plane::from_fn(32, 32, |_, x| if (x / 8) % 2 == 0 { 60.0 } else { 200.0 });
        let f = estimate_csf(&LuminancePlane::new(fine).unwrap(), DEFAULT_PPD).unwrap();
        let c = estimate_csf(&LuminancePlane::new(coarse).unwrap(), DEFAULT_PPD).unwrap();
        assert!(f.values.mean() > c.values.mean());
    }
}
