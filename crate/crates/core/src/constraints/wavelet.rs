//! Single-level orthogonal 2-D wavelet transform with periodic extension.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::tensor::{Plane, Tensor};

/// Analysis filters of an orthogonal wavelet. The high-pass taps are the
/// quadrature mirror of the low-pass taps, `H[j] = (−1)^j · L[n−1−j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilterPair {
    name: String,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl WaveletFilterPair {
    /// Build from low-pass taps. The taps must be orthonormal under even
    /// shifts (checked to 1e-12).
    pub fn from_lowpass(name: impl Into<String>, low: Vec<f64>) -> Result<Self> {
        let n = low.len();
        if n == 0 || n % 2 != 0 {
            return Err(Error::config("wavelet filter needs an even, non-zero number of taps"));
        }
        for shift in (0..n).step_by(2) {
            let dot: f64 = (0..n - shift).map(|j| low[j] * low[j + shift]).sum();
            let want = if shift == 0 { 1.0 } else { 0.0 };
            if (dot - want).abs() > 1e-12 {
                return Err(Error::config("wavelet low-pass taps are not orthonormal"));
            }
        }
        let high = (0..n)
            .map(|j| if j % 2 == 0 { low[n - 1 - j] } else { -low[n - 1 - j] })
            .collect();
        Ok(WaveletFilterPair {
            name: name.into(),
            low,
            high,
        })
    }

    pub fn haar() -> Self {
        Self::from_lowpass("haar", vec![1.0 / SQRT_2, 1.0 / SQRT_2]).expect("haar taps")
    }

    /// Daubechies wavelet with two vanishing moments.
    pub fn db2() -> Self {
        let s3 = 3f64.sqrt();
        let d = 4.0 * SQRT_2;
        Self::from_lowpass("db2", vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d])
            .expect("db2 taps")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(Self::haar()),
            "db2" => Ok(Self::db2()),
            other => Err(Error::config(format!("unknown wavelet `{other}` (expected haar or db2)"))),
        }
    }

    fn is_haar(&self) -> bool {
        self.low == [1.0 / SQRT_2, 1.0 / SQRT_2]
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }
}

impl Default for WaveletFilterPair {
    fn default() -> Self {
        Self::haar()
    }
}

/// One level of 2-D decomposition. The first letter names the filter
/// applied along rows (horizontal), the second along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Subbands {
    pub ll: Plane,
    pub lh: Plane,
    pub hl: Plane,
    pub hh: Plane,
}

fn transpose(p: &Plane) -> Plane {
    Plane::from_fn(p.width(), p.height(), |y, x| p.get(x, y))
}

/// Filter and downsample every row: `out[k] = Σ_j taps[j] · row[(2k + j) mod n]`.
fn analyze_rows(p: &Plane, taps: &[f64]) -> Plane {
    let (h, w) = (p.height(), p.width());
    Plane::from_fn(h, w / 2, |y, k| {
        taps.iter().enumerate().map(|(j, t)| t * p.get(y, (2 * k + j) % w)).sum()
    })
}

/// Adjoint of [`analyze_rows`], producing rows of width `w`.
fn synthesize_rows(p: &Plane, taps: &[f64], w: usize) -> Plane {
    let mut out = Plane::zeros(p.height(), w);
    for y in 0..p.height() {
        for k in 0..p.width() {
            let v = p.get(y, k);
            for (j, t) in taps.iter().enumerate() {
                let x = (2 * k + j) % w;
                out.set(y, x, out.get(y, x) + t * v);
            }
        }
    }
    out
}

fn analyze_cols(p: &Plane, taps: &[f64]) -> Plane {
    transpose(&analyze_rows(&transpose(p), taps))
}

fn synthesize_cols(p: &Plane, taps: &[f64], h: usize) -> Plane {
    transpose(&synthesize_rows(&transpose(p), taps, h))
}

fn ensure_even(p: &Plane) -> Result<()> {
    if p.height() % 2 != 0 || p.width() % 2 != 0 || p.is_empty() {
        return Err(Error::input(format!(
            "wavelet transform needs even, non-zero sides, got {}x{}",
            p.height(),
            p.width()
        )));
    }
    Ok(())
}

pub fn dwt2(p: &Plane, filt: &WaveletFilterPair) -> Result<Subbands> {
    ensure_even(p)?;
    let lo = analyze_rows(p, filt.low());
    let hi = analyze_rows(p, filt.high());
    Ok(Subbands {
        ll: analyze_cols(&lo, filt.low()),
        lh: analyze_cols(&lo, filt.high()),
        hl: analyze_cols(&hi, filt.low()),
        hh: analyze_cols(&hi, filt.high()),
    })
}

pub fn idwt2(bands: &Subbands, filt: &WaveletFilterPair) -> Plane {
    let (h, w) = (bands.ll.height() * 2, bands.ll.width() * 2);
    let lo = synthesize_cols(&bands.ll, filt.low(), h).zip_add(&synthesize_cols(&bands.lh, filt.high(), h));
    let hi = synthesize_cols(&bands.hl, filt.low(), h).zip_add(&synthesize_cols(&bands.hh, filt.high(), h));
    synthesize_rows(&lo, filt.low(), w).zip_add(&synthesize_rows(&hi, filt.high(), w))
}

/// `Lᵀ(L X Lᵀ)L` for an even-sided plane.
fn lowpass_even(p: &Plane, filt: &WaveletFilterPair) -> Plane {
    if filt.is_haar() {
        return haar_block_mean(p);
    }
    lowpass_generic(p, filt)
}

/// The Haar LL reconstruction is the 2×2 block mean.
fn haar_block_mean(p: &Plane) -> Plane {
    Plane::from_fn(p.height(), p.width(), |y, x| {
        let (y0, x0) = (y & !1, x & !1);
        (p.get(y0, x0) + p.get(y0, x0 + 1) + p.get(y0 + 1, x0) + p.get(y0 + 1, x0 + 1)) / 4.0
    })
}

fn lowpass_generic(p: &Plane, filt: &WaveletFilterPair) -> Plane {
    let ll = analyze_cols(&analyze_rows(p, filt.low()), filt.low());
    synthesize_rows(&synthesize_cols(&ll, filt.low(), p.height()), filt.low(), p.width())
}

fn pad_to_even(p: &Plane) -> Plane {
    let h = p.height() + p.height() % 2;
    let w = p.width() + p.width() % 2;
    Plane::from_fn(h, w, |y, x| p.get_clamped(y as isize, x as isize))
}

fn crop(p: &Plane, h: usize, w: usize) -> Plane {
    Plane::from_fn(h, w, |y, x| p.get(y, x))
}

/// Reconstruction from the LL band alone. Odd sides are edge-padded to even
/// and cropped back.
pub fn lowpass_plane(p: &Plane, filt: &WaveletFilterPair) -> Plane {
    let (h, w) = (p.height(), p.width());
    if h % 2 == 0 && w % 2 == 0 {
        return lowpass_even(p, filt);
    }
    crop(&lowpass_even(&pad_to_even(p), filt), h, w)
}

/// Adjoint of [`lowpass_plane`]. Equal to it on even sides, where the
/// operator is an orthogonal projection.
pub fn lowpass_plane_adjoint(p: &Plane, filt: &WaveletFilterPair) -> Plane {
    let (h, w) = (p.height(), p.width());
    if h % 2 == 0 && w % 2 == 0 {
        return lowpass_even(p, filt);
    }
    let (ph, pw) = (h + h % 2, w + w % 2);
    let zero_padded = Plane::from_fn(ph, pw, |y, x| if y < h && x < w { p.get(y, x) } else { 0.0 });
    let full = lowpass_even(&zero_padded, filt);
    // Transpose of edge replication: padded cells fold back onto the border.
    let mut out = crop(&full, h, w);
    for y in 0..ph {
        for x in 0..pw {
            if y >= h || x >= w {
                let (sy, sx) = (y.min(h - 1), x.min(w - 1));
                out.set(sy, sx, out.get(sy, sx) + full.get(y, x));
            }
        }
    }
    out
}

/// Per-channel [`lowpass_plane`].
pub fn dwt_lowpass(img: &Tensor, filt: &WaveletFilterPair) -> Tensor {
    img.map_channels(|p| lowpass_plane(p, filt))
}

trait ZipAdd {
    fn zip_add(self, other: &Plane) -> Plane;
}

impl ZipAdd for Plane {
    fn zip_add(mut self, other: &Plane) -> Plane {
        for (a, b) in self.data_mut().iter_mut().zip(other.data()) {
            *a += b;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wavy(h: usize, w: usize) -> Plane {
        Plane::from_fn(h, w, |y, x| ((y * 13 + x * 7) as f64 * 0.37).sin())
    }

    #[test]
    fn haar_taps() {
        let f = WaveletFilterPair::haar();
        assert_eq!(f.high(), &[1.0 / SQRT_2, -1.0 / SQRT_2]);
    }

    #[test]
    fn haar_block_average() {
        let p = Plane::from_vec(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let lp = lowpass_plane(&p, &WaveletFilterPair::haar());
        for v in lp.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_reconstruction() {
        for filt in [WaveletFilterPair::haar(), WaveletFilterPair::db2()] {
            let p = wavy(12, 18);
            let back = idwt2(&dwt2(&p, &filt).unwrap(), &filt);
            for (a, b) in p.data().iter().zip(back.data()) {
                assert!((a - b).abs() < 1e-12, "{}", filt.name());
            }
        }
    }

    #[test]
    fn odd_sides_rejected_by_dwt2() {
        assert!(dwt2(&wavy(7, 8), &WaveletFilterPair::haar()).is_err());
    }

    #[test]
    fn non_orthonormal_taps_rejected() {
        assert!(WaveletFilterPair::from_lowpass("bad", vec![0.5, 0.5]).is_err());
        assert!(WaveletFilterPair::from_lowpass("bad", vec![1.0]).is_err());
        assert!(WaveletFilterPair::by_name("sym9").is_err());
    }

    #[test]
    fn adjoint_identity_on_odd_sides() {
        let filt = WaveletFilterPair::db2();
        let a = wavy(9, 11);
        let b = Plane::from_fn(9, 11, |y, x| ((y * 5 + x * 3) as f64 * 0.11).cos());
        let lhs: f64 = lowpass_plane(&a, &filt).data().iter().zip(b.data()).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.data().iter().zip(lowpass_plane_adjoint(&b, &filt).data()).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn haar_fast_path_matches_filter_bank() {
        let p = wavy(10, 14);
        let fast = haar_block_mean(&p);
        let slow = lowpass_generic(&p, &WaveletFilterPair::haar());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_survive_odd_sides() {
        let p = Plane::filled(9, 15, 0.3);
        let lp = lowpass_plane(&p, &WaveletFilterPair::haar());
        assert!(lp.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }
}
