//! Dense row-major containers used throughout the crate.
//!
//! [`Tensor`] is an unconstrained `H×W×C` array (perturbations, gradients,
//! intermediate images) and [`Plane`] is a single-channel `H×W` grid
//! (luminance, JND maps, masks). Range-checked image types live in
//! [`crate::image`].

use crate::error::{Error, Result};

/// `H×W×C` real array, row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Tensor {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::input(format!(
                "tensor data has {} elements, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Tensor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Tensor {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::input(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn ensure_plane_extent(&self, plane: &Plane, what: &str) -> Result<()> {
        if plane.height() == self.height && plane.width() == self.width {
            Ok(())
        } else {
            Err(Error::input(format!(
                "{what}: map is {}x{}, tensor is {}x{}",
                plane.height(),
                plane.width(),
                self.height,
                self.width
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert!(self.same_shape(other));
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: f64, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    /// Multiply every channel of each pixel by the matching entry of `plane`.
    pub fn modulate(&self, plane: &Plane) -> Tensor {
        debug_assert_eq!(plane.height(), self.height);
        debug_assert_eq!(plane.width(), self.width);
        let c = self.channels;
        let mut out = self.clone();
        for (px, chunk) in out.data.chunks_mut(c).enumerate() {
            let m = plane.data()[px];
            for v in chunk {
                *v *= m;
            }
        }
        out
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extract one channel as a plane.
    pub fn channel(&self, c: usize) -> Plane {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Plane {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn set_channel(&mut self, c: usize, plane: &Plane) {
        for (i, &v) in plane.data().iter().enumerate() {
            self.data[i * self.channels + c] = v;
        }
    }

    /// Apply a plane-to-plane operator to every channel independently.
    pub fn map_channels(&self, mut f: impl FnMut(&Plane) -> Plane) -> Tensor {
        let mut out: Option<Tensor> = None;
        for c in 0..self.channels {
            let p = f(&self.channel(c));
            let t = out.get_or_insert_with(|| Tensor::zeros(p.height(), p.width(), self.channels));
            t.set_channel(c, &p);
        }
        out.unwrap_or_else(|| Tensor::zeros(self.height, self.width, 0))
    }
}

/// Single-channel `H×W` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Plane {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::input(format!(
                "plane data has {} elements, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Plane {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Read with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize) -> f64 {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.data[yy * self.width + xx]
    }

    pub fn same_extent(&self, other: &Plane) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Min-max normalize into `[0,1]`; `None` when the plane is constant.
    pub fn minmax_normalized(&self) -> Option<Plane> {
        let lo = self.min();
        let hi = self.max();
        let range = hi - lo;
        if !(range > 0.0) || !range.is_finite() {
            return None;
        }
        Some(self.map(|v| ((v - lo) / range).clamp(0.0, 1.0)))
    }

    /// Horizontal mirror image.
    pub fn mirrored(&self) -> Plane {
        Plane::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    /// Mean over a `(2r+1)×(2r+1)` box with edge replication.
    pub fn box_mean(&self, radius: usize) -> Plane {
        let r = radius as isize;
        let n = ((2 * radius + 1) * (2 * radius + 1)) as f64;
        Plane::from_fn(self.height, self.width, |y, x| {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    s += self.get_clamped(y as isize + dy, x as isize + dx);
                }
            }
            s / n
        })
    }

    /// Correlate with a square odd-sized kernel, edge-replicated borders.
    pub fn correlate(&self, kernel: &[f64], size: usize) -> Plane {
        debug_assert_eq!(kernel.len(), size * size);
        let r = (size / 2) as isize;
        Plane::from_fn(self.height, self.width, |y, x| {
            let mut s = 0.0;
            for ky in 0..size {
                for kx in 0..size {
                    let w = kernel[ky * size + kx];
                    if w != 0.0 {
                        s += w * self.get_clamped(
                            y as isize + ky as isize - r,
                            x as isize + kx as isize - r,
                        );
                    }
                }
            }
            s
        })
    }

    /// Area-average resampling to `out_h × out_w`: each output cell is the
    /// mean of the input area it covers, fractional overlaps weighted.
    pub fn area_resample(&self, out_h: usize, out_w: usize) -> Plane {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let ry = area_weights(self.height, out_h);
        let rx = area_weights(self.width, out_w);
        let mut out = Plane::zeros(out_h, out_w);
        for (oy, wy) in ry.iter().enumerate() {
            for (ox, wx) in rx.iter().enumerate() {
                let mut s = 0.0;
                let mut wsum = 0.0;
                for &(iy, ay) in wy {
                    for &(ix, ax) in wx {
                        let w = ay * ax;
                        s += w * self.get(iy, ix);
                        wsum += w;
                    }
                }
                out.set(oy, ox, if wsum > 0.0 { s / wsum } else { 0.0 });
            }
        }
        out
    }
}

/// For each output cell along one axis, the input indices it overlaps and
/// the overlap lengths.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let a = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (a > 0.0).then_some((i, a))
                })
                .collect()
        })
        .collect()
}

/// Sign with `sgn(0) = 0`.
#[inline]
pub fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
