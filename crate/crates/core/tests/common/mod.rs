#![allow(dead_code)]

use impasto_core::{ImageTensor, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(h, w, c, |_, _, _| r.random::<f64>())
}

pub fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageTensor {
    ImageTensor::new(random_tensor(h, w, c, seed)).unwrap()
}

/// Smooth gradient on the left, fine texture on the right.
pub fn textured_image(h: usize, w: usize, seed: u64) -> ImageTensor {
    let s = seed as f64;
    ImageTensor::new(Tensor::from_fn(h, w, 3, |y, x, c| {
        let (yf, xf) = (y as f64, x as f64);
        let smooth = 0.5 + 0.3 * ((yf * 0.07 + s).sin() * (xf * 0.05 + c as f64).cos());
        let tex = if x >= w / 2 { 0.15 * (yf * 1.3 + xf * 2.1 + s * 7.0).sin() } else { 0.0 };
        (smooth + tex).clamp(0.0, 1.0)
    }))
    .unwrap()
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central difference of `f` along flat coordinate `i`.
pub fn central_diff(x: &Tensor, i: usize, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> f64 {
    let mut p = x.clone();
    p.data_mut()[i] += h;
    let up = f(&p);
    p.data_mut()[i] -= 2.0 * h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}
