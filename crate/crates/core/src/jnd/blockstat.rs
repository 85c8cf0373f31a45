use super::{JndKind, RawJndMap};
use crate::image::LuminancePlane;
use crate::tensor::Plane;

/// Side of the sliding window for block statistics.
pub const BLOCK_SIZE: usize = 9;

/// Population standard deviation.
pub fn window_stdev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[inline]
fn bin(v: f64) -> usize {
    v.round().clamp(0.0, 255.0) as usize
}

/// Shannon entropy in bits of the 256-bin histogram of rounded 8-bit values.
pub fn window_entropy(values: &[f64]) -> f64 {
    let mut hist = [0u32; 256];
    for &v in values {
        hist[bin(v)] += 1;
    }
    entropy_of(&hist, values.len())
}

fn entropy_of(hist: &[u32; 256], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let h = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    // A single-bin histogram gives -1*log2(1) = -0.0.
    h.max(0.0)
}

/// 9×9 sliding-window standard deviation or entropy, edge-replicated.
///
/// # Panics
/// If `kind` is not [`JndKind::Stdev`] or [`JndKind::Entropy`].
pub fn estimate_blockstat(lum: &LuminancePlane, kind: JndKind) -> RawJndMap {
    let values = match kind {
        JndKind::Stdev => sliding_stdev(lum),
        JndKind::Entropy => sliding_entropy(lum),
        other => panic!("{other} is not a block statistic"),
    };
    RawJndMap { kind, values }
}

fn sliding_stdev(lum: &Plane) -> Plane {
    let r = (BLOCK_SIZE / 2) as isize;
    let mut window = Vec::with_capacity(BLOCK_SIZE * BLOCK_SIZE);
    Plane::from_fn(lum.height(), lum.width(), |y, x| {
        window.clear();
        for dy in -r..=r {
            for dx in -r..=r {
                window.push(lum.get_clamped(y as isize + dy, x as isize + dx));
            }
        }
        window_stdev(&window)
    })
}

fn sliding_entropy(lum: &Plane) -> Plane {
    let r = (BLOCK_SIZE / 2) as isize;
    let n = BLOCK_SIZE * BLOCK_SIZE;
    let (h, w) = (lum.height(), lum.width());
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        let mut hist = [0u32; 256];
        let column = |hist: &mut [u32; 256], x: isize, add: bool| {
            for dy in -r..=r {
                let b = bin(lum.get_clamped(y as isize + dy, x));
                if add {
                    hist[b] += 1;
                } else {
                    hist[b] -= 1;
                }
            }
        };
        for dx in -r..=r {
            column(&mut hist, dx, true);
        }
        out.set(y, 0, entropy_of(&hist, n));
        for x in 1..w as isize {
            column(&mut hist, x - 1 - r, false);
            column(&mut hist, x + r, true);
            out.set(y, x as usize, entropy_of(&hist, n));
        }
    }
    out
}
