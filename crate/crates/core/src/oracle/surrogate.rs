//! Deterministic analytic stand-in for the neural oracle.
//!
//! None of these quantities are diffusion or perceptual models. They are
//! smooth, seeded, cheap functions with the same signatures, so that the
//! protection loop, gradient checks and CLI can run without model weights:
//!
//! - encoder term: `‖A·vec(x̂) − A·vec(y)‖²` with a fixed 64-row projection
//! - diffusion term: `‖C·vec(x̂)‖²` with a second projection
//! - roundtrip: `x + κ·(x − blur₅ₓ₅(x))`, an unsharp mask that amplifies
//!   high-frequency perturbations
//! - spatial distance: channel-mean squared difference, 7×7 box smoothed
//! - text alignment: cosine against a prompt-seeded unit vector, image
//!   embedding from a 32-row projection
//! - feature distance: two seeded 3×3 stride-2 convolutions with `|·|`

use std::collections::HashMap;

use super::{check_finite, validate_diffusion_steps, Capabilities, GuidanceOracle, LossGrad, LspSpec};
use crate::constraints::{cosine_alignment, masked_lpips_loss, ConvFeatureExtractor};
use crate::error::{Error, Result};
use crate::tensor::{Plane, Tensor};

/// Base seed for every surrogate projection.
pub const SURROGATE_SEED: u64 = 0x1A57;

const PROJECTION_ROWS: usize = 64;
const EMBEDDING_DIM: usize = 32;
const SHARPEN_GAIN: f64 = 1.5;
const BLUR_SIGMA: f64 = 1.0;
const DISTANCE_RADIUS: usize = 3;
/// Matrices above this many entries are evaluated on the fly instead of cached.
const CACHE_LIMIT: usize = 1 << 23;

#[inline]
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fixed random `rows × cols` matrix whose entries are a pure function of
/// `(seed, row, col)`, so any column count can be served without storing a
/// matrix per size. Entries are uniform with unit variance scaled by
/// `1/√cols`.
#[derive(Debug, Clone)]
pub struct HashProjection {
    rows: usize,
    seed: u64,
    cache: HashMap<usize, Vec<f64>>,
}

impl HashProjection {
    pub fn new(rows: usize, seed: u64) -> Self {
        HashProjection {
            rows,
            seed,
            cache: HashMap::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn entry(&self, row: usize, col: usize, cols: usize) -> f64 {
        let h = splitmix64(splitmix64(self.seed.wrapping_add(row as u64)).wrapping_add(col as u64));
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        (2.0 * u - 1.0) * 3f64.sqrt() / (cols as f64).sqrt()
    }

    fn matrix(&mut self, cols: usize) -> Option<&[f64]> {
        if self.rows * cols > CACHE_LIMIT {
            return None;
        }
        if !self.cache.contains_key(&cols) {
            let m: Vec<f64> = (0..self.rows)
                .flat_map(|r| (0..cols).map(move |c| (r, c)))
                .map(|(r, c)| self.entry(r, c, cols))
                .collect();
            self.cache.insert(cols, m);
        }
        self.cache.get(&cols).map(Vec::as_slice)
    }

    /// `P · v`
    pub fn apply(&mut self, v: &[f64]) -> Vec<f64> {
        let cols = v.len();
        if let Some(m) = self.matrix(cols) {
            return m.chunks_exact(cols).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect();
        }
        (0..self.rows)
            .map(|r| v.iter().enumerate().map(|(c, x)| self.entry(r, c, cols) * x).sum())
            .collect()
    }

    /// `Pᵀ · r` for a `cols`-wide matrix.
    pub fn adjoint(&mut self, r: &[f64], cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; cols];
        if let Some(m) = self.matrix(cols) {
            for (row, &k) in m.chunks_exact(cols).zip(r) {
                for (o, a) in out.iter_mut().zip(row) {
                    *o += k * a;
                }
            }
            return out;
        }
        for (ri, &k) in r.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += k * self.entry(ri, c, cols);
            }
        }
        out
    }
}

/// Analytic oracle. See the module docs for what each term is.
#[derive(Debug, Clone)]
pub struct SurrogateOracle {
    encoder: HashProjection,
    diffusion: HashProjection,
    embedding: HashProjection,
    seed: u64,
    /// Multiplies `L_SP` and its gradient.
    pub loss_scale: f64,
    /// `κ` in the roundtrip `x + κ(x − blur(x))`.
    pub sharpen_gain: f64,
    capabilities: Capabilities,
    features: HashMap<usize, ConvFeatureExtractor>,
}

impl Default for SurrogateOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl SurrogateOracle {
    pub fn new() -> Self {
        Self::with_seed(SURROGATE_SEED)
    }

    pub fn with_seed(seed: u64) -> Self {
        SurrogateOracle {
            encoder: HashProjection::new(PROJECTION_ROWS, splitmix64(seed)),
            diffusion: HashProjection::new(PROJECTION_ROWS, splitmix64(seed ^ 1)),
            embedding: HashProjection::new(EMBEDDING_DIM, splitmix64(seed ^ 2)),
            seed,
            loss_scale: 1.0,
            sharpen_gain: SHARPEN_GAIN,
            capabilities: Capabilities::ALL,
            features: HashMap::new(),
        }
    }

    /// Restrict the advertised capabilities; disabled methods return
    /// [`Error::Unsupported`].
    pub fn with_capabilities(mut self, caps: Capabilities) -> Self {
        self.capabilities = caps;
        self
    }

    pub fn with_loss_scale(mut self, scale: f64) -> Self {
        self.loss_scale = scale;
        self
    }

    /// The feature extractor used for the masked feature distance.
    pub fn feature_extractor(&mut self, channels: usize) -> &ConvFeatureExtractor {
        let seed = self.seed;
        self.features
            .entry(channels)
            .or_insert_with(|| ConvFeatureExtractor::seeded(channels, splitmix64(seed ^ 3)))
    }

    /// Unit-norm prompt embedding.
    pub fn text_embedding(&self, prompt: &str) -> Vec<f64> {
        // FNV-1a over the prompt bytes picks the embedding seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in prompt.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
        let p = HashProjection::new(1, splitmix64(self.seed ^ h));
        let v: Vec<f64> = (0..EMBEDDING_DIM).map(|j| p.entry(0, j, 1)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    /// Raw image embedding `P · vec(x̂)`.
    pub fn image_embedding(&mut self, x_hat: &Tensor) -> Vec<f64> {
        self.embedding.apply(x_hat.data())
    }

    fn require(&self, enabled: bool, op: &'static str) -> Result<()> {
        if enabled {
            Ok(())
        } else {
            Err(Error::Unsupported(op))
        }
    }
}

/// Normalized 5×5 Gaussian, row-major.
pub(crate) fn gaussian_kernel_5x5(sigma: f64) -> [f64; 25] {
    let mut k = [0.0; 25];
    let mut sum = 0.0;
    for y in 0..5 {
        for x in 0..5 {
            let (dy, dx) = (y as f64 - 2.0, x as f64 - 2.0);
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            k[y * 5 + x] = v;
            sum += v;
        }
    }
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

impl GuidanceOracle for SurrogateOracle {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn eval_lsp(&mut self, x_hat: &Tensor, spec: &LspSpec<'_>) -> Result<LossGrad> {
        self.require(self.capabilities.lsp_grad, "eval_lsp")?;
        spec.validate(x_hat)?;
        let cols = x_hat.len();
        let mut loss = 0.0;
        let mut grad = vec![0.0; cols];
        if spec.lambda_e > 0.0 {
            let diff = x_hat.sub(spec.target);
            let r = self.encoder.apply(diff.data());
            loss -= spec.lambda_e * r.iter().map(|v| v * v).sum::<f64>();
            let g = self.encoder.adjoint(&r, cols);
            for (o, v) in grad.iter_mut().zip(g) {
                *o -= 2.0 * spec.lambda_e * v;
            }
        }
        if spec.lambda_sd > 0.0 {
            let q = self.diffusion.apply(x_hat.data());
            loss += spec.lambda_sd * q.iter().map(|v| v * v).sum::<f64>();
            let g = self.diffusion.adjoint(&q, cols);
            for (o, v) in grad.iter_mut().zip(g) {
                *o += 2.0 * spec.lambda_sd * v;
            }
        }
        let s = self.loss_scale;
        let grad = Tensor::from_vec(x_hat.height(), x_hat.width(), x_hat.channels(), grad)?.scale(s);
        check_finite(LossGrad { loss: loss * s, grad }, "eval_lsp")
    }

    fn diffusion_roundtrip(&mut self, x: &Tensor, t: usize, total: usize, _seed: u64) -> Result<Tensor> {
        self.require(self.capabilities.diffusion_roundtrip, "diffusion_roundtrip")?;
        validate_diffusion_steps(t, total)?;
        let kernel = gaussian_kernel_5x5(BLUR_SIGMA);
        let blurred = x.map_channels(|p| p.correlate(&kernel, 5));
        let k = self.sharpen_gain;
        Ok(x.zip_map(&blurred, |v, b| v + k * (v - b)))
    }

    fn spatial_distance(&mut self, a: &Tensor, b: &Tensor) -> Result<Plane> {
        self.require(self.capabilities.spatial_distance, "spatial_distance")?;
        a.ensure_same_shape(b, "spatial_distance")?;
        let c = a.channels() as f64;
        let per_pixel = Plane::from_vec(
            a.height(),
            a.width(),
            a.data()
                .chunks_exact(a.channels())
                .zip(b.data().chunks_exact(b.channels()))
                .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / c)
                .collect(),
        )?;
        Ok(per_pixel.box_mean(DISTANCE_RADIUS))
    }

    fn clip_align(&mut self, x_hat: &Tensor, prompt: &str) -> Result<LossGrad> {
        self.require(self.capabilities.clip_embed, "clip_align")?;
        let text = self.text_embedding(prompt);
        let image = self.image_embedding(x_hat);
        let (loss, d_image) = cosine_alignment(&image, &text)?;
        let g = self.embedding.adjoint(&d_image, x_hat.len());
        let grad = Tensor::from_vec(x_hat.height(), x_hat.width(), x_hat.channels(), g)?;
        check_finite(LossGrad { loss, grad }, "clip_align")
    }

    fn masked_lpips(&mut self, x: &Tensor, x_hat: &Tensor, mask: &Plane) -> Result<LossGrad> {
        self.require(self.capabilities.lpips_features, "lpips_masked")?;
        let feat = self.feature_extractor(x.channels()).clone();
        masked_lpips_loss(x, x_hat, mask, &feat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize, k: f64) -> Tensor {
        Tensor::from_fn(h, w, c, |y, x, ch| (((y * 7 + x * 3 + ch * 5) as f64 * k).sin() + 1.0) / 2.0)
    }

    #[test]
    fn projection_cached_and_streamed_agree() {
        let mut cached = HashProjection::new(4, 9);
        let v: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let a = cached.apply(&v);
        let streamed: Vec<f64> = (0..4)
            .map(|r| v.iter().enumerate().map(|(c, x)| cached.entry(r, c, 50) * x).sum())
            .collect();
        for (p, q) in a.iter().zip(&streamed) {
            assert!((p - q).abs() < 1e-12);
        }
        let r = [1.0, -2.0, 0.5, 3.0];
        let adj = cached.adjoint(&r, 50);
        let lhs: f64 = a.iter().zip(&r).map(|(p, q)| p * q).sum();
        let rhs: f64 = adj.iter().zip(&v).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn lsp_zero_at_target_without_diffusion_term() {
        let y = ramp(16, 16, 3, 0.3);
        let mut o = SurrogateOracle::new();
        let spec = LspSpec {
            lambda_e: 1.0,
            lambda_sd: 0.0,
            target: &y,
            seed: 0,
        };
        let r = o.eval_lsp(&y, &spec).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.grad.max_abs(), 0.0);
    }

    #[test]
    fn lsp_rejects_degenerate_spec() {
        let y = ramp(16, 16, 3, 0.3);
        let mut o = SurrogateOracle::new();
        let spec = LspSpec {
            lambda_e: 0.0,
            lambda_sd: 0.0,
            target: &y,
            seed: 0,
        };
        assert!(matches!(o.eval_lsp(&y, &spec), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn roundtrip_preserves_constants_and_validates_steps() {
        let c = Tensor::filled(16, 16, 3, 0.42);
        let mut o = SurrogateOracle::new();
        let out = o.diffusion_roundtrip(&c, 5, 25, 0).unwrap();
        assert!(out.sub(&c).max_abs() < 1e-12);
        assert!(o.diffusion_roundtrip(&c, 0, 25, 0).is_err());
        assert!(o.diffusion_roundtrip(&c, 26, 25, 0).is_err());
    }

    #[test]
    fn roundtrip_on_impulse_is_scaled_high_pass() {
        let mut img = Tensor::zeros(16, 16, 1);
        img.set(8, 8, 0, 1.0);
        let mut o = SurrogateOracle::new();
        let out = o.diffusion_roundtrip(&img, 5, 25, 0).unwrap();
        let k = gaussian_kernel_5x5(1.0);
        for y in 0..16 {
            for x in 0..16 {
                let (dy, dx) = (y as isize - 8, x as isize - 8);
                let blur = if dy.abs() <= 2 && dx.abs() <= 2 {
                    k[((2 - dy) * 5 + (2 - dx)) as usize]
                } else {
                    0.0
                };
                let want = img.get(y, x, 0) + 1.5 * (img.get(y, x, 0) - blur);
                assert!((out.get(y, x, 0) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spatial_distance_zero_and_symmetric() {
        let a = ramp(16, 18, 3, 0.2);
        let b = ramp(16, 18, 3, 0.21);
        let mut o = SurrogateOracle::new();
        assert_eq!(o.spatial_distance(&a, &a).unwrap().max(), 0.0);
        let ab = o.spatial_distance(&a, &b).unwrap();
        let ba = o.spatial_distance(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert!(ab.min() >= 0.0);
    }

    #[test]
    fn disabled_capability_is_unsupported() {
        let a = ramp(16, 16, 3, 0.2);
        let mut o = SurrogateOracle::new().with_capabilities(Capabilities {
            diffusion_roundtrip: false,
            ..Capabilities::ALL
        });
        assert!(matches!(o.diffusion_roundtrip(&a, 5, 25, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn text_embedding_is_unit_and_prompt_dependent() {
        let o = SurrogateOracle::new();
        let a = o.text_embedding("Noise-free image");
        let b = o.text_embedding("noisy image");
        assert!((a.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_ne!(a, b);
    }
}
