use crate::error::{Error, Result};
use crate::oracle::{GuidanceOracle, LossGrad, CLIP_PROMPT};
use crate::tensor::Tensor;

/// `−cos(u, v)` and its gradient with respect to `u`.
pub fn cosine_alignment(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>)> {
    if u.len() != v.len() {
        return Err(Error::InvalidOracle(format!(
            "embedding lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(nu > 0.0 && nv > 0.0) || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::InvalidOracle("zero-norm or non-finite embedding".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let cos = dot / (nu * nv);
    let grad = u
        .iter()
        .zip(v)
        .map(|(a, b)| -(b / (nu * nv) - cos * a / (nu * nu)))
        .collect();
    Ok((-cos, grad))
}

/// Text-alignment loss against the fixed noise-free prompt.
pub fn clip_alignment_loss<O: GuidanceOracle + ?Sized>(x_hat: &Tensor, oracle: &mut O) -> Result<LossGrad> {
    oracle.clip_align(x_hat, CLIP_PROMPT)
}
