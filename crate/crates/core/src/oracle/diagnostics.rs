//! Finite-difference spot checks of oracle gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GuidanceOracle, LspSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSpot {
    /// Flat index into the image tensor.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientSpot {
    /// `|a − n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

/// Compare `∇L_SP` at `count` random elements of `x_hat` against central
/// differences of the returned loss with step `h`. The same spec (and seed)
/// is used for every evaluation so stochastic terms are reproduced.
pub fn spot_check_lsp_gradient<O: GuidanceOracle + ?Sized>(
    oracle: &mut O,
    x_hat: &Tensor,
    spec: &LspSpec<'_>,
    count: usize,
    h: f64,
    seed: u64,
) -> Result<Vec<GradientSpot>> {
    if !(h > 0.0) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let base = oracle.eval_lsp(x_hat, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, x_hat.len(), count.min(x_hat.len()));
    let mut probe = x_hat.clone();
    let mut spots = Vec::with_capacity(picks.len());
    for i in picks.iter() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = oracle.eval_lsp(&probe, spec)?.loss;
        probe.data_mut()[i] = orig - h;
        let down = oracle.eval_lsp(&probe, spec)?.loss;
        probe.data_mut()[i] = orig;
        spots.push(GradientSpot {
            index: i,
            analytic: base.grad.data()[i],
            numeric: (up - down) / (2.0 * h),
        });
    }
    Ok(spots)
}
