//! Central-difference gradient checking.

use rand::Rng;

use super::Model;
use crate::error::{Error, Result};

/// Anything whose parameters can be addressed as one flat vector.
pub trait FlatParams {
    fn num_params(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, v: f64);
}

impl FlatParams for Vec<f64> {
    fn num_params(&self) -> usize {
        self.len()
    }
    fn param(&self, i: usize) -> f64 {
        self[i]
    }
    fn set_param(&mut self, i: usize, v: f64) {
        self[i] = v;
    }
}

impl FlatParams for Model<f64> {
    fn num_params(&self) -> usize {
        Model::num_params(self)
    }
    fn param(&self, i: usize) -> f64 {
        Model::param(self, i)
    }
    fn set_param(&mut self, i: usize, v: f64) {
        Model::set_param(self, i, v)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Max relative error between `analytic` and central differences of
/// `loss` over `coords`. Parameters are restored afterwards.
pub fn grad_check<P: FlatParams>(
    params: &mut P,
    mut loss: impl FnMut(&P) -> Result<f64>,
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = params.param(i);
        params.set_param(i, orig + eps);
        let up = loss(params);
        params.set_param(i, orig - eps);
        let down = loss(params);
        params.set_param(i, orig);
        let (up, down) = (up?, down?);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Picks `n` distinct coordinates, preferring ones whose analytic gradient
/// is not negligible; ReLU-dead coordinates would only test `0 == 0`.
pub fn sample_coords<R: Rng>(analytic: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut live: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i].abs() > 1e-6).collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n && !live.is_empty() {
        let k = rng.gen_range(0..live.len());
        out.push(live.swap_remove(k));
    }
    let mut rest: Vec<usize> = (0..analytic.len()).filter(|i| !out.contains(i)).collect();
    while out.len() < n && !rest.is_empty() {
        let k = rng.gen_range(0..rest.len());
        out.push(rest.swap_remove(k));
    }
    out
}
