use crate::error::{Error, Result};
use crate::num::Scalar;

/// `exp(γ·√n_ht) · ln(c_t + 1)`
pub fn transition_score<T: Scalar>(gamma: T, n_ht: u64, c_t: u64) -> Result<T> {
    if n_ht == 0 || c_t == 0 {
        return Err(Error::InvalidArgument(format!(
            "transition counts must be positive (n_ht = {n_ht}, c_t = {c_t})"
        )));
    }
    if !(gamma >= T::zero() && gamma <= T::one()) {
        return Err(Error::InvalidArgument(format!("attention weight {gamma} outside [0, 1]")));
    }
    let n = T::of(n_ht as f64);
    let c = T::of(c_t as f64);
    Ok((gamma * n.sqrt()).exp() * c.ln_1p())
}

/// Scales raw scores to sum to one.
pub fn normalize_transitions<T: Scalar>(raw: &[T]) -> Result<Vec<T>> {
    if raw.iter().any(|x| !x.is_finite() || *x < T::zero()) {
        return Err(Error::InvalidArgument("raw transition scores must be finite and nonnegative".into()));
    }
    let total = raw.iter().fold(T::zero(), |a, &b| a + b);
    if total <= T::zero() {
        return Err(Error::InvalidArgument("all raw transition scores are zero".into()));
    }
    Ok(raw.iter().map(|&x| x / total).collect())
}
