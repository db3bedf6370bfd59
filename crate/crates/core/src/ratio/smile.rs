//! Clipped KL estimation from precomputed log-density-ratios.
//!
//! Given f = log(dP/dQ) evaluated on samples of P and of Q,
//!
//! KL(P‖Q) ≈ mean_P[f] − log mean_Q[clip(exp f, e^{−τ}, e^{τ})]
//!
//! Only the exponential term over Q is clipped; the plain expectation over P
//! is not. τ = ∞ disables clipping and recovers the unclipped
//! Donsker-Varadhan-style estimate.

use crate::error::{Error, Result};

fn check(values: &[f64], side: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidArg(format!(
            "smile_kl: empty log-ratio vector on {side}"
        )));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArg(format!(
            "smile_kl: non-finite log-ratio at index {pos} on {side}"
        )));
    }
    Ok(())
}

/// Log of the mean of exp(v) over clamped values, computed via the shifted
/// log-sum-exp so large ratios cannot overflow.
fn log_mean_exp_clamped(values: &[f64], tau: f64) -> f64 {
    let clamp = |v: f64| v.clamp(-tau, tau);
    let max = values
        .iter()
        .map(|&v| clamp(v))
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|&v| (clamp(v) - max).exp()).sum();
    max + (sum / values.len() as f64).ln()
}

/// SMILE KL estimate from log-ratios evaluated on P-samples and Q-samples.
/// `tau` must be positive; `f64::INFINITY` means no clipping.
pub fn smile_kl(log_ratios_on_p: &[f64], log_ratios_on_q: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArg(format!(
            "smile_kl: tau must be positive, got {tau}"
        )));
    }
    check(log_ratios_on_p, "P")?;
    check(log_ratios_on_q, "Q")?;
    let mean_p: f64 =
        log_ratios_on_p.iter().sum::<f64>() / log_ratios_on_p.len() as f64;
    Ok(mean_p - log_mean_exp_clamped(log_ratios_on_q, tau))
}
