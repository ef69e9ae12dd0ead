//! Effective sample size and systematic resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `(Σw)² / Σw²` for non-negative weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Domain("weights must be finite and non-negative".into()));
    }
    let logs: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    ess_log(&logs)
}

/// Effective sample size from log-weights, shifted by the maximum.
pub fn ess_log(log_weights: &[f64]) -> Result<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::Domain("effective sample size needs a positive weight".into()));
    }
    let (mut s, mut s2) = (0.0, 0.0);
    for &l in log_weights {
        let a = (l - max).exp();
        s += a;
        s2 += a * a;
    }
    Ok(s * s / s2)
}

fn normalized(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Domain("no weights to resample".into()));
    }
    let total: f64 = weights.iter().sum();
    if !total.is_finite() || total <= 0.0 || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Domain("weights must be non-negative with a positive finite sum".into()));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Offspring counts of systematic resampling driven by the single uniform
/// `u ∈ [0, 1)`.
pub fn systematic_counts(weights: &[f64], count: usize, u: f64) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::Domain("resampling needs a positive offspring count".into()));
    }
    let w = normalized(weights)?;
    let c = count as f64;
    // Points (u + k)/count for k < count; parent i receives the points in
    // [C_{i-1}, C_i), that is ⌈c C_i - u⌉ - ⌈c C_{i-1} - u⌉ of them.
    let mut out = Vec::with_capacity(w.len());
    let mut cum = 0.0;
    let mut prev = 0usize;
    for (i, wi) in w.iter().enumerate() {
        cum += wi;
        let upto = if i + 1 == w.len() {
            count
        } else {
            ((c * cum - u).ceil().max(0.0) as usize).min(count)
        };
        let upto = upto.max(prev);
        out.push(upto - prev);
        prev = upto;
    }
    Ok(out)
}

/// Parent index of each of `count` offspring, in increasing parent order.
pub fn systematic_resample(weights: &[f64], count: usize, seed: u64) -> Result<Vec<usize>> {
    let u = ChaCha8Rng::seed_from_u64(seed).random::<f64>();
    systematic_indices(weights, count, u)
}

pub fn systematic_indices(weights: &[f64], count: usize, u: f64) -> Result<Vec<usize>> {
    let counts = systematic_counts(weights, count, u)?;
    let mut out = Vec::with_capacity(count);
    for (i, &k) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(i, k));
    }
    Ok(out)
}
