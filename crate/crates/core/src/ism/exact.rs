//! Exact infinite-sites sampling probabilities by memoised recursion.

use std::collections::HashMap;

use super::proposals::{ism_coefficient, ism_moves, IsmMove};
use super::sample::IsmSample;
use crate::error::{Error, Result};

/// Largest sample size accepted by [`ism_exact_probability`].
pub const ISM_EXACT_CAP: u32 = 14;

type Key = Vec<(Vec<usize>, u32)>;

/// Probability of `s` with columns treated as labelled, so that a sample
/// shape with column automorphism group `G` has probability `p / |G|`.
pub fn ism_exact_probability(s: &IsmSample, theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta must be positive, got {theta}")));
    }
    if s.size() > ISM_EXACT_CAP {
        return Err(Error::CapExceeded { size: s.size(), cap: ISM_EXACT_CAP });
    }
    let mut memo = HashMap::new();
    Ok(solve(s, theta, &mut memo))
}

fn solve(s: &IsmSample, theta: f64, memo: &mut HashMap<Key, f64>) -> f64 {
    if s.size() == 1 {
        return if s.r() == 0 { 1.0 } else { 0.0 };
    }
    let key = s.canonical_key();
    if let Some(&p) = memo.get(&key) {
        return p;
    }
    let mut p = 0.0;
    for mv in ism_moves(s) {
        let c = ism_coefficient(s, mv, theta);
        let mut next = s.clone();
        match mv {
            IsmMove::Coalesce(j) => next.coalesce(j).expect("listed move"),
            IsmMove::Remove { row, column } => {
                next.remove_mutation(row, column).expect("listed move");
            }
        }
        p += c * solve(&next, theta, memo);
    }
    memo.insert(key, p);
    p
}
