use serde::Serialize;

use super::AnalysisError;
use crate::num::Real;

/// Rough broadcast probability `min(1, k / (N + 1))` of a node with `N`
/// neighbours under fixed `k`: it broadcasts when it is among the first `k`
/// of its `N + 1`-node neighbourhood to schedule.
pub fn fixed_k_probability_estimate<T: Real>(k: u32, neighbors: usize) -> T {
    let ratio = T::lit(f64::from(k)) / T::count(neighbors + 1);
    ratio.min(T::one())
}

/// Synchronized star with `n` leaves under fixed `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedKStar<T> {
    pub central: T,
    pub leaf: T,
    pub mean_broadcasts: T,
}

pub fn fixed_k_star_predictions<T: Real>(n: usize, k: u32) -> Result<FixedKStar<T>, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::NoLeaves);
    }
    if k == 0 || k as usize >= n + 1 {
        return Err(AnalysisError::BadK { k, limit: n + 1 });
    }
    let nodes = T::count(n + 1);
    let leaves = T::count(n);
    let central = T::lit(f64::from(k)) / nodes;
    if k == 1 {
        // leaves are silenced exactly when the hub goes first
        Ok(FixedKStar {
            central,
            leaf: leaves / nodes,
            mean_broadcasts: (leaves * leaves + T::one()) / nodes,
        })
    } else {
        Ok(FixedKStar { central, leaf: T::one(), mean_broadcasts: leaves + central })
    }
}
