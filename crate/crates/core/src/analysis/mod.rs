//! Analytical oracles for Trickle on a star network.
//!
//! * [`markov`]: the exact finite-`n` chain of the hub's redundancy constant
//!   for `alpha = 1`, solved densely.
//! * [`asymptotic`]: the `n -> inf` kernel on `[0, alpha]` with an atom at
//!   `alpha`, its return-time series for `p_alpha`, a Monte Carlo estimator,
//!   and the transient and stationary densities.
//! * [`estimates`]: closed forms for fixed `k`.
//!
//! All routines are generic over [`Real`](crate::num::Real).

pub mod asymptotic;
pub mod estimates;
pub mod markov;
pub mod quadrature;

use thiserror::Error;

pub use asymptotic::{
    asymptotic_star, kernel_chain_monte_carlo, kernel_step, p_alpha_series, p_star_alpha,
    return_time_tail, stationary_density, transient_density, AsymptoticStar, MonteCarloEstimate,
    StationaryDensity, DEFAULT_DENSITY_DEPTH, SERIES_MAX_TERMS, SERIES_TOLERANCE,
};
pub use estimates::{fixed_k_probability_estimate, fixed_k_star_predictions, FixedKStar};
pub use markov::{markov_star, star_transition_matrix, steady_state, DenseMatrix, MarkovStarResult};
pub use quadrature::adaptive_simpson;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("alpha must lie in {range}, got {alpha}")]
    AlphaOutOfRange { alpha: f64, range: &'static str },
    #[error("star needs at least one leaf")]
    NoLeaves,
    #[error("matrix must be square and non-empty, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("linear system is singular at pivot {0}")]
    Singular(usize),
    #[error("steady-state residual {residual:e} exceeds {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
    #[error("step index must be at least 1")]
    ZeroStep,
    #[error("x = {x} is outside the continuous part [0, {alpha})")]
    OutsideSupport { x: f64, alpha: f64 },
    #[error("k = {k} must satisfy 1 <= k < n + 1 = {limit}")]
    BadK { k: u32, limit: usize },
    #[error("Monte Carlo needs at least {min} steps, got {got}")]
    TooFewSteps { min: u64, got: u64 },
}
