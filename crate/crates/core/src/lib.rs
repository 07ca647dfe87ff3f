//! Simulation and analysis toolkit for the Trickle dissemination algorithm
//! with a fixed or density-adaptive redundancy constant.
//!
//! * [`trickle`]: per-node timer state machine and redundancy policies.
//! * [`topology`]: complete, star and random geometric graphs.
//! * [`sim`]: deterministic discrete-event engine and batch runner.
//! * [`metrics`]: per-degree probabilities, mean `k`, window counts, fairness.
//! * [`analysis`]: star-network Markov chains, series and densities.
//! * [`rpl`]: upward-route RPL DODAG formation on top of Trickle.
//! * [`experiment`]: JSON-configured sweeps writing CSV tables.

pub mod analysis;
pub mod experiment;
pub mod metrics;
pub mod num;
pub mod rpl;
pub mod sim;
pub mod topology;
pub mod trickle;

pub use num::Real;

/// Simulated time. Units are whatever `i_min`/`i_max` are expressed in.
pub type Time = f64;

pub type MarkovStarResultF64 = analysis::MarkovStarResult<f64>;
pub type MarkovStarResultF32 = analysis::MarkovStarResult<f32>;
pub type AsymptoticStarF64 = analysis::AsymptoticStar<f64>;
pub type AsymptoticStarF32 = analysis::AsymptoticStar<f32>;
pub type StationaryDensityF64 = analysis::StationaryDensity<f64>;
pub type StationaryDensityF32 = analysis::StationaryDensity<f32>;
pub type MonteCarloEstimateF64 = analysis::MonteCarloEstimate<f64>;
pub type FixedKStarF64 = analysis::FixedKStar<f64>;

/// Derives an independent child seed for stream `stream` of `seed`.
///
/// The rule is `splitmix64(seed ^ splitmix64(stream))`; the inner mix keeps
/// consecutive stream indices far apart before they meet the parent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
