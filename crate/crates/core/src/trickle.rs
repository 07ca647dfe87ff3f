//! Per-node Trickle timer with a pluggable redundancy policy.
//!
//! The state machine follows the five classic rules:
//!
//! 1. at interval start, reset `c` and draw `t` uniformly in `[I/2, I]`;
//! 2. a consistent message increments `c`;
//! 3. at `t`, broadcast iff `c < k`;
//! 4. at `I`, set `I = min(2I, I_max)` and start a new interval;
//! 5. an inconsistent message with `I > I_min` resets `I` to `I_min`.
//!
//! With [`RedundancyPolicy::Adaptive`], rule 4 additionally sets `k = f(c)`
//! from the counter of the interval that just ended, so that `k` tracks the
//! local neighbourhood density.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Time;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrickleError {
    #[error("i_min must be positive and finite, got {0}")]
    BadIntervalMin(Time),
    #[error("i_max ({i_max}) must be at least i_min ({i_min})")]
    BadIntervalMax { i_min: Time, i_max: Time },
    #[error("redundancy constant k must be at least 1")]
    ZeroK,
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("k_min must be at least 1")]
    ZeroKMin,
    #[error("k_max ({k_max}) must be at least k_min ({k_min})")]
    KMaxBelowKMin { k_min: u32, k_max: u32 },
    #[error("node {0}: broadcast timer fired twice in one interval")]
    TimerAlreadyFired(usize),
}

/// How a node chooses its redundancy constant `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedundancyPolicy {
    /// Classic Trickle: `k` never changes.
    Fixed { k: u32 },
    /// `k = clamp(floor(alpha * c), k_min, k_max)` at every interval end.
    Adaptive { alpha: f64, k_min: u32, k_max: u32 },
}

impl RedundancyPolicy {
    pub fn validate(&self) -> Result<(), TrickleError> {
        match *self {
            RedundancyPolicy::Fixed { k } => {
                if k == 0 {
                    return Err(TrickleError::ZeroK);
                }
            }
            RedundancyPolicy::Adaptive { alpha, k_min, k_max } => {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(TrickleError::AlphaOutOfRange(alpha));
                }
                if k_min == 0 {
                    return Err(TrickleError::ZeroKMin);
                }
                if k_max < k_min {
                    return Err(TrickleError::KMaxBelowKMin { k_min, k_max });
                }
            }
        }
        Ok(())
    }

    /// The `k` a freshly booted node starts with. Adaptive nodes start at
    /// `k_max` and adapt downwards.
    pub fn initial_k(&self) -> u32 {
        match *self {
            RedundancyPolicy::Fixed { k } => k,
            RedundancyPolicy::Adaptive { k_max, .. } => k_max,
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, RedundancyPolicy::Adaptive { .. })
    }

    /// Short label used in CSV output, e.g. `fixed-k5` or `adaptive-a0.667`.
    pub fn label(&self) -> String {
        match *self {
            RedundancyPolicy::Fixed { k } => format!("fixed-k{k}"),
            RedundancyPolicy::Adaptive { alpha, k_min, k_max } => {
                format!("adaptive-a{alpha:.3}-k{k_min}..{k_max}")
            }
        }
    }
}

/// The redundancy function `f(c)` applied at interval end.
///
/// `floor` is taken on the `f64` product `alpha * c`; an exactly integral
/// product stays that integer.
pub fn redundancy_update(counter: u32, policy: &RedundancyPolicy) -> u32 {
    match *policy {
        RedundancyPolicy::Fixed { k } => k,
        RedundancyPolicy::Adaptive { alpha, k_min, k_max } => {
            let scaled = alpha * f64::from(counter);
            if scaled < f64::from(k_min) {
                k_min
            } else if scaled > f64::from(k_max) {
                k_max
            } else {
                // In range [k_min, k_max], so the cast cannot truncate.
                scaled.floor() as u32
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrickleParams {
    pub i_min: Time,
    pub i_max: Time,
    pub policy: RedundancyPolicy,
}

impl TrickleParams {
    pub fn new(i_min: Time, i_max: Time, policy: RedundancyPolicy) -> Result<Self, TrickleError> {
        let params = TrickleParams { i_min, i_max, policy };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), TrickleError> {
        if !(self.i_min.is_finite() && self.i_min > 0.0) {
            return Err(TrickleError::BadIntervalMin(self.i_min));
        }
        if !(self.i_max.is_finite() && self.i_max >= self.i_min) {
            return Err(TrickleError::BadIntervalMax { i_min: self.i_min, i_max: self.i_max });
        }
        self.policy.validate()
    }
}

/// Outcome of the broadcast timer `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BroadcastDecision {
    pub fired: bool,
    pub counter_at_t: u32,
    pub k_at_t: u32,
}

/// Protocol variables of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrickleNodeState {
    pub node_id: usize,
    pub interval_len: Time,
    pub interval_start: Time,
    pub broadcast_time: Time,
    pub counter: u32,
    pub k: u32,
    pub broadcast_fired: bool,
}

impl TrickleNodeState {
    /// A node that has not yet started its first interval. Call
    /// [`start_interval`](Self::start_interval) before using it.
    pub fn new(node_id: usize, interval_len: Time, policy: &RedundancyPolicy) -> Self {
        TrickleNodeState {
            node_id,
            interval_len,
            interval_start: 0.0,
            broadcast_time: 0.0,
            counter: 0,
            k: policy.initial_k(),
            broadcast_fired: false,
        }
    }

    pub fn interval_end(&self) -> Time {
        self.interval_start + self.interval_len
    }

    /// Rule 1.
    pub fn start_interval<R: Rng + ?Sized>(&mut self, now: Time, rng: &mut R) {
        let half = self.interval_len / 2.0;
        self.interval_start = now;
        self.counter = 0;
        self.broadcast_fired = false;
        self.broadcast_time = now + half + rng.gen::<f64>() * half;
    }

    /// Rule 2.
    pub fn on_hear_consistent(&mut self) {
        self.counter += 1;
    }

    /// Rule 3. The node's own transmission does not count towards its `c`.
    pub fn on_timer_t(&mut self) -> Result<BroadcastDecision, TrickleError> {
        if self.broadcast_fired {
            return Err(TrickleError::TimerAlreadyFired(self.node_id));
        }
        self.broadcast_fired = true;
        Ok(BroadcastDecision {
            fired: self.counter < self.k,
            counter_at_t: self.counter,
            k_at_t: self.k,
        })
    }

    /// Rule 4 (4* under an adaptive policy). Returns `(old_k, new_k)` when
    /// `k` changed.
    ///
    /// The new `k` is computed from the ending interval's final counter,
    /// before the counter is cleared by the new interval.
    pub fn on_interval_end<R: Rng + ?Sized>(
        &mut self,
        now: Time,
        params: &TrickleParams,
        rng: &mut R,
    ) -> Option<(u32, u32)> {
        let old_k = self.k;
        self.k = redundancy_update(self.counter, &params.policy);
        self.interval_len = (2.0 * self.interval_len).min(params.i_max);
        self.start_interval(now, rng);
        (old_k != self.k).then_some((old_k, self.k))
    }

    /// Rule 5. Returns whether the timer was reset.
    pub fn on_hear_inconsistent<R: Rng + ?Sized>(
        &mut self,
        now: Time,
        params: &TrickleParams,
        rng: &mut R,
    ) -> bool {
        if self.interval_len > params.i_min {
            self.interval_len = params.i_min;
            self.start_interval(now, rng);
            true
        } else {
            false
        }
    }
}
