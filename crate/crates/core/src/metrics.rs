//! Busy-poll utilization.
//!
//! A polling loop keeps its core at 100% regardless of load, so utilization
//! is measured from the loop itself: `REF` accumulates every cycle of every
//! iteration, `OPS` only the cycles of iterations that received packets.
//! `util = OPS / REF`. Because a single packet per iteration already yields
//! `util = 1`, `util+` additionally weights it by the mean burst fill
//! `n_p / (n_b * B)`.

use std::ops::{Add, AddAssign};

use crate::cost::Cycles;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UtilCounters {
    /// Cycles of all loop iterations.
    pub ref_cycles: Cycles,
    /// Cycles of iterations that processed at least one packet.
    pub ops_cycles: Cycles,
    /// Packets processed.
    pub n_p: u64,
    /// Non-empty polls.
    pub n_b: u64,
}

impl UtilCounters {
    pub fn snapshot_and_reset(&mut self) -> UtilCounters {
        std::mem::take(self)
    }

    pub fn is_consistent(&self) -> bool {
        self.ops_cycles <= self.ref_cycles
            && self.n_p >= self.n_b
            && (self.n_b > 0 || (self.n_p == 0 && self.ops_cycles == 0))
    }
}

impl Add for UtilCounters {
    type Output = UtilCounters;

    fn add(mut self, rhs: UtilCounters) -> UtilCounters {
        self += rhs;
        self
    }
}

impl AddAssign for UtilCounters {
    fn add_assign(&mut self, rhs: UtilCounters) {
        self.ref_cycles += rhs.ref_cycles;
        self.ops_cycles += rhs.ops_cycles;
        self.n_p += rhs.n_p;
        self.n_b += rhs.n_b;
    }
}

impl std::iter::Sum for UtilCounters {
    fn sum<I: Iterator<Item = UtilCounters>>(iter: I) -> Self {
        iter.fold(UtilCounters::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UtilConfig {
    /// Maximum feasible burst size.
    pub b: u64,
    /// Cap the burst factor at one.
    pub clamp: bool,
}

impl UtilConfig {
    /// Single default queue: `B = 32`, unclamped.
    pub const SINGLE_QUEUE: UtilConfig = UtilConfig { b: 32, clamp: false };
    /// Several polled queues: `B = 16`, clamped.
    pub const MULTI_QUEUE: UtilConfig = UtilConfig { b: 16, clamp: true };
}

pub fn compute_util(c: &UtilCounters) -> Result<f64> {
    if c.ref_cycles == 0 {
        return Err(Error::UndefinedWindow);
    }
    Ok(c.ops_cycles as f64 / c.ref_cycles as f64)
}

/// `util * (1 + n_p / (n_b * B)) / 2`, or `util * min(1, ...)` when clamped.
/// A window without any bursts has `util+ = 0`.
pub fn compute_util_plus(c: &UtilCounters, cfg: &UtilConfig) -> Result<f64> {
    let util = compute_util(c)?;
    if cfg.b == 0 {
        return Err(Error::Config("maximum burst size B must be at least 1".into()));
    }
    if c.n_b == 0 {
        return Ok(0.0);
    }
    let fill = c.n_p as f64 / (c.n_b as f64 * cfg.b as f64);
    let factor = (1.0 + fill) / 2.0;
    let factor = if cfg.clamp { factor.min(1.0) } else { factor };
    Ok(util * factor)
}
