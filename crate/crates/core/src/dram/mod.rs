//! DRAM organization: geometry, timing and energy tables, address mapping and
//! unit conversions. Everything in here is immutable once a [`DramConfig`]
//! has been validated.

mod address;
mod config;

pub use address::{AddressError, AddressMapping, Coordinates, MapField};
pub use config::{
    ConfigError, ControllerParams, DramConfig, EnergyParams, Geometry, MappingConfig,
    PagePolicy, TimingParams, VillaParams,
};

use crate::bank::Cycle;

/// Converts a duration in nanoseconds to whole clock cycles, rounding up.
///
/// A small relative epsilon absorbs binary representation error so that
/// durations which are exact multiples of `t_ck` (13.75 / 1.25) do not round
/// up an extra cycle.
pub fn ns_to_cycles(t_ns: f64, t_ck: f64) -> Cycle {
    debug_assert!(t_ns >= 0.0 && t_ck > 0.0);
    let ratio = t_ns / t_ck;
    (ratio - 1e-9 * ratio.max(1.0)).ceil().max(0.0) as Cycle
}

/// Number of LISA hops between two subarrays of the same bank.
pub fn hops_between(src_sub: usize, dst_sub: usize) -> usize {
    src_sub.abs_diff(dst_sub)
}

/// Per-subarray activation/precharge timing, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubarrayTiming {
    pub t_rcd: f64,
    pub t_ras: f64,
    pub t_rp: f64,
    pub t_rp_linked: f64,
}

/// Timing table plus the set of fast (short-bitline) subarrays whose
/// activation, restoration and precharge run at a reduced latency.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingModel {
    pub params: TimingParams,
    fast: Vec<bool>,
    fast_scale: f64,
}

impl TimingModel {
    /// Homogeneous DRAM: every subarray uses the nominal timing.
    pub fn uniform(params: TimingParams, subarrays: usize) -> Self {
        TimingModel {
            params,
            fast: vec![false; subarrays],
            fast_scale: 1.0,
        }
    }

    /// Heterogeneous DRAM with the fast subarrays listed in `villa`.
    pub fn heterogeneous(cfg: &DramConfig) -> Self {
        let mut fast = vec![false; cfg.geometry.subarrays_per_bank];
        for &s in &cfg.villa.fast_subarrays {
            fast[s] = true;
        }
        TimingModel {
            params: cfg.timing.clone(),
            fast,
            fast_scale: cfg.villa.fast_scale,
        }
    }

    pub fn is_fast(&self, sub: usize) -> bool {
        self.fast.get(sub).copied().unwrap_or(false)
    }

    pub fn subarray(&self, sub: usize) -> SubarrayTiming {
        let p = &self.params;
        let scale = if self.is_fast(sub) { self.fast_scale } else { 1.0 };
        SubarrayTiming {
            t_rcd: p.t_rcd * scale,
            t_ras: p.t_ras * scale,
            t_rp: p.t_rp * scale,
            t_rp_linked: p.t_rp_linked() * scale,
        }
    }

    pub fn subarrays(&self) -> usize {
        self.fast.len()
    }

    pub fn cycles(&self, t_ns: f64) -> Cycle {
        ns_to_cycles(t_ns, self.params.t_ck)
    }
}
