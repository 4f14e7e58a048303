use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::address::{AddressMapping, MapField};
use crate::copy::CopyMechanism;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    pub channels: usize,
    pub ranks_per_channel: usize,
    pub banks_per_rank: usize,
    pub subarrays_per_bank: usize,
    pub rows_per_subarray: usize,
    pub columns_per_row: usize,
    pub cacheline_bytes: usize,
    /// Rank-level row size; must equal `columns_per_row * cacheline_bytes`.
    pub row_bytes: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 8,
            subarrays_per_bank: 16,
            rows_per_subarray: 512,
            columns_per_row: 128,
            cacheline_bytes: 64,
            row_bytes: 8192,
        }
    }
}

impl Geometry {
    pub fn rows_per_bank(&self) -> usize {
        self.subarrays_per_bank * self.rows_per_subarray
    }

    pub fn banks_per_channel(&self) -> usize {
        self.ranks_per_channel * self.banks_per_rank
    }

    pub fn total_bytes(&self) -> u64 {
        (self.channels * self.banks_per_channel()) as u64
            * self.rows_per_bank() as u64
            * self.row_bytes as u64
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("geometry.channels", self.channels),
            ("geometry.ranks_per_channel", self.ranks_per_channel),
            ("geometry.banks_per_rank", self.banks_per_rank),
            ("geometry.subarrays_per_bank", self.subarrays_per_bank),
            ("geometry.rows_per_subarray", self.rows_per_subarray),
            ("geometry.columns_per_row", self.columns_per_row),
            ("geometry.cacheline_bytes", self.cacheline_bytes),
            ("geometry.row_bytes", self.row_bytes),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        if self.row_bytes != self.columns_per_row * self.cacheline_bytes {
            return Err(invalid(
                "geometry.row_bytes",
                format!(
                    "{} != columns_per_row ({}) * cacheline_bytes ({})",
                    self.row_bytes, self.columns_per_row, self.cacheline_bytes
                ),
            ));
        }
        Ok(())
    }
}

/// DRAM timing in nanoseconds. Defaults are DDR3-1600 (11-11-11).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingParams {
    #[serde(rename = "tCK")]
    pub t_ck: f64,
    #[serde(rename = "tRCD")]
    pub t_rcd: f64,
    #[serde(rename = "tRAS")]
    pub t_ras: f64,
    #[serde(rename = "tRP")]
    pub t_rp: f64,
    #[serde(rename = "tCL")]
    pub t_cl: f64,
    #[serde(rename = "tWR")]
    pub t_wr: f64,
    #[serde(rename = "tRTP")]
    pub t_rtp: f64,
    #[serde(rename = "tCCD")]
    pub t_ccd: f64,
    #[serde(rename = "tBL")]
    pub t_bl: f64,
    #[serde(rename = "tRRD")]
    pub t_rrd: f64,
    #[serde(rename = "tFAW")]
    pub t_faw: f64,
    /// Latency of one row-buffer movement hop.
    #[serde(rename = "tRBM")]
    pub t_rbm: f64,
    /// Precharge latency with a linked neighbor. When absent it is derived
    /// from `tRP` (see [`TimingParams::t_rp_linked`]).
    #[serde(rename = "tRP_linked", skip_serializing_if = "Option::is_none")]
    pub t_rp_linked: Option<f64>,
    /// Destination-activation residual of an inter-subarray copy: the time
    /// beyond tRAS needed to restore a row from a buffer latched by RBM.
    pub t_commit: f64,
    /// Time to move a full row across one link, used for bandwidth figures.
    pub rbm_row_transfer_ns: f64,
}

/// Nominal precharge that the 5 ns linked-precharge figure was measured
/// against, and the resulting speedup ratio.
const LINKED_REFERENCE_TRP: f64 = 13.0;
const LINKED_DEFAULT_NS: f64 = 5.0;
const LINKED_RATIO: f64 = LINKED_REFERENCE_TRP / LINKED_DEFAULT_NS;
const DDR3_1600_TRP: f64 = 13.75;

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            t_ck: 1.25,
            t_rcd: 13.75,
            t_ras: 35.0,
            t_rp: DDR3_1600_TRP,
            t_cl: 13.75,
            t_wr: 15.0,
            t_rtp: 7.5,
            t_ccd: 5.0,
            t_bl: 5.0,
            t_rrd: 6.25,
            t_faw: 30.0,
            t_rbm: 8.0,
            t_rp_linked: None,
            t_commit: 56.75,
            rbm_row_transfer_ns: 16.384,
        }
    }
}

impl TimingParams {
    /// Linked precharge latency. Explicit values win; otherwise the stock
    /// DDR3-1600 tRP keeps 5 ns and any other tRP is divided by 2.6.
    pub fn t_rp_linked(&self) -> f64 {
        match self.t_rp_linked {
            Some(v) => v,
            None if self.t_rp == DDR3_1600_TRP => LINKED_DEFAULT_NS,
            None => self.t_rp / LINKED_RATIO,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let values = [
            ("timing.tCK", self.t_ck),
            ("timing.tRCD", self.t_rcd),
            ("timing.tRAS", self.t_ras),
            ("timing.tRP", self.t_rp),
            ("timing.tCL", self.t_cl),
            ("timing.tWR", self.t_wr),
            ("timing.tRTP", self.t_rtp),
            ("timing.tCCD", self.t_ccd),
            ("timing.tBL", self.t_bl),
            ("timing.tRRD", self.t_rrd),
            ("timing.tFAW", self.t_faw),
            ("timing.tRBM", self.t_rbm),
            ("timing.tRP_linked", self.t_rp_linked()),
            ("timing.rbm_row_transfer_ns", self.rbm_row_transfer_ns),
        ];
        for (field, v) in values {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, format!("must be > 0 (got {v})")));
            }
        }
        if !(self.t_commit.is_finite() && self.t_commit >= 0.0) {
            return Err(invalid("timing.t_commit", "must be >= 0"));
        }
        if self.t_ras < self.t_rcd {
            return Err(invalid("timing.tRAS", "must be >= tRCD"));
        }
        if self.t_rp_linked() > self.t_rp {
            return Err(invalid("timing.tRP_linked", "must be <= tRP"));
        }
        Ok(())
    }
}

/// Per-command energies in microjoules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyParams {
    pub e_act: f64,
    pub e_pre: f64,
    pub e_rd: f64,
    pub e_wr: f64,
    pub e_io_per_line: f64,
    pub e_rbm_per_hop: f64,
}

impl Default for EnergyParams {
    /// Fit of the per-command energies to the published 8 KB copy
    /// energies; regenerate with `lisa-sim fit-energy`.
    fn default() -> Self {
        EnergyParams {
            e_act: 0.018260518336628995,
            e_pre: 0.023478963326742035,
            e_rd: 0.007997409640231379,
            e_wr: 0.007997409640231374,
            e_io_per_line: 0.015895250659273556,
            e_rbm_per_hop: 0.005610602377813279,
        }
    }
}

impl EnergyParams {
    fn validate(&self) -> Result<(), ConfigError> {
        let values = [
            ("energy.e_act", self.e_act),
            ("energy.e_pre", self.e_pre),
            ("energy.e_rd", self.e_rd),
            ("energy.e_wr", self.e_wr),
            ("energy.e_io_per_line", self.e_io_per_line),
            ("energy.e_rbm_per_hop", self.e_rbm_per_hop),
        ];
        for (field, v) in values {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, format!("must be >= 0 (got {v})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingConfig {
    /// Address fields from most- to least-significant bits.
    pub order: Vec<MapField>,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            order: vec![
                MapField::Row,
                MapField::Rank,
                MapField::Bank,
                MapField::Channel,
                MapField::Column,
                MapField::Offset,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VillaParams {
    pub fast_subarrays: Vec<usize>,
    /// Multiplier applied to tRCD, tRAS and tRP inside fast subarrays.
    pub fast_scale: f64,
    pub counters_per_bank: usize,
    pub counter_bits: u32,
    pub hot_rows: usize,
    pub epoch_length: u64,
    pub benefit_bits: u32,
    /// Copy mechanism used to move rows into the fast subarray.
    pub fill_mechanism: CopyMechanism,
}

impl Default for VillaParams {
    fn default() -> Self {
        VillaParams {
            fast_subarrays: vec![0],
            fast_scale: 0.55,
            counters_per_bank: 1024,
            counter_bits: 8,
            hot_rows: 16,
            epoch_length: 100_000,
            benefit_bits: 8,
            fill_mechanism: CopyMechanism::LisaRisc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PagePolicy {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerParams {
    pub queue_capacity: usize,
    pub page_policy: PagePolicy,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            queue_capacity: 32,
            page_policy: PagePolicy::Open,
        }
    }
}

/// Complete DRAM subsystem description.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DramConfig {
    pub geometry: Geometry,
    pub timing: TimingParams,
    pub energy: EnergyParams,
    pub mapping: MappingConfig,
    pub villa: VillaParams,
    pub controller: ControllerParams,
}

impl DramConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: DramConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.geometry.validate()?;
        self.timing.validate()?;
        self.energy.validate()?;
        AddressMapping::new(&self.mapping, &self.geometry)?;
        let v = &self.villa;
        if v.fast_subarrays.is_empty() {
            return Err(invalid("villa.fast_subarrays", "at least one fast subarray"));
        }
        if v.fast_subarrays.len() >= self.geometry.subarrays_per_bank {
            return Err(invalid("villa.fast_subarrays", "leaves no normal subarray"));
        }
        for &s in &v.fast_subarrays {
            if s >= self.geometry.subarrays_per_bank {
                return Err(invalid(
                    "villa.fast_subarrays",
                    format!("subarray {s} out of range"),
                ));
            }
        }
        if !(v.fast_scale > 0.0 && v.fast_scale <= 1.0) {
            return Err(invalid("villa.fast_scale", "must lie in (0, 1]"));
        }
        if v.counters_per_bank == 0 {
            return Err(invalid("villa.counters_per_bank", "must be at least 1"));
        }
        if !(1..=16).contains(&v.counter_bits) {
            return Err(invalid("villa.counter_bits", "must lie in 1..=16"));
        }
        if !(1..=16).contains(&v.benefit_bits) {
            return Err(invalid("villa.benefit_bits", "must lie in 1..=16"));
        }
        if v.epoch_length == 0 {
            return Err(invalid("villa.epoch_length", "must be at least 1"));
        }
        if !matches!(
            v.fill_mechanism,
            CopyMechanism::LisaRisc | CopyMechanism::RowCloneInterSA | CopyMechanism::MemcpyChannel
        ) {
            return Err(invalid(
                "villa.fill_mechanism",
                "must be an intra-bank inter-subarray mechanism",
            ));
        }
        if self.controller.queue_capacity == 0 {
            return Err(invalid("controller.queue_capacity", "must be at least 1"));
        }
        Ok(())
    }

    pub fn address_mapping(&self) -> AddressMapping {
        AddressMapping::new(&self.mapping, &self.geometry).expect("validated mapping")
    }
}
