//! Cycle-level DRAM subsystem simulator with inter-subarray row-buffer
//! movement, in-DRAM bulk copy, fast-subarray caching and linked precharge.

#![allow(clippy::result_large_err)]

pub mod bank;
pub mod copy;
pub mod cpu;
pub mod dram;
pub mod experiment;
pub mod metrics;
pub mod sim;
pub mod controller;
pub mod villa;
