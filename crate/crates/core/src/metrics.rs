//! Run statistics, weighted speedup and report serialization.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::bank::{CommandCounts, Cycle};
use crate::controller::{ControllerStats, MechanismStats};
use crate::dram::EnergyParams;
use crate::villa::VillaCounts;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("ipc lists differ in length ({shared} shared vs {alone} alone)")]
    Length { shared: usize, alone: usize },
    #[error("core {core} has non-positive alone IPC {ipc}")]
    Degenerate { core: usize, ipc: f64 },
}

/// `sum(shared[i] / alone[i])`.
pub fn weighted_speedup(shared: &[f64], alone: &[f64]) -> Result<f64, MetricsError> {
    if shared.len() != alone.len() {
        return Err(MetricsError::Length {
            shared: shared.len(),
            alone: alone.len(),
        });
    }
    let mut ws = 0.0;
    for (core, (s, a)) in shared.iter().zip(alone).enumerate() {
        if !a.is_finite() || *a <= 0.0 {
            return Err(MetricsError::Degenerate { core, ipc: *a });
        }
        ws += s / a;
    }
    Ok(ws)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CoreStats {
    pub retired: u64,
    pub cycles: u64,
    pub ipc: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CopyStats {
    pub copy_count: u64,
    pub total_latency_ns: f64,
    pub total_cycles: u64,
    pub total_energy_uj: f64,
}

impl From<&MechanismStats> for CopyStats {
    fn from(m: &MechanismStats) -> Self {
        CopyStats {
            copy_count: m.count,
            total_latency_ns: m.latency_ns,
            total_cycles: m.cycles,
            total_energy_uj: m.energy_uj,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct VillaStats {
    pub hits: u64,
    pub misses: u64,
    pub fills: u64,
    pub evictions: u64,
    pub writebacks: u64,
    pub hit_rate: f64,
}

impl From<&VillaCounts> for VillaStats {
    fn from(v: &VillaCounts) -> Self {
        VillaStats {
            hits: v.hits,
            misses: v.misses,
            fills: v.fills,
            evictions: v.evictions,
            writebacks: v.writebacks,
            hit_rate: v.hit_rate(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LipStats {
    pub linked_precharges: u64,
    pub plain_precharges: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReadStats {
    pub completed: u64,
    pub total_latency_cycles: u64,
    pub mean_latency_cycles: f64,
    pub row_hits: u64,
    pub row_misses: u64,
    /// Reads with latency below each power-of-two bound, keyed `lt_<bound>`.
    pub histogram: BTreeMap<String, u64>,
}

/// Energy split by command kind and by the activity that issued it.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnergyReport {
    pub total_uj: f64,
    pub by_command: BTreeMap<String, f64>,
    pub by_mechanism: BTreeMap<String, f64>,
    pub villa_fill_uj: f64,
    pub villa_writeback_uj: f64,
    /// Reads, writes and their row management.
    pub demand_uj: f64,
}

pub fn energy_report(counts: &CommandCounts, stats: &ControllerStats, e: &EnergyParams) -> EnergyReport {
    let by_command: BTreeMap<String, f64> = [
        ("act", counts.act as f64 * e.e_act),
        ("pre", counts.pre as f64 * e.e_pre),
        ("rd", counts.rd as f64 * e.e_rd),
        ("wr", counts.wr as f64 * e.e_wr),
        ("io", counts.io_lines as f64 * e.e_io_per_line),
        ("rbm", counts.rbm as f64 * e.e_rbm_per_hop),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let total_uj: f64 = by_command.values().sum();
    let by_mechanism: BTreeMap<String, f64> = stats
        .copies
        .iter()
        .map(|(m, s)| (m.to_string(), s.energy_uj))
        .collect();
    let copies: f64 = by_mechanism.values().sum();
    let villa_fill_uj = stats.villa_fills.energy_uj;
    let villa_writeback_uj = stats.villa_writebacks.energy_uj;
    // Rounding noise can push an all-copy run a hair below zero.
    let demand_uj = (total_uj - copies - villa_fill_uj - villa_writeback_uj).max(0.0);
    EnergyReport {
        total_uj,
        by_command,
        by_mechanism,
        villa_fill_uj,
        villa_writeback_uj,
        demand_uj,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub features: String,
    /// Cycle at which the last core finished.
    pub cycles: Cycle,
    pub cores: Vec<CoreStats>,
    pub copies: BTreeMap<String, CopyStats>,
    pub villa: VillaStats,
    pub lip: LipStats,
    pub reads: ReadStats,
    pub commands: CommandCounts,
    pub energy: EnergyReport,
}

impl RunStats {
    pub fn new(
        features: String,
        cycles: Cycle,
        cores: Vec<CoreStats>,
        controller: &ControllerStats,
        villa: &VillaCounts,
        commands: CommandCounts,
        e: &EnergyParams,
    ) -> Self {
        let histogram = controller
            .read_latency_histogram
            .iter()
            .map(|(&bits, &n)| (format!("lt_{}", 1u64 << bits), n))
            .collect();
        let reads = ReadStats {
            completed: controller.reads,
            total_latency_cycles: controller.read_latency_cycles,
            mean_latency_cycles: if controller.reads == 0 {
                0.0
            } else {
                controller.read_latency_cycles as f64 / controller.reads as f64
            },
            row_hits: controller.row_hits,
            row_misses: controller.row_misses,
            histogram,
        };
        RunStats {
            features,
            cycles,
            cores,
            copies: controller
                .copies
                .iter()
                .map(|(m, s)| (m.to_string(), CopyStats::from(s)))
                .collect(),
            villa: VillaStats::from(villa),
            lip: LipStats {
                linked_precharges: commands.pre_linked,
                plain_precharges: commands.pre - commands.pre_linked,
            },
            reads,
            energy: energy_report(&commands, controller, e),
            commands,
        }
    }

    pub fn ipcs(&self) -> Vec<f64> {
        self.cores.iter().map(|c| c.ipc).collect()
    }

    /// `section,key,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,key,value\n");
        let mut row = |section: &str, key: &str, value: String| {
            let _ = writeln!(out, "{section},{key},{value}");
        };
        row("run", "features", self.features.clone());
        row("run", "cycles", self.cycles.to_string());
        for (i, c) in self.cores.iter().enumerate() {
            let s = format!("core{i}");
            row(&s, "retired", c.retired.to_string());
            row(&s, "cycles", c.cycles.to_string());
            row(&s, "ipc", c.ipc.to_string());
        }
        for (m, c) in &self.copies {
            let s = format!("copy.{m}");
            row(&s, "copy_count", c.copy_count.to_string());
            row(&s, "total_latency_ns", c.total_latency_ns.to_string());
            row(&s, "total_cycles", c.total_cycles.to_string());
            row(&s, "total_energy_uj", c.total_energy_uj.to_string());
        }
        let v = &self.villa;
        for (k, x) in [
            ("hits", v.hits),
            ("misses", v.misses),
            ("fills", v.fills),
            ("evictions", v.evictions),
            ("writebacks", v.writebacks),
        ] {
            row("villa", k, x.to_string());
        }
        row("villa", "hit_rate", v.hit_rate.to_string());
        row("lip", "linked_precharges", self.lip.linked_precharges.to_string());
        row("lip", "plain_precharges", self.lip.plain_precharges.to_string());
        let r = &self.reads;
        row("reads", "completed", r.completed.to_string());
        row("reads", "total_latency_cycles", r.total_latency_cycles.to_string());
        row("reads", "mean_latency_cycles", r.mean_latency_cycles.to_string());
        row("reads", "row_hits", r.row_hits.to_string());
        row("reads", "row_misses", r.row_misses.to_string());
        for (k, n) in &r.histogram {
            row("reads.histogram", k, n.to_string());
        }
        let c = &self.commands;
        for (k, x) in [
            ("act", c.act),
            ("pre", c.pre),
            ("pre_linked", c.pre_linked),
            ("rd", c.rd),
            ("wr", c.wr),
            ("rbm", c.rbm),
            ("io_lines", c.io_lines),
        ] {
            row("commands", k, x.to_string());
        }
        let e = &self.energy;
        row("energy", "total_uj", e.total_uj.to_string());
        row("energy", "demand_uj", e.demand_uj.to_string());
        row("energy", "villa_fill_uj", e.villa_fill_uj.to_string());
        row("energy", "villa_writeback_uj", e.villa_writeback_uj.to_string());
        for (k, x) in &e.by_command {
            row("energy.command", k, x.to_string());
        }
        for (k, x) in &e.by_mechanism {
            row("energy.mechanism", k, x.to_string());
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run stats always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copy::{reference_job, CopyMechanism};
    use crate::controller::{Controller, Features, MemRequest, RequestKind};
    use crate::dram::DramConfig;
    use proptest::prelude::*;

    #[test]
    fn ws_examples() {
        let ipc = [1.0, 0.8, 0.5, 0.3];
        assert_eq!(weighted_speedup(&ipc, &ipc).unwrap(), 4.0);
        let halved: Vec<f64> = ipc.iter().map(|x| x / 2.0).collect();
        assert!((weighted_speedup(&halved, &ipc).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(weighted_speedup(&[1.0, 0.5], &[2.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn ws_rejects_degenerate_input() {
        assert!(matches!(
            weighted_speedup(&[1.0, 1.0], &[1.0, 0.0]),
            Err(MetricsError::Degenerate { core: 1, .. })
        ));
        assert!(matches!(weighted_speedup(&[1.0], &[1.0, 1.0]), Err(MetricsError::Length { .. })));
    }

    proptest! {
        #[test]
        fn ws_scale_invariant(
            pairs in prop::collection::vec((0.01f64..4.0, 0.01f64..4.0), 1..8),
            k in 0.01f64..100.0,
        ) {
            let (s, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ks: Vec<f64> = s.iter().map(|x| x * k).collect();
            let ka: Vec<f64> = a.iter().map(|x| x * k).collect();
            let base = weighted_speedup(&s, &a).unwrap();
            prop_assert!((weighted_speedup(&ks, &ka).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
        }
    }

    #[test]
    fn empty_run_is_all_zero() {
        let cfg = DramConfig::default();
        let e = energy_report(&CommandCounts::default(), &ControllerStats::default(), &cfg.energy);
        assert_eq!(e.total_uj, 0.0);
        assert_eq!(e.demand_uj, 0.0);
        assert!(e.by_command.values().all(|&x| x == 0.0));
        assert!(e.by_mechanism.is_empty());
    }

    fn single_copy_run(mech: CopyMechanism, hops: usize) -> RunStats {
        let cfg = DramConfig::default();
        let mut ctl = Controller::new(&cfg, Features::RISC);
        let job = reference_job(mech, hops, &cfg.geometry);
        ctl.enqueue(MemRequest {
            kind: RequestKind::Copy(job),
            core: 0,
            arrival: 0,
        })
        .unwrap();
        let mut now = 0;
        while !ctl.is_idle() {
            ctl.tick(now).unwrap();
            while ctl.pop_completion(now).is_some() {}
            now += 1;
        }
        RunStats::new(
            Features::RISC.to_string(),
            now,
            vec![],
            ctl.stats(),
            &ctl.villa_counts(),
            *ctl.channel().counts(),
            &cfg.energy,
        )
    }

    #[test]
    fn one_hop_lisa_copy_energy() {
        let s = single_copy_run(CopyMechanism::LisaRisc, 1);
        let lisa = s.energy.by_mechanism["LisaRisc"];
        assert!((lisa - 0.09).abs() <= 0.01, "{lisa}");
        assert!((s.energy.total_uj - lisa).abs() < 1e-12);
        assert_eq!(s.energy.demand_uj, 0.0);
    }

    #[test]
    fn energy_totals_are_the_sum_of_charges() {
        let cfg = DramConfig::default();
        let s = single_copy_run(CopyMechanism::MemcpyChannel, 0);
        let by_kind: f64 = s.energy.by_command.values().sum();
        assert!((by_kind - s.commands.energy_uj(&cfg.energy)).abs() < 1e-12);
        assert!((s.energy.total_uj - by_kind).abs() < 1e-12);
    }

    #[test]
    fn reports_are_deterministic() {
        let a = single_copy_run(CopyMechanism::LisaRisc, 7);
        let b = single_copy_run(CopyMechanism::LisaRisc, 7);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_toml(), b.to_toml());
        assert!(a.to_csv().contains("copy.LisaRisc,copy_count,1\n"));
        let parsed: toml::Value = toml::from_str(&a.to_toml()).unwrap();
        assert_eq!(parsed["copies"]["LisaRisc"]["copy_count"].as_integer(), Some(1));
    }
}
