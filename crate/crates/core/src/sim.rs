//! Whole-system simulation: cores driving one controller per channel.

use std::collections::VecDeque;

use thiserror::Error;

use crate::bank::{CommandCounts, CommandRecord, Cycle};
use crate::controller::{select_mechanism, Controller, ControllerError, ControllerStats, Features, MemRequest, RequestKind};
use crate::copy::{CopyJob, CopyMechanism};
use crate::cpu::{Core, Submit, TraceEvent, TraceOp};
use crate::dram::{AddressMapping, Coordinates, DramConfig};
use crate::metrics::{CoreStats, RunStats};
use crate::villa::VillaCounts;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("core {core}, event {event}: {reason}")]
    Event { core: usize, event: usize, reason: String },
    #[error("channel {channel}: {source}")]
    Controller {
        channel: usize,
        source: ControllerError,
    },
    #[error("no progress after {0} cycles")]
    Timeout(Cycle),
}

/// Expands one trace operation into controller requests.
///
/// A copy is cut at row boundaries. Chunks covering a whole row at both
/// ends go to the feature-selected mechanism, other chunks use the channel.
/// Chunks whose ends sit on different channels become line reads and
/// writes.
pub fn expand_op(
    op: &TraceOp,
    mapping: &AddressMapping,
    cfg: &DramConfig,
    features: Features,
) -> Result<VecDeque<RequestKind>, String> {
    let g = &cfg.geometry;
    let decode = |a: u64| mapping.decode(a).map_err(|e| e.to_string());
    match *op {
        TraceOp::Read(a) => Ok(VecDeque::from([RequestKind::Read(decode(a)?)])),
        TraceOp::Write(a) => Ok(VecDeque::from([RequestKind::Write(decode(a)?)])),
        TraceOp::Copy { src, dst, bytes } => {
            let line = g.cacheline_bytes as u64;
            let row = g.row_bytes as u64;
            if bytes % line != 0 || src % line != 0 || dst % line != 0 {
                return Err(format!("copy of {bytes} bytes from {src:#x} to {dst:#x} is not line aligned"));
            }
            let end = |a: u64| a.checked_add(bytes).filter(|&e| e <= mapping.capacity());
            if end(src).is_none() || end(dst).is_none() {
                return Err(format!("copy of {bytes} bytes runs past the end of memory"));
            }
            let mut out = VecDeque::new();
            let mut done = 0;
            while done < bytes {
                let (s, d) = (src + done, dst + done);
                let chunk = (row - s % row).min(row - d % row).min(bytes - done);
                let (sc, dc) = (decode(s)?, decode(d)?);
                if sc.channel != dc.channel {
                    for k in 0..chunk / line {
                        out.push_back(RequestKind::Read(decode(s + k * line)?));
                        out.push_back(RequestKind::Write(decode(d + k * line)?));
                    }
                } else {
                    let mechanism = if chunk == row {
                        select_mechanism(features, &sc, &dc)
                    } else {
                        CopyMechanism::MemcpyChannel
                    };
                    out.push_back(RequestKind::Copy(CopyJob {
                        mechanism,
                        src: sc,
                        dst: dc,
                        bytes: chunk as usize,
                        issue_cycle: 0,
                    }));
                }
                done += chunk;
            }
            Ok(out)
        }
    }
}

fn request_channel(req: &RequestKind) -> usize {
    match req {
        RequestKind::Read(c) | RequestKind::Write(c) => c.channel,
        RequestKind::Copy(j) => j.src.channel,
    }
}

/// Cores plus one controller per channel, stepped cycle by cycle.
pub struct System {
    cfg: DramConfig,
    features: Features,
    mapping: AddressMapping,
    cores: Vec<Core>,
    controllers: Vec<Controller>,
    now: Cycle,
    /// Gives up when this many cycles pass without any core retiring.
    pub stall_limit: Cycle,
}

impl System {
    pub fn new(cfg: &DramConfig, features: Features, traces: Vec<Vec<TraceEvent>>) -> Self {
        System {
            mapping: cfg.address_mapping(),
            cores: traces.into_iter().enumerate().map(|(i, t)| Core::new(i, t)).collect(),
            controllers: (0..cfg.geometry.channels)
                .map(|_| Controller::new(cfg, features))
                .collect(),
            cfg: cfg.clone(),
            features,
            now: 0,
            stall_limit: 50_000_000,
        }
    }

    pub fn enable_command_log(&mut self) {
        for c in &mut self.controllers {
            c.enable_command_log();
        }
    }

    /// Command log of every channel as `(channel, record)` pairs in issue
    /// order per channel.
    pub fn command_log(&self) -> Vec<(usize, CommandRecord)> {
        self.controllers
            .iter()
            .enumerate()
            .flat_map(|(ch, c)| c.channel().log().iter().map(move |r| (ch, *r)))
            .collect()
    }

    pub fn controllers(&self) -> &[Controller] {
        &self.controllers
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn now(&self) -> Cycle {
        self.now
    }

    fn step_cores(&mut self) -> Result<(), SimError> {
        let now = self.now;
        let (mapping, cfg, features) = (&self.mapping, &self.cfg, self.features);
        let controllers = &mut self.controllers;
        for core in &mut self.cores {
            let id = core.id;
            let event = core.event_index();
            core.step(
                now,
                |op| expand_op(op, mapping, cfg, features).map_err(|reason| SimError::Event { core: id, event, reason }),
                |req| {
                    let channel = request_channel(&req);
                    let ctl = &mut controllers[channel];
                    match ctl.enqueue(MemRequest {
                        kind: req,
                        core: id,
                        arrival: now,
                    }) {
                        Ok(h) => Ok(match req {
                            RequestKind::Write(_) => Submit::Posted,
                            // Handles are unique per channel; tag the channel in the top bits.
                            _ => Submit::Blocking(h | (channel as u64) << 56),
                        }),
                        Err(ControllerError::QueueFull { .. }) => Ok(Submit::Full),
                        Err(source) => Err(SimError::Controller { channel, source }),
                    }
                },
            )?;
        }
        Ok(())
    }

    fn all_cores_done(&self) -> bool {
        self.cores.iter().all(Core::is_done)
    }

    /// Runs until every core has finished and all queued work drained.
    pub fn run(&mut self) -> Result<RunStats, SimError> {
        let mut last_progress = (0u64, 0 as Cycle);
        loop {
            self.step_cores()?;
            for (channel, c) in self.controllers.iter_mut().enumerate() {
                c.tick(self.now)
                    .map_err(|source| SimError::Controller { channel, source })?;
            }
            for (channel, ctl) in self.controllers.iter_mut().enumerate() {
                while let Some(done) = ctl.pop_completion(self.now) {
                    self.cores[done.core].complete(done.id | (channel as u64) << 56, self.now);
                }
            }
            if self.all_cores_done() && self.controllers.iter().all(Controller::is_idle) {
                break;
            }
            let retired: u64 = self.cores.iter().map(Core::retired).sum();
            if retired != last_progress.0 {
                last_progress = (retired, self.now);
            } else if self.now - last_progress.1 > self.stall_limit {
                return Err(SimError::Timeout(self.stall_limit));
            }
            self.now = self.next_cycle();
        }
        Ok(self.stats())
    }

    /// Skips ahead when nothing can happen before the next completion.
    fn next_cycle(&self) -> Cycle {
        let blocked = self.cores.iter().all(|c| c.is_done() || c.is_waiting());
        let queued: usize = self.controllers.iter().map(Controller::queued).sum();
        if blocked && queued == 0 {
            if let Some(t) = self.controllers.iter().filter_map(Controller::next_completion).min() {
                return t.max(self.now + 1);
            }
        }
        self.now + 1
    }

    pub fn stats(&self) -> RunStats {
        let mut controller = ControllerStats::default();
        let mut villa = VillaCounts::default();
        let mut commands = CommandCounts::default();
        for c in &self.controllers {
            controller.merge(c.stats());
            villa.add(&c.villa_counts());
            commands.add(c.channel().counts());
        }
        let cores: Vec<CoreStats> = self
            .cores
            .iter()
            .map(|c| CoreStats {
                retired: c.retired(),
                cycles: c.cycles().unwrap_or(self.now + 1),
                ipc: c.ipc().unwrap_or(c.retired() as f64 / (self.now + 1) as f64),
            })
            .collect();
        let cycles = cores.iter().map(|c| c.cycles).max().unwrap_or(0);
        RunStats::new(
            self.features.to_string(),
            cycles,
            cores,
            &controller,
            &villa,
            commands,
            &self.cfg.energy,
        )
    }
}

/// Simulates `traces` sharing the memory system.
pub fn simulate(cfg: &DramConfig, features: Features, traces: Vec<Vec<TraceEvent>>) -> Result<RunStats, SimError> {
    System::new(cfg, features, traces).run()
}

/// Address of a line, for building traces by hand.
pub fn line_address(mapping: &AddressMapping, c: &Coordinates) -> u64 {
    mapping.encode(c).expect("coordinates in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(bank: usize, subarray: usize, row: usize, column: usize) -> Coordinates {
        Coordinates {
            bank,
            subarray,
            row,
            column,
            ..Coordinates::default()
        }
    }

    #[test]
    fn single_read_latency() {
        let cfg = DramConfig::default();
        let m = cfg.address_mapping();
        let t = vec![TraceEvent::read(3, line_address(&m, &at(1, 2, 3, 4)))];
        let s = simulate(&cfg, Features::BASELINE, vec![t]).unwrap();
        // Issued at 3, closed-row read takes 26 cycles, resumes next cycle.
        assert_eq!(s.cores[0].retired, 4);
        assert_eq!(s.cores[0].cycles, 3 + 26 + 1);
        assert_eq!(s.reads.completed, 1);
        assert_eq!(s.reads.total_latency_cycles, 26);
    }

    #[test]
    fn retired_count_is_conserved() {
        let cfg = DramConfig::default();
        let spec = crate::cpu::GeneratorSpec {
            length: 400,
            ..Default::default()
        };
        let traces = crate::cpu::generate_copy_workload(&spec, &cfg);
        let expected: Vec<u64> = traces.iter().map(|t| t.iter().map(|e| e.bubbles + 1).sum()).collect();
        for f in [Features::BASELINE, Features::ROWCLONE, Features::ALL] {
            let s = simulate(&cfg, f, traces.clone()).unwrap();
            let got: Vec<u64> = s.cores.iter().map(|c| c.retired).collect();
            assert_eq!(got, expected, "{f}");
            let hist: u64 = s.reads.histogram.values().sum();
            assert_eq!(hist, s.reads.completed);
        }
    }

    #[test]
    fn copy_expansion() {
        let cfg = DramConfig::default();
        let m = cfg.address_mapping();
        let g = &cfg.geometry;
        let src = line_address(&m, &at(0, 2, 0, 0));
        let dst = line_address(&m, &at(0, 5, 0, 0));
        let q = expand_op(
            &TraceOp::Copy {
                src,
                dst,
                bytes: g.row_bytes as u64,
            },
            &m,
            &cfg,
            Features::RISC,
        )
        .unwrap();
        assert!(matches!(q[0], RequestKind::Copy(j) if j.mechanism == CopyMechanism::LisaRisc));
        assert_eq!(q.len(), 1);

        // Half a row starting mid-row: one channel copy.
        let q = expand_op(
            &TraceOp::Copy {
                src: src + 64,
                dst: dst + 64,
                bytes: 4096,
            },
            &m,
            &cfg,
            Features::RISC,
        )
        .unwrap();
        assert_eq!(q.len(), 1);
        assert!(matches!(q[0], RequestKind::Copy(j) if j.mechanism == CopyMechanism::MemcpyChannel && j.bytes == 4096));

        let bad = expand_op(&TraceOp::Copy { src: 1, dst, bytes: 64 }, &m, &cfg, Features::RISC);
        assert!(bad.is_err());
    }

    #[test]
    fn bad_address_is_reported() {
        let cfg = DramConfig::default();
        let t = vec![TraceEvent::read(0, u64::MAX)];
        let err = simulate(&cfg, Features::BASELINE, vec![t]).unwrap_err();
        assert!(matches!(err, SimError::Event { core: 0, .. }), "{err}");
    }
}
