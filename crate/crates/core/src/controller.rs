//! Per-channel memory controller.
//!
//! Requests wait in per-bank queues and are scheduled FR-FCFS: row-buffer
//! hits first, then oldest first, one command per cycle. Bulk copies are
//! launched as whole macros once every bank they touch is idle and
//! precharged; the banks are then blocked until the macro completes.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{Command, CommandError, CommandKind, Cycle, DramChannel, Token};
use crate::copy::{
    copy_latency_ns, emit_macro, execute, CopyError, CopyJob, CopyMechanism, MacroRun,
};
use crate::dram::{Coordinates, DramConfig, Geometry, PagePolicy, TimingModel};
use crate::villa::{AccessOutcome, BankVilla, VillaCounts, VillaError};

/// Consecutive row hits a bank may serve while an older request to another
/// row waits.
pub const ROW_HIT_CAP: u32 = 16;

/// Optional mechanisms enabled for a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Features {
    pub rowclone: bool,
    pub lisa_risc: bool,
    pub villa: bool,
    pub lip: bool,
}

impl Features {
    pub const BASELINE: Features = Features {
        rowclone: false,
        lisa_risc: false,
        villa: false,
        lip: false,
    };
    pub const ROWCLONE: Features = Features {
        rowclone: true,
        ..Features::BASELINE
    };
    pub const RISC: Features = Features {
        lisa_risc: true,
        ..Features::BASELINE
    };
    pub const RISC_VILLA: Features = Features {
        lisa_risc: true,
        villa: true,
        ..Features::BASELINE
    };
    pub const ALL: Features = Features {
        lisa_risc: true,
        villa: true,
        lip: true,
        ..Features::BASELINE
    };
}

impl fmt::Display for Features {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.rowclone {
            parts.push("rowclone");
        }
        if self.lisa_risc {
            parts.push("risc");
        }
        if self.villa {
            parts.push("villa");
        }
        if self.lip {
            parts.push("lip");
        }
        if parts.is_empty() {
            f.write_str("baseline")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

impl FromStr for Features {
    type Err = String;

    /// Parses `baseline`, `all`, or a `,`/`+`-separated subset of
    /// `rowclone`, `risc`, `villa`, `lip`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut f = Features::BASELINE;
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "baseline" => {}
                "all" => f = Features { rowclone: f.rowclone, ..Features::ALL },
                "rowclone" => f.rowclone = true,
                "risc" | "lisa_risc" | "lisa-risc" => f.lisa_risc = true,
                "villa" => f.villa = true,
                "lip" => f.lip = true,
                other => return Err(format!("unknown feature {other:?}")),
            }
        }
        Ok(f)
    }
}

/// Copy mechanism a controller with `features` uses for a whole-row copy.
pub fn select_mechanism(features: Features, src: &Coordinates, dst: &Coordinates) -> CopyMechanism {
    let in_dram = features.lisa_risc || features.rowclone;
    if src.same_bank(dst) {
        if src.subarray == dst.subarray {
            if in_dram && !src.same_row(dst) {
                CopyMechanism::RowCloneIntraSA
            } else {
                CopyMechanism::MemcpyChannel
            }
        } else if features.lisa_risc {
            CopyMechanism::LisaRisc
        } else if features.rowclone {
            CopyMechanism::RowCloneInterSA
        } else {
            CopyMechanism::MemcpyChannel
        }
    } else if features.rowclone && src.channel == dst.channel && src.rank == dst.rank {
        CopyMechanism::RowClonePSMBank
    } else {
        CopyMechanism::MemcpyChannel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Read(Coordinates),
    Write(Coordinates),
    Copy(CopyJob),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemRequest {
    pub kind: RequestKind,
    pub core: usize,
    pub arrival: Cycle,
}

/// Notification that a blocking request finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Completion {
    pub cycle: Cycle,
    pub id: u64,
    pub core: usize,
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("request queue of bank {bank} is full")]
    QueueFull { bank: usize },
    #[error("{0:?} lies in a fast subarray reserved for caching")]
    Reserved(Coordinates),
    #[error(transparent)]
    Copy(#[from] CopyError),
    #[error(transparent)]
    Command(#[from] CommandError),
    #[error(transparent)]
    Villa(#[from] VillaError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MechanismStats {
    pub count: u64,
    /// Measured cycles of the executed macros.
    pub cycles: u64,
    /// Sum of closed-form latencies.
    pub latency_ns: f64,
    pub energy_uj: f64,
}

impl MechanismStats {
    fn record(&mut self, run: &MacroRun, formula_ns: f64, energy_uj: f64) {
        self.count += 1;
        self.cycles += run.cycles();
        self.latency_ns += formula_ns;
        self.energy_uj += energy_uj;
    }

    pub fn add(&mut self, o: &MechanismStats) {
        self.count += o.count;
        self.cycles += o.cycles;
        self.latency_ns += o.latency_ns;
        self.energy_uj += o.energy_uj;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ControllerStats {
    pub reads: u64,
    pub writes: u64,
    pub read_latency_cycles: u64,
    /// Bucket `k` counts reads whose latency `l` has bit length `k`, i.e.
    /// `2^(k-1) <= l < 2^k`.
    pub read_latency_histogram: BTreeMap<u32, u64>,
    pub row_hits: u64,
    pub row_misses: u64,
    pub copies: BTreeMap<CopyMechanism, MechanismStats>,
    pub villa_fills: MechanismStats,
    pub villa_writebacks: MechanismStats,
    pub bank_busy_cycles: Vec<u64>,
    pub queue_full_events: u64,
    pub epochs: u64,
}

impl ControllerStats {
    /// Accumulates another channel's statistics; bank vectors are
    /// concatenated.
    pub fn merge(&mut self, o: &ControllerStats) {
        self.reads += o.reads;
        self.writes += o.writes;
        self.read_latency_cycles += o.read_latency_cycles;
        for (k, n) in &o.read_latency_histogram {
            *self.read_latency_histogram.entry(*k).or_default() += n;
        }
        self.row_hits += o.row_hits;
        self.row_misses += o.row_misses;
        for (m, s) in &o.copies {
            self.copies.entry(*m).or_default().add(s);
        }
        self.villa_fills.add(&o.villa_fills);
        self.villa_writebacks.add(&o.villa_writebacks);
        self.bank_busy_cycles.extend_from_slice(&o.bank_busy_cycles);
        self.queue_full_events += o.queue_full_events;
        self.epochs += o.epochs;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Work {
    Read(Coordinates),
    Write(Coordinates, Token),
    Copy(CopyJob),
    Fill(usize),
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    id: u64,
    core: Option<usize>,
    arrival: Cycle,
    work: Work,
    /// This request's ACT opened its row.
    opened: bool,
}

enum Action {
    Issue { queue: usize, index: Option<usize>, cmd: Command },
    Launch { queue: usize, index: usize },
}

pub struct Controller {
    geometry: Geometry,
    cfg: DramConfig,
    features: Features,
    channel: DramChannel,
    queues: Vec<Vec<Entry>>,
    villa: Vec<BankVilla>,
    internal_busy: Vec<Cycle>,
    completions: BinaryHeap<Reverse<Completion>>,
    next_id: u64,
    hit_streak: Vec<u32>,
    next_epoch: Cycle,
    stats: ControllerStats,
}

impl Controller {
    pub fn new(cfg: &DramConfig, features: Features) -> Self {
        let g = cfg.geometry.clone();
        let model = if features.villa {
            TimingModel::heterogeneous(cfg)
        } else {
            TimingModel::uniform(cfg.timing.clone(), g.subarrays_per_bank)
        };
        let banks = g.banks_per_channel();
        Controller {
            channel: DramChannel::new(&g, model),
            queues: vec![Vec::new(); banks],
            villa: if features.villa {
                (0..banks).map(|_| BankVilla::new(&cfg.villa, &g)).collect()
            } else {
                Vec::new()
            },
            internal_busy: vec![0; g.ranks_per_channel],
            completions: BinaryHeap::new(),
            next_id: 0,
            hit_streak: vec![0; banks],
            next_epoch: cfg.villa.epoch_length,
            stats: ControllerStats {
                bank_busy_cycles: vec![0; banks],
                ..ControllerStats::default()
            },
            geometry: g,
            cfg: cfg.clone(),
            features,
        }
    }

    pub fn features(&self) -> Features {
        self.features
    }

    pub fn channel(&self) -> &DramChannel {
        &self.channel
    }

    pub fn enable_command_log(&mut self) {
        self.channel.enable_log();
    }

    pub fn stats(&self) -> &ControllerStats {
        &self.stats
    }

    pub fn villa_counts(&self) -> VillaCounts {
        let mut total = VillaCounts::default();
        for v in &self.villa {
            total.add(&v.counts);
        }
        total
    }

    pub fn villa_bank(&self, bank: usize) -> Option<&BankVilla> {
        self.villa.get(bank)
    }

    pub fn queue_len(&self, bank: usize) -> usize {
        self.queues[bank].len()
    }

    /// Requests waiting in the bank queues, fills included.
    pub fn queued(&self) -> usize {
        self.queues.iter().map(Vec::len).sum()
    }

    pub fn pending(&self) -> usize {
        self.queued() + self.completions.len()
    }

    pub fn is_idle(&self) -> bool {
        self.pending() == 0
    }

    fn bank_of(&self, c: &Coordinates) -> usize {
        c.bank_index(&self.geometry)
    }

    fn check_not_reserved(&self, c: &Coordinates) -> Result<(), ControllerError> {
        if self.features.villa && self.cfg.villa.fast_subarrays.contains(&c.subarray) {
            return Err(ControllerError::Reserved(*c));
        }
        Ok(())
    }

    /// Whether a request for `bank` would be accepted.
    pub fn can_accept(&self, bank: usize) -> bool {
        self.queues[bank].len() < self.cfg.controller.queue_capacity
    }

    /// Queues `req`; returns its id. Writes are posted and complete on
    /// acceptance; reads and copies report through [`Self::pop_completion`].
    pub fn enqueue(&mut self, req: MemRequest) -> Result<u64, ControllerError> {
        let (bank, work) = match req.kind {
            RequestKind::Read(c) => (self.bank_of(&c), Work::Read(c)),
            RequestKind::Write(c) => (self.bank_of(&c), Work::Write(c, Token(self.next_id))),
            RequestKind::Copy(job) => {
                job.validate(&self.geometry)?;
                (self.bank_of(&job.src), Work::Copy(job))
            }
        };
        match &work {
            Work::Read(c) | Work::Write(c, _) => self.check_not_reserved(c)?,
            Work::Copy(job) => {
                self.check_not_reserved(&job.src)?;
                self.check_not_reserved(&job.dst)?;
            }
            Work::Fill(_) => unreachable!(),
        }
        if !self.can_accept(bank) {
            self.stats.queue_full_events += 1;
            return Err(ControllerError::QueueFull { bank });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.queues[bank].push(Entry {
            id,
            core: Some(req.core),
            arrival: req.arrival,
            work,
            opened: false,
        });
        if let Work::Read(c) | Work::Write(c, _) = work {
            if let Some(v) = self.villa.get_mut(bank) {
                let row = c.bank_row(&self.geometry);
                if v.on_access(row, matches!(work, Work::Write(..))) == AccessOutcome::FillScheduled {
                    let fid = self.next_id;
                    self.next_id += 1;
                    self.queues[bank].push(Entry {
                        id: fid,
                        core: None,
                        arrival: req.arrival,
                        work: Work::Fill(row),
                        opened: false,
                    });
                }
            }
        }
        Ok(id)
    }

    /// Next completion at or before `now`.
    pub fn pop_completion(&mut self, now: Cycle) -> Option<Completion> {
        if self.completions.peek().is_some_and(|Reverse(c)| c.cycle <= now) {
            self.completions.pop().map(|Reverse(c)| c)
        } else {
            None
        }
    }

    /// Earliest pending completion, if any.
    pub fn next_completion(&self) -> Option<Cycle> {
        self.completions.peek().map(|Reverse(c)| c.cycle)
    }

    fn bank_row_coords(&self, bank: usize, sub: usize, row: usize) -> Coordinates {
        Coordinates {
            channel: 0,
            rank: bank / self.geometry.banks_per_rank,
            bank: bank % self.geometry.banks_per_rank,
            subarray: sub,
            row,
            column: 0,
            offset: 0,
        }
    }

    /// Where a demand access to `c` is served: its fast-row copy if cached.
    fn service_location(&self, bank: usize, c: &Coordinates) -> (usize, usize) {
        if let Some(v) = self.villa.get(bank) {
            if let Some(slot) = v.cache.lookup(c.bank_row(&self.geometry)) {
                return v.slot_location(slot);
            }
        }
        (c.subarray, c.row)
    }

    fn rank_banks(&self, rank: usize) -> std::ops::Range<usize> {
        let n = self.geometry.banks_per_rank;
        rank * n..(rank + 1) * n
    }

    fn mechanism_of(&self, work: &Work) -> Option<CopyMechanism> {
        match work {
            Work::Copy(job) => Some(job.mechanism),
            Work::Fill(_) => Some(self.cfg.villa.fill_mechanism),
            _ => None,
        }
    }

    /// Banks a copy entry blocks.
    fn involved_banks(&self, queue: usize, work: &Work) -> Vec<usize> {
        let mech = self.mechanism_of(work).expect("copy work");
        let (src, dst) = match work {
            Work::Copy(job) => (self.bank_of(&job.src), self.bank_of(&job.dst)),
            _ => (queue, queue),
        };
        if mech == CopyMechanism::RowCloneInterSA {
            return self.rank_banks(src / self.geometry.banks_per_rank).collect();
        }
        if src == dst {
            vec![src]
        } else {
            vec![src, dst]
        }
    }

    /// Oldest copy entry involving each bank.
    fn reservations(&self) -> Vec<u64> {
        let mut reserved = vec![u64::MAX; self.queues.len()];
        for (q, queue) in self.queues.iter().enumerate() {
            for e in queue.iter().filter(|e| matches!(e.work, Work::Copy(_) | Work::Fill(_))) {
                for b in self.involved_banks(q, &e.work) {
                    reserved[b] = reserved[b].min(e.id);
                }
            }
        }
        reserved
    }

    fn legal_now(&self, cmd: &Command, now: Cycle) -> bool {
        self.channel.earliest(cmd, now).is_ok_and(|c| c == now)
    }

    /// Command that moves `entry` forward on `bank`, ignoring timing.
    fn demand_command(&self, bank: usize, entry: &Entry) -> (Command, bool) {
        let (c, write) = match entry.work {
            Work::Read(c) => (c, None),
            Work::Write(c, t) => (c, Some(t)),
            _ => unreachable!(),
        };
        let (sub, row) = self.service_location(bank, &c);
        match self.channel.bank(bank).open_row() {
            Some((s, r)) if (s, r) == (sub, row) => {
                let cmd = match write {
                    None => Command::rd(bank, sub, row, c.column),
                    Some(t) => Command::wr(bank, sub, row, c.column, Some(t)),
                };
                (cmd, true)
            }
            Some((s, _)) => (Command::pre(bank, s), false),
            None => (Command::act(bank, sub, row), false),
        }
    }

    fn pick(&self, now: Cycle) -> Option<Action> {
        let reserved = self.reservations();
        let mut best: Option<((u8, u64), Action)> = None;
        let mut offer = |key: (u8, u64), action: Action| {
            if best.as_ref().is_none_or(|(k, _)| key < *k) {
                best = Some((key, action));
            }
        };
        for (q, queue) in self.queues.iter().enumerate() {
            let oldest_miss = queue
                .iter()
                .filter(|e| matches!(e.work, Work::Read(_) | Work::Write(..)))
                .find(|e| !self.demand_command(q, e).1)
                .map(|e| e.id);
            let capped = self.hit_streak[q] >= ROW_HIT_CAP;
            let mut hit_offered = false;
            let mut miss_offered = false;
            for (i, e) in queue.iter().enumerate() {
                match e.work {
                    Work::Read(_) | Work::Write(..) => {
                        if self.channel.bank(q).busy_until > now || reserved[q] < e.id {
                            continue;
                        }
                        let (cmd, hit) = self.demand_command(q, e);
                        if hit && hit_offered || !hit && miss_offered {
                            continue;
                        }
                        if !self.legal_now(&cmd, now) {
                            continue;
                        }
                        let demoted = capped && oldest_miss.is_some_and(|m| m < e.id);
                        let class = if hit && !demoted { 0 } else { 1 };
                        if hit {
                            hit_offered = true;
                        } else {
                            miss_offered = true;
                        }
                        offer((class, e.id), Action::Issue { queue: q, index: Some(i), cmd });
                    }
                    Work::Copy(_) | Work::Fill(_) => {
                        if let Some(action) = self.copy_step(q, i, e, &reserved, now) {
                            offer((1, e.id), action);
                        }
                    }
                }
            }
        }
        if self.cfg.controller.page_policy == PagePolicy::Closed {
            for b in 0..self.queues.len() {
                let Some((s, r)) = self.channel.bank(b).open_row() else {
                    continue;
                };
                if self.channel.bank(b).busy_until > now {
                    continue;
                }
                let wanted = self.queues[b].iter().any(|e| match e.work {
                    Work::Read(c) | Work::Write(c, _) => self.service_location(b, &c) == (s, r),
                    _ => false,
                });
                let cmd = Command::pre(b, s);
                if !wanted && self.legal_now(&cmd, now) {
                    offer((2, b as u64), Action::Issue { queue: b, index: None, cmd });
                }
            }
        }
        best.map(|(_, a)| a)
    }

    /// Next step for a copy entry: launch, or a precharge that clears the
    /// way for it.
    fn copy_step(&self, q: usize, i: usize, e: &Entry, reserved: &[u64], now: Cycle) -> Option<Action> {
        let banks = self.involved_banks(q, &e.work);
        if banks.iter().any(|&b| reserved[b] < e.id) {
            return None;
        }
        let mech = self.mechanism_of(&e.work).expect("copy work");
        if matches!(mech, CopyMechanism::RowClonePSMBank | CopyMechanism::RowCloneInterSA)
            && self.internal_busy[q / self.geometry.banks_per_rank] > now
        {
            return None;
        }
        let mut ready = true;
        for &b in &banks {
            let bank = self.channel.bank(b);
            if bank.busy_until > now {
                ready = false;
                continue;
            }
            if let Some(s) = bank.open_subarrays().next() {
                let cmd = Command::pre(b, s);
                if self.legal_now(&cmd, now) {
                    return Some(Action::Issue { queue: q, index: None, cmd });
                }
                ready = false;
            }
        }
        // The bank-level tRP of the last precharge must also have elapsed.
        let settled = banks.iter().all(|&b| {
            self.channel
                .earliest(&Command::act(b, 0, 0), now)
                .is_ok_and(|c| c == now)
        });
        (ready && settled).then_some(Action::Launch { queue: q, index: i })
    }

    /// Advances the controller to cycle `now`: VILLA epoch bookkeeping, then
    /// at most one command or copy launch.
    pub fn tick(&mut self, now: Cycle) -> Result<(), ControllerError> {
        while now >= self.next_epoch {
            for v in &mut self.villa {
                v.end_epoch();
            }
            if self.features.villa {
                self.stats.epochs += 1;
            }
            self.next_epoch += self.cfg.villa.epoch_length;
        }
        if now.is_multiple_of(256) {
            self.channel.retire_history(now);
        }
        if let Some(action) = self.pick(now) {
            self.perform(action, now)?;
        }
        Ok(())
    }

    fn perform(&mut self, action: Action, now: Cycle) -> Result<(), ControllerError> {
        match action {
            Action::Issue { queue, index, cmd } => {
                let cmd = if matches!(cmd.kind, CommandKind::Pre) && self.features.lip {
                    Command {
                        kind: self.channel.bank(cmd.bank).precharge_kind(cmd.subarray, true),
                        ..cmd
                    }
                } else {
                    cmd
                };
                let done = self.channel.issue(&cmd, now)?;
                let Some(i) = index else {
                    return Ok(());
                };
                match cmd.kind {
                    CommandKind::Act => {
                        self.queues[queue][i].opened = true;
                        self.hit_streak[queue] = 0;
                    }
                    CommandKind::Rd | CommandKind::Wr => {
                        let e = self.queues[queue].remove(i);
                        if e.opened {
                            self.stats.row_misses += 1;
                        } else {
                            self.stats.row_hits += 1;
                            self.hit_streak[queue] += 1;
                        }
                        if cmd.kind == CommandKind::Rd {
                            let latency = done - e.arrival;
                            self.stats.reads += 1;
                            self.stats.read_latency_cycles += latency;
                            let bucket = u64::BITS - latency.leading_zeros();
                            *self.stats.read_latency_histogram.entry(bucket).or_default() += 1;
                            self.complete(e, done);
                        } else {
                            self.stats.writes += 1;
                            let row = self.bank_row_of(&e);
                            if let Some(v) = self.villa.get_mut(queue) {
                                if let Some(slot) = v.cache.lookup(row) {
                                    v.cache.mark_dirty(slot);
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
            Action::Launch { queue, index } => {
                let e = self.queues[queue].remove(index);
                let end = match e.work {
                    Work::Copy(job) => self.launch_copy(job, now)?,
                    Work::Fill(row) => self.launch_fill(queue, row, now)?,
                    _ => unreachable!(),
                };
                let banks = self.involved_banks(queue, &e.work);
                for &b in &banks {
                    self.stats.bank_busy_cycles[b] += end - now;
                    let bank = self.channel.bank_mut(b);
                    bank.busy_until = bank.busy_until.max(end);
                }
                if matches!(
                    self.mechanism_of(&e.work),
                    Some(CopyMechanism::RowClonePSMBank | CopyMechanism::RowCloneInterSA)
                ) {
                    let rank = queue / self.geometry.banks_per_rank;
                    self.internal_busy[rank] = self.internal_busy[rank].max(end);
                }
                if e.core.is_some() {
                    self.complete(e, end);
                }
            }
        }
        Ok(())
    }

    fn bank_row_of(&self, e: &Entry) -> usize {
        match e.work {
            Work::Read(c) | Work::Write(c, _) => c.bank_row(&self.geometry),
            Work::Fill(r) => r,
            Work::Copy(j) => j.src.bank_row(&self.geometry),
        }
    }

    fn complete(&mut self, e: Entry, cycle: Cycle) {
        if let Some(core) = e.core {
            self.completions.push(Reverse(Completion { cycle, id: e.id, core }));
        }
    }

    fn run_job(&mut self, job: &CopyJob, start: Cycle) -> Result<(MacroRun, f64, f64), ControllerError> {
        let mac = emit_macro(job, &self.geometry)?;
        let run = execute(&mut self.channel, &mac, start)?;
        let formula = copy_latency_ns(job, self.channel.timing(), &self.geometry)?;
        let energy = run.counts.energy_uj(&self.cfg.energy);
        Ok((run, formula, energy))
    }

    /// Copies the fast-row copy of a dirty row back to its home location.
    fn write_back(&mut self, bank: usize, slot: usize, home: usize, start: Cycle) -> Result<Cycle, ControllerError> {
        let (fs, fr) = self.villa[bank].slot_location(slot);
        let g = &self.geometry;
        let job = CopyJob::row(
            self.cfg.villa.fill_mechanism,
            self.bank_row_coords(bank, fs, fr),
            self.bank_row_coords(bank, home / g.rows_per_subarray, home % g.rows_per_subarray),
            g,
        );
        let (run, formula, energy) = self.run_job(&job, start)?;
        self.stats.villa_writebacks.record(&run, formula, energy);
        Ok(run.end)
    }

    fn launch_copy(&mut self, job: CopyJob, now: Cycle) -> Result<Cycle, ControllerError> {
        let mut start = now;
        if !self.villa.is_empty() {
            for (c, is_src) in [(job.src, true), (job.dst, false)] {
                let bank = self.bank_of(&c);
                let row = c.bank_row(&self.geometry);
                if let Some((slot, dirty)) = self.villa[bank].invalidate(row) {
                    if dirty && is_src {
                        start = self.write_back(bank, slot, row, start)?;
                    }
                }
            }
        }
        let (run, formula, energy) = self.run_job(&job, start)?;
        self.stats
            .copies
            .entry(job.mechanism)
            .or_default()
            .record(&run, formula, energy);
        Ok(run.end)
    }

    fn launch_fill(&mut self, bank: usize, row: usize, now: Cycle) -> Result<Cycle, ControllerError> {
        let plan = self.villa[bank].start_fill(row)?;
        let mut start = now;
        if let Some(victim) = plan.victim.filter(|v| v.dirty) {
            start = self.write_back(bank, plan.slot, victim.source, start)?;
        }
        let g = &self.geometry;
        let (fs, fr) = self.villa[bank].slot_location(plan.slot);
        let job = CopyJob::row(
            self.cfg.villa.fill_mechanism,
            self.bank_row_coords(bank, row / g.rows_per_subarray, row % g.rows_per_subarray),
            self.bank_row_coords(bank, fs, fr),
            g,
        );
        let (run, formula, energy) = self.run_job(&job, start)?;
        self.stats.villa_fills.record(&run, formula, energy);
        Ok(run.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copy::reference_job;

    fn at(bank: usize, subarray: usize, row: usize, column: usize) -> Coordinates {
        Coordinates {
            bank,
            subarray,
            row,
            column,
            ..Coordinates::default()
        }
    }

    fn read(c: Coordinates, arrival: Cycle) -> MemRequest {
        MemRequest {
            kind: RequestKind::Read(c),
            core: 0,
            arrival,
        }
    }

    fn run_until_idle(ctl: &mut Controller, from: Cycle) -> Vec<Completion> {
        let mut done = Vec::new();
        let mut now = from;
        while !ctl.is_idle() {
            ctl.tick(now).unwrap();
            while let Some(c) = ctl.pop_completion(now) {
                done.push(c);
            }
            now += 1;
            assert!(now < from + 1_000_000, "controller did not drain");
        }
        done
    }

    #[test]
    fn closed_row_read_latency() {
        let mut ctl = Controller::new(&DramConfig::default(), Features::BASELINE);
        ctl.enqueue(read(at(0, 1, 2, 3), 0)).unwrap();
        let done = run_until_idle(&mut ctl, 0);
        // tRCD + tCL + tBL = 11 + 11 + 4 cycles.
        assert_eq!(done[0].cycle, 26);
    }

    #[test]
    fn open_row_read_latency() {
        let mut ctl = Controller::new(&DramConfig::default(), Features::BASELINE);
        ctl.enqueue(read(at(0, 1, 2, 3), 0)).unwrap();
        run_until_idle(&mut ctl, 0);
        ctl.enqueue(read(at(0, 1, 2, 9), 100)).unwrap();
        let done = run_until_idle(&mut ctl, 100);
        assert_eq!(done[0].cycle, 100 + 15);
        assert_eq!(ctl.stats().row_hits, 1);
    }

    #[test]
    fn row_hit_goes_first() {
        let mut ctl = Controller::new(&DramConfig::default(), Features::BASELINE);
        ctl.enqueue(read(at(0, 1, 2, 0), 0)).unwrap();
        run_until_idle(&mut ctl, 0);
        let old = ctl.enqueue(read(at(0, 3, 3, 0), 50)).unwrap();
        let young = ctl.enqueue(read(at(0, 1, 2, 1), 51)).unwrap();
        let done = run_until_idle(&mut ctl, 52);
        let order: Vec<u64> = done.iter().map(|c| c.id).collect();
        assert_eq!(order, [young, old]);
    }

    #[test]
    fn copy_occupies_bank_for_macro() {
        let cfg = DramConfig::default();
        let mut ctl = Controller::new(&cfg, Features::RISC);
        let job = reference_job(CopyMechanism::LisaRisc, 7, &cfg.geometry);
        ctl.enqueue(MemRequest {
            kind: RequestKind::Copy(job),
            core: 0,
            arrival: 0,
        })
        .unwrap();
        let done = run_until_idle(&mut ctl, 0);
        // 196.5 ns = 157.2 cycles, rounded up once.
        assert_eq!(done[0].cycle, 158);
        assert_eq!(ctl.channel().bank(0).busy_until, 158);
        assert_eq!(ctl.stats().bank_busy_cycles[0], 158);
    }

    #[test]
    fn idle_ticks_change_nothing() {
        let mut ctl = Controller::new(&DramConfig::default(), Features::ALL);
        for t in 0..1000 {
            ctl.tick(t).unwrap();
        }
        assert!(ctl.is_idle());
        assert_eq!(*ctl.channel().counts(), Default::default());
    }

    #[test]
    fn epoch_boundary_fires_once() {
        let mut cfg = DramConfig::default();
        cfg.villa.epoch_length = 100;
        let mut ctl = Controller::new(&cfg, Features::RISC_VILLA);
        for t in 0..100 {
            ctl.tick(t).unwrap();
        }
        assert_eq!(ctl.stats().epochs, 0);
        ctl.tick(100).unwrap();
        assert_eq!(ctl.stats().epochs, 1);
        ctl.tick(199).unwrap();
        assert_eq!(ctl.stats().epochs, 1);
        ctl.tick(450).unwrap();
        assert_eq!(ctl.stats().epochs, 4);
    }

    #[test]
    fn lisa_copy_leaves_other_bank_reads_alone() {
        let cfg = DramConfig::default();
        let solo_latency = |features: Features, mech: CopyMechanism| {
            let mut ctl = Controller::new(&cfg, features);
            let job = reference_job(mech, 3, &cfg.geometry);
            ctl.enqueue(MemRequest {
                kind: RequestKind::Copy(job),
                core: 0,
                arrival: 0,
            })
            .unwrap();
            ctl.tick(0).unwrap();
            // Late enough that tRRD against the copy's first ACT is moot.
            let id = ctl.enqueue(read(at(5, 2, 2, 0), 10)).unwrap();
            let done = run_until_idle(&mut ctl, 10);
            done.iter().find(|c| c.id == id).unwrap().cycle - 10
        };
        assert_eq!(solo_latency(Features::RISC, CopyMechanism::LisaRisc), 26);
        assert!(solo_latency(Features::BASELINE, CopyMechanism::MemcpyChannel) > 500);
    }

    #[test]
    fn villa_rejects_reserved_rows() {
        let mut ctl = Controller::new(&DramConfig::default(), Features::RISC_VILLA);
        let err = ctl.enqueue(read(at(0, 0, 5, 0), 0)).unwrap_err();
        assert!(matches!(err, ControllerError::Reserved(_)));
    }

    #[test]
    fn mechanism_selection() {
        let a = at(0, 1, 0, 0);
        let same_sub = at(0, 1, 4, 0);
        let other_sub = at(0, 6, 0, 0);
        let other_bank = at(3, 1, 0, 0);
        let sel = select_mechanism;
        assert_eq!(sel(Features::RISC, &a, &same_sub), CopyMechanism::RowCloneIntraSA);
        assert_eq!(sel(Features::RISC, &a, &other_sub), CopyMechanism::LisaRisc);
        assert_eq!(sel(Features::RISC, &a, &other_bank), CopyMechanism::MemcpyChannel);
        assert_eq!(sel(Features::ROWCLONE, &a, &other_sub), CopyMechanism::RowCloneInterSA);
        assert_eq!(sel(Features::ROWCLONE, &a, &other_bank), CopyMechanism::RowClonePSMBank);
        assert_eq!(sel(Features::BASELINE, &a, &same_sub), CopyMechanism::MemcpyChannel);
    }

    #[test]
    fn feature_strings() {
        assert_eq!("baseline".parse::<Features>().unwrap(), Features::BASELINE);
        assert_eq!("risc,villa,lip".parse::<Features>().unwrap(), Features::ALL);
        assert_eq!("risc+villa".parse::<Features>().unwrap(), Features::RISC_VILLA);
        assert_eq!(Features::ALL.to_string(), "risc+villa+lip");
        assert_eq!(Features::ALL.to_string().parse::<Features>().unwrap(), Features::ALL);
        assert!("turbo".parse::<Features>().is_err());
    }
}
