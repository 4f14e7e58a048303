//! Trace-driven in-order cores and the synthetic copy-heavy workload
//! generator.
//!
//! Trace grammar, one event per line (blank lines ignored):
//!
//! ```text
//! <bubbles> R <hexaddr>
//! <bubbles> W <hexaddr>
//! <bubbles> C <hexsrc> <hexdst> <bytes>
//! ```

use std::collections::VecDeque;
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::Cycle;
use crate::controller::RequestKind;
use crate::copy::scratch_row;
use crate::dram::{Coordinates, DramConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceOp {
    Read(u64),
    Write(u64),
    Copy { src: u64, dst: u64, bytes: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    /// Non-memory instructions retired before the operation.
    pub bubbles: u64,
    pub op: TraceOp,
}

impl TraceEvent {
    pub fn read(bubbles: u64, addr: u64) -> Self {
        TraceEvent {
            bubbles,
            op: TraceOp::Read(addr),
        }
    }

    pub fn write(bubbles: u64, addr: u64) -> Self {
        TraceEvent {
            bubbles,
            op: TraceOp::Write(addr),
        }
    }

    pub fn copy(bubbles: u64, src: u64, dst: u64, bytes: u64) -> Self {
        TraceEvent {
            bubbles,
            op: TraceOp::Copy { src, dst, bytes },
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            TraceOp::Read(a) => write!(f, "{} R {a:#x}", self.bubbles),
            TraceOp::Write(a) => write!(f, "{} W {a:#x}", self.bubbles),
            TraceOp::Copy { src, dst, bytes } => write!(f, "{} C {src:#x} {dst:#x} {bytes}", self.bubbles),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {reason}: {text:?}")]
pub struct TraceError {
    pub line: usize,
    pub text: String,
    pub reason: String,
}

fn parse_hex(s: &str) -> Result<u64, String> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    u64::from_str_radix(digits, 16).map_err(|e| format!("bad hex address {s:?} ({e})"))
}

fn parse_event(line: &str) -> Result<TraceEvent, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let bubbles = fields[0]
        .parse::<u64>()
        .map_err(|e| format!("bad bubble count {:?} ({e})", fields[0]))?;
    let arity = |n: usize| {
        if fields.len() == n {
            Ok(())
        } else {
            Err(format!("{} takes {} fields, found {}", fields[1], n, fields.len()))
        }
    };
    match fields.get(1).copied() {
        Some("R") => {
            arity(3)?;
            Ok(TraceEvent::read(bubbles, parse_hex(fields[2])?))
        }
        Some("W") => {
            arity(3)?;
            Ok(TraceEvent::write(bubbles, parse_hex(fields[2])?))
        }
        Some("C") => {
            arity(5)?;
            let bytes = fields[4]
                .parse::<u64>()
                .map_err(|e| format!("bad byte count {:?} ({e})", fields[4]))?;
            if bytes == 0 {
                return Err("copy of zero bytes".to_string());
            }
            Ok(TraceEvent::copy(bubbles, parse_hex(fields[2])?, parse_hex(fields[3])?, bytes))
        }
        Some(op) => Err(format!("unknown operation {op:?}")),
        None => Err("missing operation".to_string()),
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_event(l).map_err(|reason| TraceError {
                line: i + 1,
                text: l.to_string(),
                reason,
            })
        })
        .collect()
}

pub fn serialize_trace(events: &[TraceEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 16);
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

/// Result of offering a request to the memory system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Submit {
    /// Accepted; the core blocks until this handle completes.
    Blocking(u64),
    /// Accepted and already complete from the core's view.
    Posted,
    /// Queue full; retry next cycle.
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Phase {
    Bubbles(u64),
    Issuing(VecDeque<RequestKind>),
    Waiting(u64, VecDeque<RequestKind>),
    Done,
}

/// One-instruction-per-cycle in-order core.
#[derive(Debug, Clone)]
pub struct Core {
    pub id: usize,
    events: Vec<TraceEvent>,
    cursor: usize,
    phase: Phase,
    retired: u64,
    finished_at: Option<Cycle>,
}

impl Core {
    pub fn new(id: usize, events: Vec<TraceEvent>) -> Self {
        let phase = match events.first() {
            Some(e) => Phase::Bubbles(e.bubbles),
            None => Phase::Done,
        };
        Core {
            id,
            finished_at: events.is_empty().then_some(0),
            events,
            cursor: 0,
            phase,
            retired: 0,
        }
    }

    /// Index of the trace event being executed.
    pub fn event_index(&self) -> usize {
        self.cursor
    }

    pub fn retired(&self) -> u64 {
        self.retired
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn is_waiting(&self) -> bool {
        matches!(self.phase, Phase::Waiting(..))
    }

    /// Handle the core is blocked on.
    pub fn waiting_on(&self) -> Option<u64> {
        match self.phase {
            Phase::Waiting(h, _) => Some(h),
            _ => None,
        }
    }

    /// Cycles until the last instruction retired (inclusive).
    pub fn cycles(&self) -> Option<Cycle> {
        self.finished_at.map(|c| if self.events.is_empty() { 0 } else { c + 1 })
    }

    pub fn ipc(&self) -> Option<f64> {
        self.cycles().map(|c| if c == 0 { 0.0 } else { self.retired as f64 / c as f64 })
    }

    /// Total instructions in the trace.
    pub fn instructions(&self) -> u64 {
        self.events.iter().map(|e| e.bubbles + 1).sum()
    }

    fn retire_op(&mut self, now: Cycle) {
        self.retired += 1;
        self.cursor += 1;
        self.phase = match self.events.get(self.cursor) {
            Some(e) => Phase::Bubbles(e.bubbles),
            None => {
                self.finished_at = Some(now);
                Phase::Done
            }
        };
    }

    /// Runs one cycle. `expand` turns the current memory operation into
    /// requests; `submit` offers one request to the memory system.
    pub fn step<E, S, Err>(&mut self, now: Cycle, expand: E, mut submit: S) -> Result<(), Err>
    where
        E: FnOnce(&TraceOp) -> Result<VecDeque<RequestKind>, Err>,
        S: FnMut(RequestKind) -> Result<Submit, Err>,
    {
        match &mut self.phase {
            Phase::Done | Phase::Waiting(..) => return Ok(()),
            Phase::Bubbles(n) if *n > 0 => {
                *n -= 1;
                self.retired += 1;
                return Ok(());
            }
            Phase::Bubbles(_) => {
                let requests = expand(&self.events[self.cursor].op)?;
                self.phase = Phase::Issuing(requests);
            }
            Phase::Issuing(_) => {}
        }
        let Phase::Issuing(queue) = &mut self.phase else {
            unreachable!()
        };
        let Some(&req) = queue.front() else {
            self.retire_op(now);
            return Ok(());
        };
        match submit(req)? {
            Submit::Full => {}
            Submit::Posted => {
                queue.pop_front();
                if queue.is_empty() {
                    self.retire_op(now);
                }
            }
            Submit::Blocking(h) => {
                queue.pop_front();
                let rest = std::mem::take(queue);
                self.phase = Phase::Waiting(h, rest);
            }
        }
        Ok(())
    }

    /// Delivers the completion of `handle` at cycle `now`.
    pub fn complete(&mut self, handle: u64, now: Cycle) {
        if let Phase::Waiting(h, rest) = &mut self.phase {
            if *h == handle {
                if rest.is_empty() {
                    self.retire_op(now);
                } else {
                    self.phase = Phase::Issuing(std::mem::take(rest));
                }
            }
        }
    }
}

/// Parameters of the synthetic copy-heavy workload generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub cores: usize,
    /// Fraction of events that are row copies.
    pub copy_fraction: f64,
    /// Rows touched by each core, in MiB.
    pub footprint_mb: f64,
    /// Events per core.
    pub length: usize,
    /// Rows per core receiving `hot_fraction` of the reads and writes.
    pub hot_rows: usize,
    pub hot_fraction: f64,
    pub write_fraction: f64,
    /// Bubbles before each event are uniform in `0..=2 * mean_bubbles`.
    pub mean_bubbles: u64,
    /// Copies whose destination lies in another subarray of the same bank.
    pub same_bank_copy_fraction: f64,
    /// Events after which the hot rows move to a fresh part of the
    /// footprint; 0 keeps them fixed.
    pub hot_shift_period: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            seed: 1,
            cores: 4,
            copy_fraction: 0.1,
            footprint_mb: 2.0,
            length: 3000,
            hot_rows: 16,
            hot_fraction: 0.9,
            write_fraction: 0.25,
            mean_bubbles: 10,
            same_bank_copy_fraction: 0.8,
            hot_shift_period: 0,
        }
    }
}

/// Rows the generator may place data in: not in a fast subarray (kept free
/// for caching) and not the copy scratch row.
fn usable_rows(cfg: &DramConfig) -> Vec<Coordinates> {
    let g = &cfg.geometry;
    let scratch = scratch_row(g);
    let mut rows = Vec::new();
    for channel in 0..g.channels {
        for rank in 0..g.ranks_per_channel {
            for bank in 0..g.banks_per_rank {
                for subarray in 0..g.subarrays_per_bank {
                    if cfg.villa.fast_subarrays.contains(&subarray) {
                        continue;
                    }
                    for row in 0..g.rows_per_subarray {
                        if (subarray, row) == scratch {
                            continue;
                        }
                        rows.push(Coordinates {
                            channel,
                            rank,
                            bank,
                            subarray,
                            row,
                            column: 0,
                            offset: 0,
                        });
                    }
                }
            }
        }
    }
    rows
}

/// Deterministic per-core traces mixing reads and writes over a hot/cold
/// footprint with whole-row copies. Exactly `round(copy_fraction * length)`
/// events per core are copies.
pub fn generate_copy_workload(spec: &GeneratorSpec, cfg: &DramConfig) -> Vec<Vec<TraceEvent>> {
    assert!((0.0..=1.0).contains(&spec.copy_fraction), "copy_fraction must lie in [0, 1]");
    let g = &cfg.geometry;
    let mapping = cfg.address_mapping();
    let mut pool = usable_rows(cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    shuffle_rng.set_stream(u64::MAX);
    pool.shuffle(&mut shuffle_rng);
    let per_core = ((spec.footprint_mb * 1024.0 * 1024.0 / g.row_bytes as f64).round() as usize)
        .clamp(1, pool.len() / spec.cores.max(1));
    let line_bytes = g.cacheline_bytes as u64;
    let addr = |c: &Coordinates| mapping.encode(c).expect("generated coordinates are in range");

    (0..spec.cores)
        .map(|core| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(core as u64);
            let footprint = &pool[core * per_core..(core + 1) * per_core];
            let copies = (spec.copy_fraction * spec.length as f64).round() as usize;
            let mut is_copy = vec![false; spec.length];
            for i in index::sample(&mut rng, spec.length, copies.min(spec.length)) {
                is_copy[i] = true;
            }
            let hot = spec.hot_rows.min(footprint.len()).max(1);
            (0..spec.length)
                .map(|i| {
                    let bubbles = rng.gen_range(0..=2 * spec.mean_bubbles);
                    let pick = |rng: &mut ChaCha8Rng| -> Coordinates {
                        if rng.gen_bool(spec.hot_fraction) {
                            let base = i.checked_div(spec.hot_shift_period).map_or(0, |p| p * hot);
                            footprint[(base + rng.gen_range(0..hot)) % footprint.len()]
                        } else {
                            footprint[rng.gen_range(0..footprint.len())]
                        }
                    };
                    if is_copy[i] {
                        let src = footprint[rng.gen_range(0..footprint.len())];
                        let dst = copy_destination(&src, spec, cfg, &mut rng);
                        TraceEvent::copy(bubbles, addr(&src), addr(&dst), g.row_bytes as u64)
                    } else {
                        let mut c = pick(&mut rng);
                        c.column = rng.gen_range(0..g.columns_per_row);
                        let a = addr(&c);
                        debug_assert_eq!(a % line_bytes, 0);
                        if rng.gen_bool(spec.write_fraction) {
                            TraceEvent::write(bubbles, a)
                        } else {
                            TraceEvent::read(bubbles, a)
                        }
                    }
                })
                .collect()
        })
        .collect()
}

fn copy_destination(src: &Coordinates, spec: &GeneratorSpec, cfg: &DramConfig, rng: &mut ChaCha8Rng) -> Coordinates {
    let g = &cfg.geometry;
    let slow: Vec<usize> = (0..g.subarrays_per_bank)
        .filter(|s| !cfg.villa.fast_subarrays.contains(s))
        .collect();
    let scratch = scratch_row(g);
    loop {
        let mut dst = *src;
        if slow.len() > 1 && rng.gen_bool(spec.same_bank_copy_fraction) {
            while dst.subarray == src.subarray {
                dst.subarray = slow[rng.gen_range(0..slow.len())];
            }
        } else if g.banks_per_rank > 1 {
            while dst.bank == src.bank {
                dst.bank = rng.gen_range(0..g.banks_per_rank);
            }
            dst.subarray = slow[rng.gen_range(0..slow.len())];
        }
        dst.row = rng.gen_range(0..g.rows_per_subarray);
        if (dst.subarray, dst.row) != scratch && !dst.same_row(src) {
            return dst;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_grammar() {
        let t = parse_trace("5 R 0x1000\n\n0 C 0x0 0x200000 8192\n2 W 40\n").unwrap();
        assert_eq!(
            t,
            [
                TraceEvent::read(5, 0x1000),
                TraceEvent::copy(0, 0, 0x200000, 8192),
                TraceEvent::write(2, 0x40),
            ]
        );
    }

    #[test]
    fn rejects_malformed_lines_with_line_numbers() {
        for (text, line) in [
            ("1 R 0x0\nx R 0x0", 2),
            ("1 Q 0x0", 1),
            ("1 R", 1),
            ("\n\n1 C 0x0 0x40", 3),
            ("1 R 0xzz", 1),
            ("1 C 0x0 0x40 0", 1),
            ("-1 R 0x0", 1),
        ] {
            let err = parse_trace(text).unwrap_err();
            assert_eq!(err.line, line, "{text:?}: {err}");
        }
    }

    #[test]
    fn roundtrip_normalizes() {
        let t = "  3   R   0X1F40 \n0 C 0 40 64\n";
        let events = parse_trace(t).unwrap();
        assert_eq!(serialize_trace(&events), "3 R 0x1f40\n0 C 0x0 0x40 64\n");
    }

    #[test]
    fn generated_trace_roundtrips() {
        let spec = GeneratorSpec {
            length: 1000,
            cores: 1,
            ..GeneratorSpec::default()
        };
        let t = &generate_copy_workload(&spec, &DramConfig::default())[0];
        assert_eq!(parse_trace(&serialize_trace(t)).unwrap(), *t);
    }

    #[test]
    fn copy_count_is_exact() {
        let cfg = DramConfig::default();
        let spec = GeneratorSpec {
            copy_fraction: 0.1,
            length: 100_000,
            cores: 1,
            ..GeneratorSpec::default()
        };
        let t = &generate_copy_workload(&spec, &cfg)[0];
        let copies = t.iter().filter(|e| matches!(e.op, TraceOp::Copy { .. })).count();
        assert_eq!(copies, 10_000);
        let none = generate_copy_workload(&GeneratorSpec { copy_fraction: 0.0, ..spec }, &cfg);
        assert!(none[0].iter().all(|e| !matches!(e.op, TraceOp::Copy { .. })));
    }

    #[test]
    fn generator_is_deterministic_and_avoids_reserved_rows() {
        let cfg = DramConfig::default();
        let spec = GeneratorSpec {
            length: 3000,
            ..GeneratorSpec::default()
        };
        let a = generate_copy_workload(&spec, &cfg);
        assert_eq!(a, generate_copy_workload(&spec, &cfg));
        assert_ne!(a, generate_copy_workload(&GeneratorSpec { seed: 2, ..spec }, &cfg));
        let m = cfg.address_mapping();
        let scratch = scratch_row(&cfg.geometry);
        for e in a.iter().flatten() {
            let addrs = match e.op {
                TraceOp::Read(x) | TraceOp::Write(x) => vec![x],
                TraceOp::Copy { src, dst, .. } => vec![src, dst],
            };
            for x in addrs {
                let c = m.decode(x).unwrap();
                assert_ne!(c.subarray, 0);
                assert_ne!((c.subarray, c.row), scratch);
            }
        }
    }

    fn posted(_: RequestKind) -> Result<Submit, ()> {
        Ok(Submit::Posted)
    }

    fn one(op: &TraceOp) -> Result<VecDeque<RequestKind>, ()> {
        let c = Coordinates::default();
        Ok(VecDeque::from([match op {
            TraceOp::Read(_) => RequestKind::Read(c),
            _ => RequestKind::Write(c),
        }]))
    }

    #[test]
    fn read_issues_after_bubbles_and_blocks() {
        let mut core = Core::new(0, vec![TraceEvent::read(3, 0)]);
        let mut issued_at = None;
        for now in 0..10 {
            core.step(now, one, |_| {
                issued_at.get_or_insert(now);
                Ok::<_, ()>(Submit::Blocking(7))
            })
            .unwrap();
        }
        assert_eq!(issued_at, Some(3));
        assert_eq!(core.retired(), 3);
        assert!(core.is_waiting());
        core.complete(7, 20);
        assert!(core.is_done());
        assert_eq!(core.retired(), 4);
        assert_eq!(core.cycles(), Some(21));
    }

    #[test]
    fn unblocked_core_has_unit_ipc() {
        let events = vec![TraceEvent::write(5, 0), TraceEvent::write(2, 0x40)];
        let mut core = Core::new(0, events);
        let mut now = 0;
        while !core.is_done() {
            core.step(now, one, posted).unwrap();
            now += 1;
        }
        assert_eq!(core.retired(), core.instructions());
        assert_eq!(core.ipc(), Some(1.0));
    }

    #[test]
    fn full_queue_retries() {
        let mut core = Core::new(0, vec![TraceEvent::write(0, 0)]);
        let mut attempts = 0;
        for now in 0..3 {
            core.step(now, one, |_| {
                attempts += 1;
                Ok::<_, ()>(if attempts < 3 { Submit::Full } else { Submit::Posted })
            })
            .unwrap();
        }
        assert!(core.is_done());
        assert_eq!(core.cycles(), Some(3));
    }
}
