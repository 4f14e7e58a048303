//! Per-bank DRAM state machine.
//!
//! A bank owns one row buffer per subarray. Besides the standard ACT / PRE /
//! RD / WR commands it executes RBM, which latches the contents of one row
//! buffer into the precharged row buffer of an adjacent subarray, and linked
//! precharge, which borrows an idle neighbor's precharge units.
//!
//! Row contents are tracked as opaque [`Token`]s so copy mechanisms can be
//! checked for functional correctness, not only timing.
//!
//! Composite operations (in-DRAM copies) run with a *composite clock*: inside
//! one, durations accumulate in nanoseconds and are rounded to cycles once per
//! command completion instead of once per command, so an N-hop RBM chain
//! costs `ceil(N * tRBM / tCK)` cycles rather than `N * ceil(tRBM / tCK)`.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::dram::{ns_to_cycles, Geometry, SubarrayTiming, TimingModel, TimingParams};

pub type Cycle = u64;

/// Opaque row contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Token(pub u64);

impl Token {
    const PRISTINE: u64 = 1 << 63;

    /// Contents of a row that has never been written.
    pub fn pristine(bank: usize, bank_row: usize) -> Token {
        Token(Self::PRISTINE | ((bank as u64) << 32) | bank_row as u64)
    }

    pub fn is_pristine(self) -> bool {
        self.0 & Self::PRISTINE != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowBuffer {
    Precharged,
    /// Holds data moved in by RBM; no row of this subarray is open.
    Latched,
    Activated(usize),
}

#[derive(Debug, Clone)]
pub struct SubarrayState {
    row_buffer: RowBuffer,
    latched: Option<Token>,
    contents: BTreeMap<usize, Token>,
}

impl SubarrayState {
    fn new() -> Self {
        SubarrayState {
            row_buffer: RowBuffer::Precharged,
            latched: None,
            contents: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum CommandKind {
    Act,
    Pre,
    PreLinked,
    Rd,
    Wr,
    Rbm,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandKind::Act => "ACT",
            CommandKind::Pre => "PRE",
            CommandKind::PreLinked => "PRE_LINKED",
            CommandKind::Rd => "RD",
            CommandKind::Wr => "WR",
            CommandKind::Rbm => "RBM",
        })
    }
}

/// Direction of a row-buffer movement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Direction {
    /// Toward the higher subarray index.
    Up,
    Down,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

/// Which bus a column command moves its line over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DataPath {
    /// Off-chip memory channel and DRAM I/O.
    Channel,
    /// The rank's shared internal bus (RowClone pipelined serial mode).
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Command {
    pub kind: CommandKind,
    /// Flat bank index inside the channel.
    pub bank: usize,
    /// Target subarray; the source subarray for RBM.
    pub subarray: usize,
    /// Row inside the subarray (ACT, RD, WR).
    pub row: usize,
    pub column: usize,
    pub direction: Direction,
    pub path: DataPath,
    /// Data written by WR. `None` writes the line most recently read on
    /// this channel.
    pub token: Option<Token>,
}

impl Command {
    fn base(kind: CommandKind, bank: usize, subarray: usize) -> Self {
        Command {
            kind,
            bank,
            subarray,
            row: 0,
            column: 0,
            direction: Direction::Up,
            path: DataPath::Channel,
            token: None,
        }
    }

    pub fn act(bank: usize, subarray: usize, row: usize) -> Self {
        Command {
            row,
            ..Self::base(CommandKind::Act, bank, subarray)
        }
    }

    pub fn pre(bank: usize, subarray: usize) -> Self {
        Self::base(CommandKind::Pre, bank, subarray)
    }

    pub fn pre_linked(bank: usize, subarray: usize) -> Self {
        Self::base(CommandKind::PreLinked, bank, subarray)
    }

    pub fn rd(bank: usize, subarray: usize, row: usize, column: usize) -> Self {
        Command {
            row,
            column,
            ..Self::base(CommandKind::Rd, bank, subarray)
        }
    }

    pub fn wr(bank: usize, subarray: usize, row: usize, column: usize, token: Option<Token>) -> Self {
        Command {
            row,
            column,
            token,
            ..Self::base(CommandKind::Wr, bank, subarray)
        }
    }

    pub fn rbm(bank: usize, src: usize, direction: Direction) -> Self {
        Command {
            direction,
            ..Self::base(CommandKind::Rbm, bank, src)
        }
    }

    pub fn internal(mut self) -> Self {
        self.path = DataPath::Internal;
        self
    }

    /// Destination subarray of an RBM, if it exists.
    pub fn rbm_target(&self, subarrays: usize) -> Option<usize> {
        match self.direction {
            Direction::Up if self.subarray + 1 < subarrays => Some(self.subarray + 1),
            Direction::Down if self.subarray > 0 => Some(self.subarray - 1),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommandError {
    #[error("illegal {kind} on bank {bank} subarray {subarray}: {reason}")]
    Illegal {
        kind: CommandKind,
        bank: usize,
        subarray: usize,
        reason: String,
    },
    #[error("{kind} at cycle {now} violates {constraint}; earliest legal cycle is {earliest}")]
    Timing {
        kind: CommandKind,
        constraint: &'static str,
        now: Cycle,
        earliest: Cycle,
    },
}

/// One issued command, as written to the command-trace dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CommandRecord {
    pub cycle: Cycle,
    pub bank: usize,
    pub kind: CommandKind,
    pub subarray: usize,
    pub row: usize,
    pub direction: Direction,
    pub path: DataPath,
}

impl fmt::Display for CommandRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.cycle, self.bank, self.kind, self.subarray)?;
        match self.kind {
            CommandKind::Act | CommandKind::Rd | CommandKind::Wr => write!(f, " {}", self.row),
            CommandKind::Rbm => write!(f, " {}", self.direction),
            CommandKind::Pre | CommandKind::PreLinked => Ok(()),
        }
    }
}

/// Command tallies, the basis of energy accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CommandCounts {
    pub act: u64,
    /// All precharges, linked ones included.
    pub pre: u64,
    pub pre_linked: u64,
    pub rd: u64,
    pub wr: u64,
    pub rbm: u64,
    /// Lines moved over the off-chip channel.
    pub io_lines: u64,
}

impl CommandCounts {
    pub fn record(&mut self, cmd: &Command) {
        match cmd.kind {
            CommandKind::Act => self.act += 1,
            CommandKind::Pre => self.pre += 1,
            CommandKind::PreLinked => {
                self.pre += 1;
                self.pre_linked += 1;
            }
            CommandKind::Rd => self.rd += 1,
            CommandKind::Wr => self.wr += 1,
            CommandKind::Rbm => self.rbm += 1,
        }
        if matches!(cmd.kind, CommandKind::Rd | CommandKind::Wr) && cmd.path == DataPath::Channel {
            self.io_lines += 1;
        }
    }

    pub fn energy_uj(&self, e: &crate::dram::EnergyParams) -> f64 {
        self.act as f64 * e.e_act
            + self.pre as f64 * e.e_pre
            + self.rd as f64 * e.e_rd
            + self.wr as f64 * e.e_wr
            + self.io_lines as f64 * e.e_io_per_line
            + self.rbm as f64 * e.e_rbm_per_hop
    }

    pub fn since(&self, earlier: &CommandCounts) -> CommandCounts {
        CommandCounts {
            act: self.act - earlier.act,
            pre: self.pre - earlier.pre,
            pre_linked: self.pre_linked - earlier.pre_linked,
            rd: self.rd - earlier.rd,
            wr: self.wr - earlier.wr,
            rbm: self.rbm - earlier.rbm,
            io_lines: self.io_lines - earlier.io_lines,
        }
    }

    pub fn add(&mut self, other: &CommandCounts) {
        self.act += other.act;
        self.pre += other.pre;
        self.pre_linked += other.pre_linked;
        self.rd += other.rd;
        self.wr += other.wr;
        self.rbm += other.rbm;
        self.io_lines += other.io_lines;
    }
}

#[derive(Debug, Clone)]
struct CompositeClock {
    origin: Cycle,
    t_ck: f64,
    /// Exact completion instants (ns since origin) of events that ended on
    /// a given cycle.
    exact: BTreeMap<Cycle, f64>,
}

impl CompositeClock {
    fn offset_ns(&self, c: Cycle) -> f64 {
        self.exact
            .get(&c)
            .copied()
            .unwrap_or((c - self.origin) as f64 * self.t_ck)
    }

    fn finish(&mut self, start: Cycle, dur_ns: f64) -> Cycle {
        let end = self.offset_ns(start) + dur_ns;
        let c = self.origin + ns_to_cycles(end, self.t_ck);
        let slot = self.exact.entry(c).or_insert(end);
        if end > *slot {
            *slot = end;
        }
        c
    }
}

/// State of one bank: per-subarray row buffers and the earliest cycles at
/// which each command class may issue.
#[derive(Debug, Clone)]
pub struct BankState {
    id: usize,
    rows_per_subarray: usize,
    subarrays: Vec<SubarrayState>,
    timing: Vec<SubarrayTiming>,
    params: TimingParams,
    earliest_act: Cycle,
    earliest_col: Cycle,
    ras_done: Cycle,
    rtp_done: Cycle,
    wr_done: Cycle,
    rbm_done: Cycle,
    /// Per subarray: when its row buffer contents are stable (restored after
    /// ACT, or latched after RBM).
    ready: Vec<Cycle>,
    /// Occupancy of composite operations; maintained by the controller.
    pub busy_until: Cycle,
    composite: Option<CompositeClock>,
}

impl BankState {
    pub fn new(id: usize, geometry: &Geometry, model: &TimingModel) -> Self {
        let n = geometry.subarrays_per_bank;
        BankState {
            id,
            rows_per_subarray: geometry.rows_per_subarray,
            subarrays: (0..n).map(|_| SubarrayState::new()).collect(),
            timing: (0..n).map(|s| model.subarray(s)).collect(),
            params: model.params.clone(),
            earliest_act: 0,
            earliest_col: 0,
            ras_done: 0,
            rtp_done: 0,
            wr_done: 0,
            rbm_done: 0,
            ready: vec![0; n],
            busy_until: 0,
            composite: None,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn subarray_count(&self) -> usize {
        self.subarrays.len()
    }

    pub fn row_buffer(&self, sub: usize) -> RowBuffer {
        self.subarrays[sub].row_buffer
    }

    pub fn latched_token(&self, sub: usize) -> Option<Token> {
        self.subarrays[sub].latched
    }

    pub fn row_token(&self, sub: usize, row: usize) -> Token {
        self.subarrays[sub]
            .contents
            .get(&row)
            .copied()
            .unwrap_or_else(|| Token::pristine(self.id, sub * self.rows_per_subarray + row))
    }

    /// Overwrites a row directly, bypassing timing. Used to seed test state.
    pub fn poke_row(&mut self, sub: usize, row: usize, token: Token) {
        self.subarrays[sub].contents.insert(row, token);
    }

    /// Rows whose contents differ from their pristine value.
    pub fn written_rows(&self) -> impl Iterator<Item = (usize, usize, Token)> + '_ {
        self.subarrays
            .iter()
            .enumerate()
            .flat_map(|(s, st)| st.contents.iter().map(move |(&r, &t)| (s, r, t)))
    }

    pub fn is_precharged(&self) -> bool {
        self.subarrays
            .iter()
            .all(|s| s.row_buffer == RowBuffer::Precharged)
    }

    /// Subarrays whose row buffer is not precharged.
    pub fn open_subarrays(&self) -> impl Iterator<Item = usize> + '_ {
        self.subarrays
            .iter()
            .enumerate()
            .filter(|(_, s)| s.row_buffer != RowBuffer::Precharged)
            .map(|(i, _)| i)
    }

    /// The open (subarray, row), if any.
    pub fn open_row(&self) -> Option<(usize, usize)> {
        self.subarrays
            .iter()
            .enumerate()
            .find_map(|(i, s)| match s.row_buffer {
                RowBuffer::Activated(r) => Some((i, r)),
                _ => None,
            })
    }

    pub fn subarray_timing(&self, sub: usize) -> SubarrayTiming {
        self.timing[sub]
    }

    /// Starts a composite operation at `now`.
    pub fn begin_composite(&mut self, now: Cycle) {
        self.composite = Some(CompositeClock {
            origin: now,
            t_ck: self.params.t_ck,
            exact: BTreeMap::new(),
        });
    }

    pub fn end_composite(&mut self) {
        self.composite = None;
    }

    pub fn in_composite(&self) -> bool {
        self.composite.is_some()
    }

    fn span(&mut self, start: Cycle, dur_ns: f64) -> Cycle {
        match &mut self.composite {
            Some(clock) => clock.finish(start, dur_ns),
            None => start + ns_to_cycles(dur_ns, self.params.t_ck),
        }
    }

    fn illegal(&self, cmd: &Command, reason: impl Into<String>) -> CommandError {
        CommandError::Illegal {
            kind: cmd.kind,
            bank: self.id,
            subarray: cmd.subarray,
            reason: reason.into(),
        }
    }

    /// Lowest-indexed adjacent subarray whose row buffer is precharged.
    pub fn linked_partner(&self, sub: usize) -> Option<usize> {
        let lower = sub.checked_sub(1);
        let upper = (sub + 1 < self.subarrays.len()).then_some(sub + 1);
        [lower, upper]
            .into_iter()
            .flatten()
            .find(|&n| self.subarrays[n].row_buffer == RowBuffer::Precharged)
    }

    /// Precharge flavor to use for `sub` given the LIP setting.
    pub fn precharge_kind(&self, sub: usize, lip_enabled: bool) -> CommandKind {
        if lip_enabled && self.linked_partner(sub).is_some() {
            CommandKind::PreLinked
        } else {
            CommandKind::Pre
        }
    }

    /// Named lower bounds on the issue cycle of `cmd`, after checking that
    /// it is legal in the current state.
    fn constraints(&self, cmd: &Command) -> Result<Vec<(&'static str, Cycle)>, CommandError> {
        debug_assert_eq!(cmd.bank, self.id);
        let sub = cmd.subarray;
        if sub >= self.subarrays.len() {
            return Err(self.illegal(cmd, "subarray out of range"));
        }
        let state = &self.subarrays[sub];
        match cmd.kind {
            CommandKind::Act => {
                if cmd.row >= self.rows_per_subarray {
                    return Err(self.illegal(cmd, "row out of range"));
                }
                match state.row_buffer {
                    RowBuffer::Precharged => {
                        if self.open_subarrays().next().is_some() {
                            return Err(self.illegal(
                                cmd,
                                "another subarray of the bank is open (no subarray-level parallelism)",
                            ));
                        }
                        Ok(vec![("tRP", self.earliest_act)])
                    }
                    RowBuffer::Latched => Ok(vec![("tRBM", self.ready[sub])]),
                    RowBuffer::Activated(r) if r == cmd.row => {
                        Err(self.illegal(cmd, format!("row {r} is already open")))
                    }
                    RowBuffer::Activated(r) => {
                        if self.composite.is_some() {
                            Ok(vec![("tRAS", self.ready[sub])])
                        } else {
                            Err(self.illegal(cmd, format!("row {r} of the subarray is open")))
                        }
                    }
                }
            }
            CommandKind::Pre | CommandKind::PreLinked => {
                if state.row_buffer == RowBuffer::Precharged {
                    return Err(self.illegal(cmd, "subarray is already precharged"));
                }
                if cmd.kind == CommandKind::PreLinked && self.linked_partner(sub).is_none() {
                    return Err(self.illegal(cmd, "no precharged neighbor to link with"));
                }
                Ok(vec![
                    ("tRAS", self.ras_done),
                    ("tRTP", self.rtp_done),
                    ("tWR", self.wr_done),
                    ("tRBM", self.rbm_done),
                    ("tRAS", self.ready[sub]),
                ])
            }
            CommandKind::Rd | CommandKind::Wr => {
                if state.row_buffer != RowBuffer::Activated(cmd.row) {
                    return Err(self.illegal(cmd, format!("row {} is not open", cmd.row)));
                }
                if cmd.kind == CommandKind::Wr && cmd.token.is_none() {
                    return Err(self.illegal(cmd, "write without data"));
                }
                Ok(vec![("tRCD", self.earliest_col)])
            }
            CommandKind::Rbm => {
                let Some(dst) = cmd.rbm_target(self.subarrays.len()) else {
                    return Err(self.illegal(cmd, "no adjacent subarray in that direction"));
                };
                if state.latched.is_none() || state.row_buffer == RowBuffer::Precharged {
                    return Err(self.illegal(cmd, "source row buffer holds no data"));
                }
                if self.subarrays[dst].row_buffer != RowBuffer::Precharged {
                    return Err(self.illegal(cmd, "destination row buffer is not precharged"));
                }
                Ok(vec![("tRAS", self.ready[sub]), ("tRP", self.earliest_act)])
            }
        }
    }

    /// Earliest cycle at which `cmd` may issue, as far as this bank is
    /// concerned.
    pub fn earliest(&self, cmd: &Command) -> Result<Cycle, CommandError> {
        Ok(self
            .constraints(cmd)?
            .into_iter()
            .map(|(_, c)| c)
            .max()
            .unwrap_or(0))
    }

    /// Issues `cmd` at `now`, returning the cycle at which its effect
    /// completes: data available for ACT (tRCD) and RD, the row restored
    /// for a copy activation, the bank precharged for PRE, the destination
    /// latched for RBM.
    pub fn issue(&mut self, cmd: &Command, now: Cycle) -> Result<Cycle, CommandError> {
        let constraints = self.constraints(cmd)?;
        if let Some(&(name, at)) = constraints.iter().filter(|(_, c)| *c > now).max_by_key(|(_, c)| *c) {
            return Err(CommandError::Timing {
                kind: cmd.kind,
                constraint: name,
                now,
                earliest: at,
            });
        }
        let sub = cmd.subarray;
        let t = self.timing[sub];
        match cmd.kind {
            CommandKind::Act => match self.subarrays[sub].row_buffer {
                RowBuffer::Precharged => {
                    let token = self.row_token(sub, cmd.row);
                    let s = &mut self.subarrays[sub];
                    s.latched = Some(token);
                    s.row_buffer = RowBuffer::Activated(cmd.row);
                    let col = self.span(now, t.t_rcd);
                    let restored = self.span(now, t.t_ras);
                    self.earliest_col = col;
                    self.ras_done = restored;
                    self.ready[sub] = restored;
                    Ok(col)
                }
                RowBuffer::Latched => {
                    let done = self.span(now, t.t_ras + self.params.t_commit);
                    self.commit_activation(cmd.row, sub)?;
                    self.after_copy_activation(sub, done);
                    Ok(done)
                }
                RowBuffer::Activated(_) => {
                    // Back-to-back activation inside a copy: the open row
                    // buffer overwrites the newly opened row.
                    let done = self.span(now, t.t_ras);
                    let token = self.subarrays[sub].latched.expect("activated row is latched");
                    let s = &mut self.subarrays[sub];
                    s.contents.insert(cmd.row, token);
                    s.row_buffer = RowBuffer::Activated(cmd.row);
                    self.after_copy_activation(sub, done);
                    Ok(done)
                }
            },
            CommandKind::Pre | CommandKind::PreLinked => {
                let latency = if cmd.kind == CommandKind::PreLinked {
                    t.t_rp_linked
                } else {
                    t.t_rp
                };
                let done = self.span(now, latency);
                self.close(sub);
                // Buffers latched by an RBM chain share the enabled links
                // and are precharged together with their neighbor.
                let mut k = sub;
                while k > 0 && self.subarrays[k - 1].row_buffer == RowBuffer::Latched {
                    k -= 1;
                    self.close(k);
                }
                let mut k = sub + 1;
                while k < self.subarrays.len() && self.subarrays[k].row_buffer == RowBuffer::Latched {
                    self.close(k);
                    k += 1;
                }
                self.earliest_act = self.earliest_act.max(done);
                Ok(done)
            }
            CommandKind::Rd => {
                let done = self.span(now, self.params.t_cl + self.params.t_bl);
                let rtp = self.span(now, self.params.t_rtp);
                self.rtp_done = self.rtp_done.max(rtp);
                Ok(done)
            }
            CommandKind::Wr => {
                let token = cmd.token.expect("checked above");
                let s = &mut self.subarrays[sub];
                s.contents.insert(cmd.row, token);
                s.latched = Some(token);
                let p = &self.params;
                let (data, recovery) = (p.t_cl + p.t_bl, p.t_cl + p.t_bl + p.t_wr);
                let done = self.span(now, data);
                let wr = self.span(now, recovery);
                self.wr_done = self.wr_done.max(wr);
                Ok(done)
            }
            CommandKind::Rbm => {
                let dst = cmd.rbm_target(self.subarrays.len()).expect("checked above");
                let token = self.subarrays[sub].latched;
                let done = self.span(now, self.params.t_rbm);
                let d = &mut self.subarrays[dst];
                d.latched = token;
                d.row_buffer = RowBuffer::Latched;
                self.ready[dst] = done;
                self.rbm_done = self.rbm_done.max(done);
                Ok(done)
            }
        }
    }

    fn after_copy_activation(&mut self, sub: usize, done: Cycle) {
        self.ready[sub] = done;
        self.ras_done = self.ras_done.max(done);
        self.earliest_col = self.earliest_col.max(done);
    }

    fn close(&mut self, sub: usize) {
        let s = &mut self.subarrays[sub];
        s.row_buffer = RowBuffer::Precharged;
        s.latched = None;
    }

    /// Row-buffer movement from `src` into the adjacent subarray `dst`.
    pub fn rbm(&mut self, src: usize, dst: usize, now: Cycle) -> Result<Cycle, CommandError> {
        let direction = match dst.checked_sub(src) {
            Some(1) => Direction::Up,
            _ if src.checked_sub(dst) == Some(1) => Direction::Down,
            _ => {
                return Err(CommandError::Illegal {
                    kind: CommandKind::Rbm,
                    bank: self.id,
                    subarray: src,
                    reason: format!("subarrays {src} and {dst} are not adjacent"),
                })
            }
        };
        self.issue(&Command::rbm(self.id, src, direction), now)
    }

    /// Precharges `sub`, linking a precharged neighbor when LIP is enabled.
    pub fn precharge(&mut self, sub: usize, now: Cycle, lip_enabled: bool) -> Result<Cycle, CommandError> {
        let cmd = Command {
            kind: self.precharge_kind(sub, lip_enabled),
            ..Command::pre(self.id, sub)
        };
        self.issue(&cmd, now)
    }

    /// Writes the latched buffer of `sub` into `dst_row` and opens it.
    pub fn commit_activation(&mut self, dst_row: usize, sub: usize) -> Result<(), CommandError> {
        let s = &mut self.subarrays[sub];
        let illegal = |reason: &str| CommandError::Illegal {
            kind: CommandKind::Act,
            bank: self.id,
            subarray: sub,
            reason: reason.to_string(),
        };
        match (s.row_buffer, s.latched) {
            (RowBuffer::Latched, Some(token)) => {
                s.contents.insert(dst_row, token);
                s.row_buffer = RowBuffer::Activated(dst_row);
                Ok(())
            }
            (RowBuffer::Activated(r), Some(token)) if r == dst_row => {
                s.contents.insert(dst_row, token);
                Ok(())
            }
            (RowBuffer::Activated(_), _) => Err(illegal("another row of the subarray is open")),
            _ => Err(illegal("no latched data to commit")),
        }
    }
}

/// All banks of one channel plus the constraints they share: tRRD/tFAW per
/// rank, tCCD and data-bus occupancy on the channel, and the per-rank
/// internal bus used by pipelined serial copies.
#[derive(Debug, Clone)]
pub struct DramChannel {
    banks: Vec<BankState>,
    banks_per_rank: usize,
    model: TimingModel,
    rank_acts: Vec<Vec<(Cycle, usize)>>,
    last_col: Option<Cycle>,
    bus_free_at: Cycle,
    internal_last: Vec<Option<Cycle>>,
    transfer: Option<Token>,
    log: Option<Vec<CommandRecord>>,
    counts: CommandCounts,
    rrd: Cycle,
    faw: Cycle,
    ccd: Cycle,
    cl: Cycle,
    bl: Cycle,
}

impl DramChannel {
    pub fn new(geometry: &Geometry, model: TimingModel) -> Self {
        let banks = (0..geometry.banks_per_channel())
            .map(|b| BankState::new(b, geometry, &model))
            .collect();
        let p = &model.params;
        let (rrd, faw, ccd, cl, bl) = (
            model.cycles(p.t_rrd),
            model.cycles(p.t_faw),
            model.cycles(p.t_ccd),
            model.cycles(p.t_cl),
            model.cycles(p.t_bl),
        );
        DramChannel {
            banks,
            banks_per_rank: geometry.banks_per_rank,
            rank_acts: vec![Vec::new(); geometry.ranks_per_channel],
            internal_last: vec![None; geometry.ranks_per_channel],
            model,
            last_col: None,
            bus_free_at: 0,
            transfer: None,
            log: None,
            counts: CommandCounts::default(),
            rrd,
            faw,
            ccd,
            cl,
            bl,
        }
    }

    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn log(&self) -> &[CommandRecord] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn counts(&self) -> &CommandCounts {
        &self.counts
    }

    pub fn timing(&self) -> &TimingModel {
        &self.model
    }

    pub fn bank(&self, b: usize) -> &BankState {
        &self.banks[b]
    }

    pub fn bank_mut(&mut self, b: usize) -> &mut BankState {
        &mut self.banks[b]
    }

    pub fn banks(&self) -> &[BankState] {
        &self.banks
    }

    pub fn rank_of(&self, bank: usize) -> usize {
        bank / self.banks_per_rank
    }

    pub fn banks_per_rank(&self) -> usize {
        self.banks_per_rank
    }

    /// First cycle at which the data bus is free.
    pub fn bus_free_at(&self) -> Cycle {
        self.bus_free_at
    }

    /// A constraint shared between banks that `cmd` at cycle `c` would
    /// violate, with the next cycle worth trying.
    fn shared_conflict(&self, cmd: &Command, c: Cycle) -> Option<(&'static str, Cycle)> {
        let rank = self.rank_of(cmd.bank);
        match (cmd.kind, cmd.path) {
            (CommandKind::Act, _) => {
                let acts = &self.rank_acts[rank];
                for &(t, b) in acts {
                    if b != cmd.bank && t.abs_diff(c) < self.rrd {
                        return Some(("tRRD", t + self.rrd));
                    }
                }
                let mut window: Vec<Cycle> = acts
                    .iter()
                    .map(|&(t, _)| t)
                    .filter(|&t| t.abs_diff(c) < self.faw)
                    .collect();
                window.push(c);
                window.sort_unstable();
                for w in window.windows(5) {
                    if w[4] - w[0] < self.faw && w.contains(&c) {
                        return Some(("tFAW", c + 1));
                    }
                }
                None
            }
            (CommandKind::Rd | CommandKind::Wr, DataPath::Channel) => {
                if let Some(l) = self.last_col {
                    if c < l + self.ccd {
                        return Some(("tCCD", l + self.ccd));
                    }
                }
                if c + self.cl < self.bus_free_at {
                    return Some(("data bus", self.bus_free_at - self.cl));
                }
                None
            }
            (CommandKind::Rd, DataPath::Internal) => match self.internal_last[rank] {
                Some(l) if c < l + self.ccd => Some(("tCCD", l + self.ccd)),
                _ => None,
            },
            _ => None,
        }
    }

    fn resolve(&self, cmd: &Command) -> Command {
        let mut cmd = *cmd;
        if cmd.kind == CommandKind::Wr && cmd.token.is_none() {
            cmd.token = self.transfer;
        }
        cmd
    }

    /// Earliest cycle >= `after` at which `cmd` is legal.
    pub fn earliest(&self, cmd: &Command, after: Cycle) -> Result<Cycle, CommandError> {
        let cmd = self.resolve(cmd);
        let mut c = self.banks[cmd.bank].earliest(&cmd)?.max(after);
        while let Some((_, next)) = self.shared_conflict(&cmd, c) {
            debug_assert!(next > c);
            c = next;
        }
        Ok(c)
    }

    /// Issues `cmd` at `now`; see [`BankState::issue`].
    pub fn issue(&mut self, cmd: &Command, now: Cycle) -> Result<Cycle, CommandError> {
        let cmd = self.resolve(cmd);
        if let Some((name, next)) = self.shared_conflict(&cmd, now) {
            return Err(CommandError::Timing {
                kind: cmd.kind,
                constraint: name,
                now,
                earliest: self.earliest(&cmd, next).unwrap_or(next),
            });
        }
        let done = self.banks[cmd.bank].issue(&cmd, now)?;
        let rank = self.rank_of(cmd.bank);
        match (cmd.kind, cmd.path) {
            (CommandKind::Act, _) => {
                let acts = &mut self.rank_acts[rank];
                let pos = acts.partition_point(|&(t, _)| t <= now);
                acts.insert(pos, (now, cmd.bank));
            }
            (CommandKind::Rd | CommandKind::Wr, DataPath::Channel) => {
                self.last_col = Some(self.last_col.map_or(now, |l| l.max(now)));
                self.bus_free_at = self.bus_free_at.max(now + self.cl + self.bl);
            }
            (CommandKind::Rd, DataPath::Internal) => {
                self.internal_last[rank] = Some(self.internal_last[rank].map_or(now, |l| l.max(now)));
            }
            _ => {}
        }
        if cmd.kind == CommandKind::Rd {
            self.transfer = self.banks[cmd.bank].latched_token(cmd.subarray);
        }
        self.counts.record(&cmd);
        if let Some(log) = &mut self.log {
            log.push(CommandRecord {
                cycle: now,
                bank: cmd.bank,
                kind: cmd.kind,
                subarray: cmd.subarray,
                row: cmd.row,
                direction: cmd.direction,
                path: cmd.path,
            });
        }
        Ok(done)
    }

    /// Precharges `sub` of `bank`, linking a neighbor when LIP is enabled.
    pub fn precharge(&mut self, bank: usize, sub: usize, now: Cycle, lip: bool) -> Result<Cycle, CommandError> {
        let kind = self.banks[bank].precharge_kind(sub, lip);
        self.issue(&Command { kind, ..Command::pre(bank, sub) }, now)
    }

    /// Forgets activation history that can no longer constrain commands at
    /// or after `now`.
    pub fn retire_history(&mut self, now: Cycle) {
        let horizon = self.faw.max(self.rrd);
        for acts in &mut self.rank_acts {
            let keep_from = acts.partition_point(|&(t, _)| t + horizon < now);
            acts.drain(..keep_from);
        }
    }
}
