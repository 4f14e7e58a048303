//! Timing and legality checker over command logs, written against the DDR
//! rules directly rather than the simulator's bank engine.

#![allow(dead_code)]

pub mod copies;

use std::collections::HashMap;

use lisa_sim::bank::{CommandKind, CommandRecord, DataPath, Direction};
use lisa_sim::dram::DramConfig;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Buf {
    Closed,
    Open(usize),
    /// Holds data moved in from a neighbor.
    Latched,
}

#[derive(Clone, Copy)]
struct Sub {
    buf: Buf,
    act: Option<u64>,
    pre: Option<(u64, bool)>,
    rd: Option<u64>,
    wr: Option<u64>,
    /// When the buffer was filled by a movement.
    latched_at: Option<u64>,
}

struct Limits {
    rcd: u64,
    ras: u64,
    rp: u64,
    rp_linked: u64,
}

pub struct Checker {
    subarrays: usize,
    banks_per_rank: usize,
    slow: Limits,
    fast: Limits,
    fast_subs: Vec<usize>,
    rrd: u64,
    faw: u64,
    ccd: u64,
    rtp: u64,
    wr: u64,
    rbm: u64,
}

fn cycles(ns: f64, tck: f64) -> u64 {
    (ns / tck + 1e-9).floor() as u64
}

impl Checker {
    /// `villa` selects the reduced timings of the fast subarrays.
    pub fn new(cfg: &DramConfig, villa: bool) -> Self {
        let t = &cfg.timing;
        let c = |ns: f64| cycles(ns, t.t_ck);
        let linked = t.t_rp_linked.unwrap_or(if t.t_rp == 13.75 { 5.0 } else { t.t_rp / 2.6 });
        let limits = |k: f64| Limits {
            rcd: c(t.t_rcd * k),
            ras: c(t.t_ras * k),
            rp: c(t.t_rp * k),
            rp_linked: c(linked * k),
        };
        Checker {
            subarrays: cfg.geometry.subarrays_per_bank,
            banks_per_rank: cfg.geometry.banks_per_rank,
            slow: limits(1.0),
            fast: limits(cfg.villa.fast_scale),
            fast_subs: if villa { cfg.villa.fast_subarrays.clone() } else { vec![] },
            rrd: c(t.t_rrd),
            faw: c(t.t_faw),
            ccd: c(t.t_ccd),
            rtp: c(t.t_rtp),
            wr: c(t.t_wr),
            rbm: c(t.t_rbm),
        }
    }

    fn limits(&self, sub: usize) -> &Limits {
        if self.fast_subs.contains(&sub) {
            &self.fast
        } else {
            &self.slow
        }
    }

    /// Every violation found in `log` (one channel).
    pub fn check(&self, log: &[CommandRecord]) -> Vec<String> {
        let mut log = log.to_vec();
        log.sort_by_key(|r| r.cycle);
        let fresh = Sub {
            buf: Buf::Closed,
            act: None,
            pre: None,
            rd: None,
            wr: None,
            latched_at: None,
        };
        let mut subs: HashMap<(usize, usize), Sub> = HashMap::new();
        let mut rank_acts: HashMap<usize, Vec<(u64, usize)>> = HashMap::new();
        let mut last_col: Option<u64> = None;
        let mut last_internal: HashMap<usize, u64> = HashMap::new();
        let mut bad = Vec::new();

        for r in &log {
            let t = r.cycle;
            let lim = self.limits(r.subarray);
            let mut fail = |what: String| bad.push(format!("{r}: {what}"));
            let s = *subs.entry((r.bank, r.subarray)).or_insert(fresh);
            match r.kind {
                CommandKind::Act => {
                    if let Some((p, linked)) = s.pre {
                        let need = if linked { lim.rp_linked } else { lim.rp };
                        if s.buf == Buf::Closed && t < p + need {
                            fail(format!("ACT {} after PRE, needs {need}", t - p));
                        }
                    }
                    let rank = r.bank / self.banks_per_rank;
                    let acts = rank_acts.entry(rank).or_default();
                    if let Some(&(p, _)) = acts.iter().rev().find(|&&(_, b)| b != r.bank) {
                        if t < p + self.rrd {
                            fail(format!("tRRD: {} after another bank", t - p));
                        }
                    }
                    acts.push((t, r.bank));
                    if acts.len() >= 5 {
                        let w = acts[acts.len() - 5].0;
                        if t < w + self.faw {
                            fail(format!("tFAW: five ACTs in {}", t - w));
                        }
                    }
                    let e = subs.get_mut(&(r.bank, r.subarray)).unwrap();
                    e.buf = Buf::Open(r.row);
                    e.act = Some(t);
                }
                CommandKind::Pre | CommandKind::PreLinked => {
                    if let (Buf::Open(_), Some(a)) = (s.buf, s.act) {
                        if t < a + lim.ras {
                            fail(format!("tRAS: PRE {} after ACT", t - a));
                        }
                    }
                    if s.rd.is_some_and(|x| t < x + self.rtp) {
                        fail("tRTP".into());
                    }
                    if s.wr.is_some_and(|x| t < x + self.wr) {
                        fail("tWR".into());
                    }
                    let linked = r.kind == CommandKind::PreLinked;
                    let mut close = |k: usize| {
                        let e = subs.entry((r.bank, k)).or_insert(fresh);
                        e.buf = Buf::Closed;
                        e.pre = Some((t, linked));
                        e.rd = None;
                        e.wr = None;
                    };
                    close(r.subarray);
                    let latched = |k: usize, subs: &HashMap<(usize, usize), Sub>| {
                        subs.get(&(r.bank, k)).is_some_and(|e| e.buf == Buf::Latched)
                    };
                    let mut k = r.subarray;
                    while k > 0 && latched(k - 1, &subs) {
                        k -= 1;
                        subs.get_mut(&(r.bank, k)).unwrap().buf = Buf::Closed;
                        subs.get_mut(&(r.bank, k)).unwrap().pre = Some((t, linked));
                    }
                    let mut k = r.subarray + 1;
                    while k < self.subarrays && latched(k, &subs) {
                        subs.get_mut(&(r.bank, k)).unwrap().buf = Buf::Closed;
                        subs.get_mut(&(r.bank, k)).unwrap().pre = Some((t, linked));
                        k += 1;
                    }
                }
                CommandKind::Rd | CommandKind::Wr => {
                    match s.buf {
                        Buf::Open(row) if row == r.row => {}
                        other => fail(format!("column access with buffer {other:?}")),
                    }
                    if s.act.is_some_and(|a| t < a + lim.rcd) {
                        fail(format!("tRCD: {} after ACT", t - s.act.unwrap()));
                    }
                    match r.path {
                        DataPath::Channel => {
                            if last_col.is_some_and(|l| t < l + self.ccd) {
                                fail("tCCD on the channel".into());
                            }
                            last_col = Some(t);
                        }
                        DataPath::Internal if r.kind == CommandKind::Rd => {
                            let rank = r.bank / self.banks_per_rank;
                            if last_internal.get(&rank).is_some_and(|&l| t < l + self.ccd) {
                                fail("tCCD on the internal bus".into());
                            }
                            last_internal.insert(rank, t);
                        }
                        DataPath::Internal => {}
                    }
                    let e = subs.get_mut(&(r.bank, r.subarray)).unwrap();
                    if r.kind == CommandKind::Rd {
                        e.rd = Some(t);
                    } else {
                        e.wr = Some(t);
                    }
                }
                CommandKind::Rbm => {
                    let dst = match r.direction {
                        Direction::Up => r.subarray + 1,
                        Direction::Down => r.subarray.wrapping_sub(1),
                    };
                    if dst >= self.subarrays {
                        fail("movement off the end of the bank".into());
                        continue;
                    }
                    match s.buf {
                        Buf::Open(_) => {
                            if s.act.is_some_and(|a| t < a + lim.ras) {
                                fail(format!("movement {} after ACT", t - s.act.unwrap()));
                            }
                        }
                        Buf::Latched => {
                            if s.latched_at.is_some_and(|l| t < l + self.rbm) {
                                fail("movement before the previous hop finished".into());
                            }
                        }
                        Buf::Closed => fail("movement from a precharged buffer".into()),
                    }
                    let d = subs.entry((r.bank, dst)).or_insert(fresh);
                    if d.buf != Buf::Closed {
                        fail(format!("movement into buffer {:?}", d.buf));
                    }
                    d.buf = Buf::Latched;
                    d.latched_at = Some(t);
                    d.act = None;
                }
            }
        }
        bad
    }
}
