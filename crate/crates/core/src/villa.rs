//! Fast-subarray row caching: per-bank access counters pick hot rows, which
//! are copied into a fast subarray on their next access and replaced by
//! least benefit.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::dram::{Geometry, VillaParams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VillaError {
    #[error("eviction requested while {free} fast rows are free")]
    NotFull { free: usize },
    #[error("fast slot {0} is already occupied")]
    SlotOccupied(usize),
    #[error("row {0} is already cached")]
    AlreadyCached(usize),
}

/// Saturating access counters indexed by `bank_row % counters`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HotRowTracker {
    counters: Vec<u16>,
    max: u16,
    hot_rows: usize,
    hot_set: BTreeSet<usize>,
}

impl HotRowTracker {
    pub fn new(counters: usize, counter_bits: u32, hot_rows: usize) -> Self {
        HotRowTracker {
            counters: vec![0; counters],
            max: ((1u32 << counter_bits) - 1) as u16,
            hot_rows,
            hot_set: BTreeSet::new(),
        }
    }

    pub fn from_params(p: &VillaParams) -> Self {
        Self::new(p.counters_per_bank, p.counter_bits, p.hot_rows)
    }

    pub fn hash(&self, bank_row: usize) -> usize {
        bank_row % self.counters.len()
    }

    pub fn record_access(&mut self, bank_row: usize) {
        let i = self.hash(bank_row);
        self.counters[i] = self.counters[i].saturating_add(1).min(self.max);
    }

    pub fn counters(&self) -> &[u16] {
        &self.counters
    }

    pub fn set_counter(&mut self, index: usize, value: u16) {
        self.counters[index] = value.min(self.max);
    }

    pub fn saturation(&self) -> u16 {
        self.max
    }

    /// Counter indices selected at the last epoch boundary.
    pub fn hot_set(&self) -> &BTreeSet<usize> {
        &self.hot_set
    }

    pub fn is_hot(&self, bank_row: usize) -> bool {
        self.hot_set.contains(&self.hash(bank_row))
    }

    /// Selects the largest non-zero counters (lower index wins ties) as the
    /// new hot set, then halves every counter.
    pub fn end_epoch(&mut self) -> &BTreeSet<usize> {
        let mut ranked: Vec<usize> = (0..self.counters.len()).filter(|&i| self.counters[i] > 0).collect();
        ranked.sort_by_key(|&i| (std::cmp::Reverse(self.counters[i]), i));
        ranked.truncate(self.hot_rows);
        self.hot_set = ranked.into_iter().collect();
        for c in &mut self.counters {
            *c /= 2;
        }
        &self.hot_set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CachedRow {
    /// Row inside the bank whose data the slot holds.
    pub source: usize,
    pub benefit: u16,
    pub dirty: bool,
}

/// Tag store of the fast rows of one bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VillaCache {
    slots: Vec<Option<CachedRow>>,
    tags: BTreeMap<usize, usize>,
    benefit_max: u16,
}

impl VillaCache {
    pub fn new(capacity: usize, benefit_bits: u32) -> Self {
        VillaCache {
            slots: vec![None; capacity],
            tags: BTreeMap::new(),
            benefit_max: ((1u32 << benefit_bits) - 1) as u16,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn occupied(&self) -> usize {
        self.tags.len()
    }

    pub fn is_full(&self) -> bool {
        self.occupied() == self.capacity()
    }

    pub fn lookup(&self, source: usize) -> Option<usize> {
        self.tags.get(&source).copied()
    }

    pub fn slot(&self, slot: usize) -> Option<&CachedRow> {
        self.slots[slot].as_ref()
    }

    pub fn tags(&self) -> &BTreeMap<usize, usize> {
        &self.tags
    }

    /// Records a hit on `slot`.
    pub fn touch(&mut self, slot: usize, write: bool) {
        let max = self.benefit_max;
        let row = self.slots[slot].as_mut().expect("touched slot is occupied");
        row.benefit = (row.benefit + 1).min(max);
        row.dirty |= write;
    }

    pub fn mark_dirty(&mut self, slot: usize) {
        if let Some(row) = self.slots[slot].as_mut() {
            row.dirty = true;
        }
    }

    pub fn free_slot(&self) -> Option<usize> {
        self.slots.iter().position(Option::is_none)
    }

    /// Removes the least-benefit row (lowest slot on ties) and returns its
    /// slot and contents.
    pub fn evict_victim(&mut self) -> Result<(usize, CachedRow), VillaError> {
        if !self.is_full() {
            return Err(VillaError::NotFull {
                free: self.capacity() - self.occupied(),
            });
        }
        let slot = (0..self.slots.len())
            .min_by_key(|&s| (self.slots[s].map_or(0, |r| r.benefit), s))
            .expect("non-empty cache");
        let row = self.slots[slot].take().expect("full cache");
        self.tags.remove(&row.source);
        Ok((slot, row))
    }

    pub fn install(&mut self, source: usize, slot: usize) -> Result<(), VillaError> {
        if self.slots[slot].is_some() {
            return Err(VillaError::SlotOccupied(slot));
        }
        if self.tags.contains_key(&source) {
            return Err(VillaError::AlreadyCached(source));
        }
        self.slots[slot] = Some(CachedRow {
            source,
            benefit: 0,
            dirty: false,
        });
        self.tags.insert(source, slot);
        Ok(())
    }

    /// Drops the tag of `source`, returning what the slot held.
    pub fn remove(&mut self, source: usize) -> Option<(usize, CachedRow)> {
        let slot = self.tags.remove(&source)?;
        let row = self.slots[slot].take().expect("tagged slot is occupied");
        Some((slot, row))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessOutcome {
    Hit(usize),
    FillScheduled,
    Miss,
}

/// Where a fill lands and what it displaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FillPlan {
    pub slot: usize,
    pub victim: Option<CachedRow>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct VillaCounts {
    pub hits: u64,
    pub misses: u64,
    pub fills: u64,
    pub evictions: u64,
    pub writebacks: u64,
}

impl VillaCounts {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }

    pub fn add(&mut self, o: &VillaCounts) {
        self.hits += o.hits;
        self.misses += o.misses;
        self.fills += o.fills;
        self.evictions += o.evictions;
        self.writebacks += o.writebacks;
    }
}

/// Caching state of one bank.
#[derive(Debug, Clone)]
pub struct BankVilla {
    pub tracker: HotRowTracker,
    pub cache: VillaCache,
    pending: BTreeSet<usize>,
    fast_subarrays: Vec<usize>,
    rows_per_subarray: usize,
    pub counts: VillaCounts,
}

impl BankVilla {
    pub fn new(p: &VillaParams, g: &Geometry) -> Self {
        BankVilla {
            tracker: HotRowTracker::from_params(p),
            cache: VillaCache::new(p.fast_subarrays.len() * g.rows_per_subarray, p.benefit_bits),
            pending: BTreeSet::new(),
            fast_subarrays: p.fast_subarrays.clone(),
            rows_per_subarray: g.rows_per_subarray,
            counts: VillaCounts::default(),
        }
    }

    /// (subarray, row) backing a fast slot.
    pub fn slot_location(&self, slot: usize) -> (usize, usize) {
        (
            self.fast_subarrays[slot / self.rows_per_subarray],
            slot % self.rows_per_subarray,
        )
    }

    pub fn is_fast_subarray(&self, sub: usize) -> bool {
        self.fast_subarrays.contains(&sub)
    }

    /// Classifies a demand access and updates counters.
    pub fn on_access(&mut self, bank_row: usize, write: bool) -> AccessOutcome {
        self.tracker.record_access(bank_row);
        if let Some(slot) = self.cache.lookup(bank_row) {
            self.cache.touch(slot, write);
            self.counts.hits += 1;
            return AccessOutcome::Hit(slot);
        }
        self.counts.misses += 1;
        if self.tracker.is_hot(bank_row) && self.pending.insert(bank_row) {
            AccessOutcome::FillScheduled
        } else {
            AccessOutcome::Miss
        }
    }

    pub fn fill_pending(&self, bank_row: usize) -> bool {
        self.pending.contains(&bank_row)
    }

    /// Picks the slot for a scheduled fill, evicting if needed, and
    /// installs the tag.
    pub fn start_fill(&mut self, bank_row: usize) -> Result<FillPlan, VillaError> {
        self.pending.remove(&bank_row);
        if self.cache.lookup(bank_row).is_some() {
            return Err(VillaError::AlreadyCached(bank_row));
        }
        let (slot, victim) = match self.cache.free_slot() {
            Some(s) => (s, None),
            None => {
                let (s, v) = self.cache.evict_victim()?;
                self.counts.evictions += 1;
                if v.dirty {
                    self.counts.writebacks += 1;
                }
                (s, Some(v))
            }
        };
        self.cache.install(bank_row, slot)?;
        self.counts.fills += 1;
        Ok(FillPlan { slot, victim })
    }

    pub fn cancel_fill(&mut self, bank_row: usize) {
        self.pending.remove(&bank_row);
    }

    /// Drops a cached row whose backing copy is about to change or be read
    /// by a bulk copy. Returns the slot and whether it must be written back.
    pub fn invalidate(&mut self, bank_row: usize) -> Option<(usize, bool)> {
        let (slot, row) = self.cache.remove(bank_row)?;
        if row.dirty {
            self.counts.writebacks += 1;
        }
        Some((slot, row.dirty))
    }

    pub fn end_epoch(&mut self) {
        self.tracker.end_epoch();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tracker() -> HotRowTracker {
        HotRowTracker::from_params(&VillaParams::default())
    }

    #[test]
    fn counters_saturate() {
        let mut t = tracker();
        t.set_counter(5, 255);
        t.record_access(5);
        assert_eq!(t.counters()[5], 255);
        assert_eq!(t.saturation(), 255);
    }

    #[test]
    fn counts_accesses() {
        let mut t = tracker();
        for _ in 0..3 {
            t.record_access(77);
        }
        assert_eq!(t.counters()[77], 3);
    }

    #[test]
    fn colliding_rows_share_a_counter() {
        let mut t = tracker();
        t.record_access(10);
        t.record_access(10 + 1024);
        t.record_access(10 + 4096);
        assert_eq!(t.hash(10 + 1024), t.hash(10));
        assert_eq!(t.counters()[10], 3);
    }

    #[test]
    fn empty_epoch_has_no_hot_rows() {
        let mut t = tracker();
        assert!(t.end_epoch().is_empty());
    }

    #[test]
    fn top_sixteen_of_twenty() {
        let mut t = tracker();
        for v in 1..=20u16 {
            t.set_counter(v as usize * 3, v);
        }
        let hot: Vec<usize> = t.end_epoch().iter().copied().collect();
        let want: Vec<usize> = (5..=20).map(|v| v * 3).collect();
        assert_eq!(hot, want);
    }

    #[test]
    fn epoch_halves_counters() {
        let mut t = tracker();
        t.set_counter(0, 7);
        t.end_epoch();
        assert_eq!(t.counters()[0], 3);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let mut t = HotRowTracker::new(64, 8, 2);
        for i in [40, 9, 30] {
            t.set_counter(i, 4);
        }
        let hot: Vec<usize> = t.end_epoch().iter().copied().collect();
        assert_eq!(hot, [9, 30]);
    }

    #[test]
    fn eviction_is_argmin_with_low_slot_ties() {
        let mut c = VillaCache::new(3, 8);
        for (slot, src, hits) in [(0, 100, 5), (1, 101, 2), (2, 102, 9)] {
            c.install(src, slot).unwrap();
            for _ in 0..hits {
                c.touch(slot, false);
            }
        }
        assert_eq!(c.evict_victim().unwrap().0, 1);
        let mut c = VillaCache::new(3, 8);
        for s in 0..3 {
            c.install(10 + s, s).unwrap();
        }
        assert_eq!(c.evict_victim().unwrap().0, 0);
        assert!(matches!(c.evict_victim(), Err(VillaError::NotFull { free: 1 })));
    }

    #[test]
    fn benefit_saturates() {
        let mut c = VillaCache::new(1, 2);
        c.install(4, 0).unwrap();
        for _ in 0..10 {
            c.touch(0, false);
        }
        assert_eq!(c.slot(0).unwrap().benefit, 3);
    }

    fn small_bank() -> BankVilla {
        let g = Geometry {
            subarrays_per_bank: 4,
            rows_per_subarray: 2,
            ..Geometry::default()
        };
        let p = VillaParams {
            counters_per_bank: 8,
            hot_rows: 4,
            ..VillaParams::default()
        };
        BankVilla::new(&p, &g)
    }

    #[test]
    fn access_outcomes() {
        let mut v = small_bank();
        assert_eq!(v.on_access(3, false), AccessOutcome::Miss);
        v.end_epoch();
        assert!(v.tracker.is_hot(3));
        assert_eq!(v.on_access(3, false), AccessOutcome::FillScheduled);
        // A second access before the fill starts does not schedule twice.
        assert_eq!(v.on_access(3, false), AccessOutcome::Miss);
        let plan = v.start_fill(3).unwrap();
        assert_eq!(plan, FillPlan { slot: 0, victim: None });
        assert_eq!(v.slot_location(plan.slot), (0, 0));
        assert_eq!(v.on_access(3, true), AccessOutcome::Hit(0));
        assert_eq!(v.cache.slot(0).unwrap().benefit, 1);
        assert!(v.cache.slot(0).unwrap().dirty);
        assert_eq!(v.counts.hits, 1);
        assert_eq!(v.counts.misses, 3);
    }

    #[test]
    fn evicted_row_misses_again() {
        let mut v = small_bank();
        for r in [2, 4, 6] {
            v.on_access(r, false);
        }
        v.end_epoch();
        for r in [2, 4] {
            assert_eq!(v.on_access(r, false), AccessOutcome::FillScheduled);
            v.start_fill(r).unwrap();
        }
        v.on_access(4, false);
        assert_eq!(v.on_access(6, false), AccessOutcome::FillScheduled);
        let plan = v.start_fill(6).unwrap();
        assert_eq!(plan.victim.unwrap().source, 2);
        assert_eq!(v.counts.evictions, 1);
        assert!(!matches!(v.on_access(2, false), AccessOutcome::Hit(_)));
    }

    #[test]
    fn invalidation_reports_dirty_rows() {
        let mut v = small_bank();
        v.on_access(5, false);
        v.end_epoch();
        v.on_access(5, false);
        v.start_fill(5).unwrap();
        v.on_access(5, true);
        assert_eq!(v.invalidate(5), Some((0, true)));
        assert_eq!(v.invalidate(5), None);
        assert_eq!(v.counts.writebacks, 1);
    }

    proptest! {
        #[test]
        fn counters_stay_in_range(rows in proptest::collection::vec(0usize..4096, 0..3000), bits in 1u32..9) {
            let mut t = HotRowTracker::new(64, bits, 16);
            for (i, r) in rows.iter().enumerate() {
                t.record_access(*r);
                if i % 500 == 499 {
                    t.end_epoch();
                }
            }
            let max = (1u16 << bits) - 1;
            prop_assert!(t.counters().iter().all(|&c| c <= max));
            prop_assert!(t.hot_set().len() <= 16);
        }

        #[test]
        fn tags_stay_injective(ops in proptest::collection::vec((0usize..40, 0u8..4), 1..400)) {
            let mut v = small_bank();
            for (row, op) in ops {
                match op {
                    0 => { v.on_access(row, row % 3 == 0); }
                    1 => v.end_epoch(),
                    2 => { if v.fill_pending(row) { v.start_fill(row).unwrap(); } }
                    _ => { v.invalidate(row); }
                }
                let tags = v.cache.tags();
                let slots: BTreeSet<usize> = tags.values().copied().collect();
                prop_assert_eq!(slots.len(), tags.len());
                for (&src, &slot) in tags {
                    prop_assert_eq!(v.cache.slot(slot).map(|r| r.source), Some(src));
                }
                let occupied = (0..v.cache.capacity()).filter(|&s| v.cache.slot(s).is_some()).count();
                prop_assert_eq!(occupied, tags.len());
            }
        }
    }
}
