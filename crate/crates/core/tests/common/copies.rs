//! Randomized copy jobs on a small geometry.

use lisa_sim::bank::{DramChannel, Token};
use lisa_sim::copy::{emit_macro, execute, scratch_row, CopyJob, CopyMechanism};
use lisa_sim::dram::{Coordinates, DramConfig, Geometry, TimingModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Checker;

pub fn small_config() -> DramConfig {
    DramConfig {
        geometry: Geometry {
            channels: 1,
            ranks_per_channel: 2,
            banks_per_rank: 4,
            subarrays_per_bank: 8,
            rows_per_subarray: 16,
            columns_per_row: 8,
            cacheline_bytes: 64,
            row_bytes: 512,
        },
        ..DramConfig::default()
    }
}

fn random_row(rng: &mut ChaCha8Rng, g: &Geometry) -> Coordinates {
    loop {
        let c = Coordinates {
            rank: rng.gen_range(0..g.ranks_per_channel),
            bank: rng.gen_range(0..g.banks_per_rank),
            subarray: rng.gen_range(0..g.subarrays_per_bank),
            row: rng.gen_range(0..g.rows_per_subarray),
            ..Coordinates::default()
        };
        if (c.subarray, c.row) != scratch_row(g) {
            return c;
        }
    }
}

fn random_job(rng: &mut ChaCha8Rng, g: &Geometry) -> CopyJob {
    let mechanism = CopyMechanism::ALL[rng.gen_range(0..CopyMechanism::ALL.len())];
    let src = random_row(rng, g);
    loop {
        let mut dst = random_row(rng, g);
        match mechanism {
            CopyMechanism::MemcpyChannel => {}
            CopyMechanism::RowCloneIntraSA => {
                dst = Coordinates {
                    row: dst.row,
                    ..src
                }
            }
            CopyMechanism::LisaRisc | CopyMechanism::RowCloneInterSA => {
                dst = Coordinates {
                    subarray: dst.subarray,
                    row: dst.row,
                    ..src
                }
            }
            CopyMechanism::RowClonePSMBank => dst.rank = src.rank,
        }
        let ok = match mechanism {
            CopyMechanism::RowCloneIntraSA => dst.row != src.row,
            CopyMechanism::LisaRisc => dst.subarray != src.subarray,
            CopyMechanism::RowClonePSMBank => dst.bank != src.bank,
            _ => !dst.same_row(&src),
        };
        if ok && (dst.subarray, dst.row) != scratch_row(g) {
            return CopyJob::row(mechanism, src, dst, g);
        }
    }
}

fn snapshot(ch: &DramChannel, g: &Geometry) -> Vec<Token> {
    let mut out = Vec::new();
    for b in 0..g.banks_per_channel() {
        for s in 0..g.subarrays_per_bank {
            for r in 0..g.rows_per_subarray {
                out.push(ch.bank(b).row_token(s, r));
            }
        }
    }
    out
}

/// Runs `jobs` random whole-row copies on the small geometry, checking
/// after each that the destination holds the source data and nothing else
/// changed, then checks the whole command log. Returns jobs per mechanism.
pub fn run_random_copies(jobs: usize, seed: u64) -> Result<[usize; 5], String> {
    let cfg = small_config();
    let g = &cfg.geometry;
    let model = TimingModel::uniform(cfg.timing.clone(), g.subarrays_per_bank);
    let mut ch = DramChannel::new(g, model);
    ch.enable_log();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index = |c: &Coordinates| (c.bank_index(g) * g.subarrays_per_bank + c.subarray) * g.rows_per_subarray + c.row;
    let scratch = scratch_row(g);
    let mut now = 0;
    let mut seen = [0usize; 5];
    for n in 0..jobs {
        let job = random_job(&mut rng, g);
        seen[CopyMechanism::ALL.iter().position(|&m| m == job.mechanism).unwrap()] += 1;
        let before = snapshot(&ch, g);
        let mac = emit_macro(&job, g).unwrap();
        let run = execute(&mut ch, &mac, now).map_err(|e| format!("job {n} {job:?}: {e}"))?;
        let after = snapshot(&ch, g);
        let (s, d) = (index(&job.src), index(&job.dst));
        if after[d] != before[s] {
            return Err(format!("job {n}: destination does not hold the source: {job:?}"));
        }
        for i in 0..after.len() {
            let row = i % g.rows_per_subarray;
            let sub = i / g.rows_per_subarray % g.subarrays_per_bank;
            if i != d && (sub, row) != scratch && after[i] != before[i] {
                return Err(format!("job {n} changed row {i}: {job:?}"));
            }
        }
        now = run.end + 1;
        if n % 1000 == 999 {
            ch.retire_history(now);
        }
    }
    let violations = Checker::new(&cfg, false).check(ch.log());
    if !violations.is_empty() {
        return Err(format!("{} timing violations, first: {}", violations.len(), violations[0]));
    }
    Ok(seen)
}

