mod common;

use common::Checker;
use lisa_sim::bank::DramChannel;
use lisa_sim::copy::{copy_latency_ns, emit_macro, execute, measure, reference_job, CopyJob, CopyMechanism};
use lisa_sim::dram::{DramConfig, TimingModel, TimingParams};
use proptest::prelude::*;

#[test]
fn random_copies_move_exactly_one_row() {
    let seen = common::copies::run_random_copies(10_000, 42).unwrap();
    assert!(seen.iter().all(|&k| k > 1500), "{seen:?}");
}

#[test]
fn chained_movement_reaches_every_subarray() {
    let cfg = DramConfig::default();
    let g = &cfg.geometry;
    let model = TimingModel::uniform(cfg.timing.clone(), g.subarrays_per_bank);
    for hops in 1..g.subarrays_per_bank {
        for down in [false, true] {
            let mut job = reference_job(CopyMechanism::LisaRisc, hops, g);
            if down {
                std::mem::swap(&mut job.src, &mut job.dst);
            }
            let mut ch = DramChannel::new(g, model.clone());
            ch.enable_log();
            let src = ch.bank(0).row_token(job.src.subarray, job.src.row);
            execute(&mut ch, &emit_macro(&job, g).unwrap(), 0).unwrap();
            assert_eq!(ch.bank(0).row_token(job.dst.subarray, job.dst.row), src);
            let rbms = ch.log().iter().filter(|r| r.kind == lisa_sim::bank::CommandKind::Rbm).count();
            assert_eq!(rbms, hops);
            assert!(Checker::new(&cfg, false).check(ch.log()).is_empty());
            assert!(ch.bank(0).is_precharged());
        }
    }
}

/// Timings on the clock grid, so the macro's per-command rounding cannot
/// accumulate.
fn timing_strategy() -> impl Strategy<Value = TimingParams> {
    (
        prop::sample::select(vec![1.0f64, 1.25, 1.5, 1.875]),
        (6u32..16, 20u32..36, 6u32..16, 3u32..10, 20u32..60),
        (3u32..8, 4u32..12, 4u32..8, 8u32..16),
    )
        .prop_map(|(t_ck, (rcd, ras, rp, rbm, commit), (rrd, rtp, ccd, wr))| {
            let ns = |k: u32| k as f64 * t_ck;
            TimingParams {
                t_ck,
                t_rcd: ns(rcd),
                t_ras: ns(ras),
                t_rp: ns(rp),
                t_cl: ns(rcd),
                t_rbm: ns(rbm),
                t_commit: ns(commit),
                t_rrd: ns(rrd),
                t_rtp: ns(rtp),
                t_ccd: ns(ccd),
                t_bl: ns(ccd),
                t_wr: ns(wr),
                t_faw: ns(4 * rrd + 2),
                ..TimingParams::default()
            }
        })
}

#[test]
fn formula_matches_macro_at_defaults() {
    check_formula(&DramConfig::default()).unwrap();
}

fn check_formula(cfg: &DramConfig) -> Result<(), TestCaseError> {
    let g = &cfg.geometry;
    let model = TimingModel::uniform(cfg.timing.clone(), g.subarrays_per_bank);
    let mut jobs: Vec<CopyJob> = (0..g.subarrays_per_bank)
        .map(|h| reference_job(CopyMechanism::LisaRisc, h, g))
        .collect();
    for m in [
        CopyMechanism::MemcpyChannel,
        CopyMechanism::RowCloneIntraSA,
        CopyMechanism::RowClonePSMBank,
        CopyMechanism::RowCloneInterSA,
    ] {
        jobs.push(reference_job(m, 0, g));
    }
    for job in jobs {
        if job.validate(g).is_err() {
            continue;
        }
        let formula = copy_latency_ns(&job, &model, g).unwrap();
        let run = measure(&job, cfg, &model).unwrap();
        let measured = run.cycles() as f64 * cfg.timing.t_ck;
        prop_assert!(
            (measured - formula).abs() <= cfg.timing.t_ck + 1e-9,
            "{:?} hops {}: macro {} ns vs formula {} ns",
            job.mechanism,
            job.hops(),
            measured,
            formula
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The closed form and the executed macro agree within one clock.
    #[test]
    fn formula_matches_macro(timing in timing_strategy()) {
        let cfg = DramConfig { timing, ..DramConfig::default() };
        check_formula(&cfg)?;
    }
}

#[test]
fn checker_flags_known_violations() {
    use lisa_sim::bank::{CommandKind::*, CommandRecord, DataPath, Direction};
    let cfg = DramConfig::default();
    let rec = |cycle, kind, subarray, row| CommandRecord {
        cycle,
        bank: 0,
        kind,
        subarray,
        row,
        direction: Direction::Up,
        path: DataPath::Channel,
    };
    let c = Checker::new(&cfg, false);
    assert!(c.check(&[rec(0, Act, 1, 5), rec(11, Rd, 1, 5), rec(28, Pre, 1, 0), rec(39, Act, 1, 6)]).is_empty());
    for bad in [
        vec![rec(0, Act, 1, 5), rec(27, Pre, 1, 0)],
        vec![rec(0, Act, 1, 5), rec(10, Rd, 1, 5)],
        vec![rec(0, Act, 1, 5), rec(11, Rd, 1, 6)],
        vec![rec(0, Act, 1, 5), rec(28, Pre, 1, 0), rec(38, Act, 1, 5)],
        vec![rec(0, Rbm, 1, 0)],
        vec![rec(0, Act, 1, 5), rec(27, Rbm, 1, 0)],
        vec![rec(0, Act, 1, 5), rec(11, Rd, 1, 5), rec(14, Rd, 1, 5)],
    ] {
        assert_eq!(c.check(&bad).len(), 1, "{bad:?}");
    }
    let other_bank = CommandRecord { bank: 1, ..rec(4, Act, 0, 0) };
    assert_eq!(c.check(&[rec(0, Act, 1, 5), other_bank]).len(), 1);
}
