//! Weighted-speedup experiments over feature combinations.

use std::fmt::Write as _;

use thiserror::Error;

use crate::controller::Features;
use crate::cpu::{generate_copy_workload, GeneratorSpec, TraceEvent};
use crate::dram::DramConfig;
use crate::metrics::{weighted_speedup, MetricsError, RunStats};
use crate::sim::{simulate, SimError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("workload {workload}: {source}")]
    Sim { workload: String, source: SimError },
    #[error("workload {workload}: {source}")]
    Metrics { workload: String, source: MetricsError },
}

/// Four-core copy-heavy workload for `seed`.
pub fn copy_suite_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        seed,
        ..GeneratorSpec::default()
    }
}

/// Copy-free workload whose hot rows move every 200 events, so a row cache
/// keeps refilling.
pub fn shifting_hot_set_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        seed,
        copy_fraction: 0.0,
        hot_rows: 8,
        hot_fraction: 0.6,
        mean_bubbles: 20,
        hot_shift_period: 200,
        ..GeneratorSpec::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub name: String,
    pub traces: Vec<Vec<TraceEvent>>,
}

impl Workload {
    pub fn generate(name: impl Into<String>, spec: &GeneratorSpec, cfg: &DramConfig) -> Self {
        Workload {
            name: name.into(),
            traces: generate_copy_workload(spec, cfg),
        }
    }
}

/// IPC of each trace running alone.
pub fn alone_ipcs(cfg: &DramConfig, features: Features, traces: &[Vec<TraceEvent>]) -> Result<Vec<f64>, SimError> {
    traces
        .iter()
        .map(|t| simulate(cfg, features, vec![t.clone()]).map(|s| s.cores[0].ipc))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub workload: String,
    pub features: Features,
    pub ws: f64,
    /// WS over the WS of the first feature set in the sweep.
    pub ws_normalized: f64,
    pub stats: RunStats,
}

fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Runs every workload under every feature set. Alone IPCs always come
/// from baseline runs so that WS values are comparable across sets.
pub fn sweep(cfg: &DramConfig, workloads: &[Workload], feature_sets: &[Features]) -> Result<Vec<SweepRow>, ExperimentError> {
    let alone: Vec<Vec<f64>> = par_map(workloads, |w| {
        alone_ipcs(cfg, Features::BASELINE, &w.traces).map_err(|source| ExperimentError::Sim {
            workload: w.name.clone(),
            source,
        })
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, Features)> = (0..workloads.len())
        .flat_map(|w| feature_sets.iter().map(move |&f| (w, f)))
        .collect();
    let runs = par_map(&jobs, |&(w, f)| {
        let name = &workloads[w].name;
        let stats = simulate(cfg, f, workloads[w].traces.clone()).map_err(|source| ExperimentError::Sim {
            workload: name.clone(),
            source,
        })?;
        let ws = weighted_speedup(&stats.ipcs(), &alone[w]).map_err(|source| ExperimentError::Metrics {
            workload: name.clone(),
            source,
        })?;
        Ok::<_, ExperimentError>((stats, ws))
    });
    let mut rows = Vec::with_capacity(jobs.len());
    for (&(w, f), run) in jobs.iter().zip(runs) {
        let (stats, ws) = run?;
        rows.push(SweepRow {
            workload: workloads[w].name.clone(),
            features: f,
            ws,
            ws_normalized: 1.0,
            stats,
        });
    }
    for chunk in rows.chunks_mut(feature_sets.len().max(1)) {
        let base = chunk[0].ws;
        for r in chunk {
            r.ws_normalized = r.ws / base;
        }
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("workload,features,ws,ws_normalized,energy_uj,cycles\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.workload, r.features, r.ws, r.ws_normalized, r.stats.energy.total_uj, r.stats.cycles
        );
    }
    out
}
