//! Browser bindings for the demo page in `www/`. Every function returns a
//! JSON string.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use lisa_sim::bank::{Command, DramChannel};
use lisa_sim::controller::Features;
use lisa_sim::copy::cost_table;
use lisa_sim::cpu::{generate_copy_workload, GeneratorSpec};
use lisa_sim::dram::{DramConfig, TimingModel};
use lisa_sim::experiment::{sweep, Workload};

fn error(msg: impl ToString) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

/// Cost of one row copy per mechanism with the given per-hop movement
/// latency.
#[wasm_bindgen]
pub fn copy_costs(t_rbm_ns: f64) -> String {
    let mut cfg = DramConfig::default();
    cfg.timing.t_rbm = t_rbm_ns;
    if let Err(e) = cfg.validate() {
        return error(e);
    }
    match cost_table(&cfg) {
        Ok(rows) => serde_json::to_string(&rows).unwrap_or_else(error),
        Err(e) => error(e),
    }
}

/// Precharge latency of an idle-neighbor subarray with and without a
/// linked neighbor, measured on the bank engine.
#[wasm_bindgen]
pub fn precharge_latency(t_rp_ns: f64) -> String {
    let mut cfg = DramConfig::default();
    cfg.timing.t_rp = t_rp_ns;
    if let Err(e) = cfg.validate() {
        return error(e);
    }
    let t = &cfg.timing;
    let measure = |lip: bool| -> Result<u64, String> {
        let model = TimingModel::uniform(t.clone(), cfg.geometry.subarrays_per_bank);
        let mut ch = DramChannel::new(&cfg.geometry, model);
        let act = Command::act(0, 4, 0);
        ch.issue(&act, 0).map_err(|e| e.to_string())?;
        let pre = Command::pre(0, 4);
        let at = ch.earliest(&pre, 0).map_err(|e| e.to_string())?;
        let done = ch.precharge(0, 4, at, lip).map_err(|e| e.to_string())?;
        Ok(done - at)
    };
    match (measure(false), measure(true)) {
        (Ok(plain), Ok(linked)) => json!({
            "t_ck_ns": t.t_ck,
            "plain_cycles": plain,
            "linked_cycles": linked,
            "plain_ns": plain as f64 * t.t_ck,
            "linked_ns": linked as f64 * t.t_ck,
            "speedup": plain as f64 / linked as f64,
        })
        .to_string(),
        (Err(e), _) | (_, Err(e)) => error(e),
    }
}

/// Weighted speedup and energy of a small synthetic workload under the
/// baseline and three feature combinations.
#[wasm_bindgen]
pub fn compare_features(seed: u64, copy_fraction: f64, length: usize) -> String {
    if !(0.0..=1.0).contains(&copy_fraction) {
        return error("copy fraction must lie in [0, 1]");
    }
    let cfg = DramConfig::default();
    let spec = GeneratorSpec {
        seed,
        copy_fraction,
        length: length.clamp(50, 4000),
        ..GeneratorSpec::default()
    };
    let workload = Workload {
        name: format!("seed{seed}"),
        traces: generate_copy_workload(&spec, &cfg),
    };
    let sets = [Features::BASELINE, Features::RISC, Features::RISC_VILLA, Features::ALL];
    match sweep(&cfg, &[workload], &sets) {
        Ok(rows) => Value::Array(
            rows.iter()
                .map(|r| {
                    json!({
                        "features": r.features.to_string(),
                        "ws": r.ws,
                        "ws_normalized": r.ws_normalized,
                        "energy_uj": r.stats.energy.total_uj,
                        "cycles": r.stats.cycles,
                        "villa_hit_rate": r.stats.villa.hit_rate,
                    })
                })
                .collect(),
        )
        .to_string(),
        Err(e) => error(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn costs_follow_the_hop_slope() {
        let rows = parse(&copy_costs(8.0));
        let lisa: Vec<f64> = rows
            .as_array()
            .unwrap()
            .iter()
            .filter(|r| r["mechanism"] == "LisaRisc")
            .map(|r| r["latency_ns"].as_f64().unwrap())
            .collect();
        assert_eq!(lisa.len(), 15);
        assert_eq!(lisa[0], 148.5);
        assert_eq!(lisa[14], 260.5);
        let slower = parse(&copy_costs(10.0));
        assert!(slower[18]["latency_ns"].as_f64().unwrap() > 260.5);
        assert!(parse(&copy_costs(-1.0))["error"].is_string());
    }

    #[test]
    fn linked_precharge_is_faster() {
        let v = parse(&precharge_latency(13.75));
        assert_eq!(v["plain_cycles"], 11);
        assert_eq!(v["linked_cycles"], 4);
    }

    #[test]
    fn feature_comparison_has_four_rows() {
        let v = parse(&compare_features(1, 0.1, 200));
        let rows = v.as_array().unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0]["ws_normalized"], 1.0);
        assert!(parse(&compare_features(1, 2.0, 200))["error"].is_string());
    }
}
