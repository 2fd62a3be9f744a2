//! Browser bindings for the demo page in `www/`. Every entry point takes
//! plain numbers and returns a JSON string for the page script to draw.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use mec_offload::capacity::{generate_trace, SegmentModel, WorkAmount};
use mec_offload::policy::{LocalOnly, MecOnly, Oracle, Probabilistic};
use mec_offload::radio::{
    achievable_rate, channel_coefficient, draw_fading, Position, RadioParams,
};
use mec_offload::sim::{run, run_oracle, stream_rng, SimConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn json(v: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(to_js)
}

#[derive(Serialize)]
struct TraceView {
    /// `(start time, capacity)` pairs up to the horizon.
    segments: Vec<(f64, f64)>,
    horizon: f64,
    start: f64,
    finish: f64,
    energy: f64,
}

/// Draws a random capacity trace and serves `work_cycles` on it from `start`.
#[wasm_bindgen]
pub fn serve_on_trace(
    seed: u64,
    f_min: f64,
    f_max: f64,
    mean_segment_s: f64,
    start: f64,
    work_cycles: f64,
) -> Result<String, JsError> {
    let model = SegmentModel::Exponential {
        mean_s: mean_segment_s,
    };
    let mut trace = generate_trace(f_min, f_max, model, stream_rng(seed, 1)).map_err(to_js)?;
    let work = WorkAmount::new(work_cycles).map_err(to_js)?;
    if !(start >= 0.0) {
        return Err(JsError::new("start must be >= 0"));
    }
    let duration = trace.time_to_complete(start, work);
    let energy = trace
        .computation_energy(start, work, 1e-27)
        .map_err(to_js)?;
    let horizon = (start + duration) * 1.25 + 0.5;
    trace.ensure_until(horizon);
    let segments = trace
        .trace()
        .breakpoints()
        .take_while(|&(t, _)| t <= horizon)
        .collect();
    json(&TraceView {
        segments,
        horizon,
        start,
        finish: start + duration,
        energy,
    })
}

#[derive(Serialize)]
struct RatePoint {
    distance_km: f64,
    mean_rate: f64,
    low: f64,
    high: f64,
}

/// Mean uplink rate and its 10 to 90 percent band against distance, over
/// `draws` fading realisations per point.
#[wasm_bindgen]
pub fn rate_profile(
    path_loss_exponent: f64,
    tx_power_dbm: f64,
    max_km: f64,
    draws: usize,
) -> Result<String, JsError> {
    let params = RadioParams {
        path_loss_exponent,
        tx_power_w: mec_offload::radio::dbm_to_watts(tx_power_dbm),
        ..RadioParams::default()
    };
    params.validate().map_err(to_js)?;
    if !(max_km > params.min_distance_km) || draws == 0 {
        return Err(JsError::new(
            "need max_km above the minimum distance and at least one draw",
        ));
    }
    let mut rng = stream_rng(7, 0);
    let user = Position::new(0.0, 0.0);
    let points: Vec<RatePoint> = (1..=60)
        .map(|i| {
            let d = max_km * i as f64 / 60.0;
            let mut rates: Vec<f64> = (0..draws)
                .map(|_| {
                    let h = channel_coefficient(
                        Position::new(d, 0.0),
                        user,
                        params.path_loss_exponent,
                        draw_fading(&mut rng),
                        params.min_distance_km,
                    );
                    achievable_rate(
                        h,
                        params.tx_power_w,
                        params.bandwidth_hz,
                        params.channels,
                        params.noise_density,
                    )
                })
                .collect();
            rates.sort_by(f64::total_cmp);
            RatePoint {
                distance_km: d,
                mean_rate: rates.iter().sum::<f64>() / draws as f64,
                low: rates[draws / 10],
                high: rates[(draws * 9) / 10],
            }
        })
        .collect();
    json(&points)
}

#[derive(Serialize)]
struct PolicyRow {
    policy: &'static str,
    avg_delay: f64,
    avg_energy: f64,
    mec_fraction: f64,
}

/// Runs the non-learning policies on one small scenario.
#[wasm_bindgen]
pub fn compare_policies(
    seed: u64,
    arrival_rate: f64,
    tasks: usize,
    candidates: usize,
) -> Result<String, JsError> {
    if tasks > 5000 {
        return Err(JsError::new("at most 5000 tasks in the browser"));
    }
    let cfg = SimConfig {
        seed,
        arrival_rate,
        tasks,
        candidates,
        ..SimConfig::default()
    };
    cfg.validate().map_err(to_js)?;
    let row = |policy, r: mec_offload::sim::RunResult| PolicyRow {
        policy,
        avg_delay: r.metrics.avg_delay,
        avg_energy: r.metrics.avg_energy,
        mec_fraction: r.metrics.mec_fraction,
    };
    let rows = vec![
        row("local-only", run(&cfg, &mut LocalOnly).map_err(to_js)?),
        row("mec-only", run(&cfg, &mut MecOnly).map_err(to_js)?),
        row(
            "probabilistic p=0.5",
            run(&cfg, &mut Probabilistic::new(0.5, seed).map_err(to_js)?).map_err(to_js)?,
        ),
        row(
            "oracle",
            run_oracle(&cfg, &mut Oracle::new(cfg.cost, cfg.kappa, None)).map_err(to_js)?,
        ),
    ];
    json(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_view_brackets_the_service_window() {
        let text = serve_on_trace(3, 5e9, 12e9, 1.0, 0.5, 7.5e9).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let finish = v["finish"].as_f64().unwrap();
        // between the fastest and slowest possible service
        assert!((0.5 + 7.5e9 / 12e9..=0.5 + 7.5e9 / 5e9).contains(&finish));
        assert!(v["horizon"].as_f64().unwrap() > finish);
    }

    #[test]
    fn rate_falls_with_distance() {
        let v: serde_json::Value =
            serde_json::from_str(&rate_profile(3.8, 23.0, 5.0, 200).unwrap()).unwrap();
        let pts = v.as_array().unwrap();
        assert_eq!(pts.len(), 60);
        assert!(pts[0]["mean_rate"].as_f64().unwrap() > pts[59]["mean_rate"].as_f64().unwrap());
    }

    #[test]
    fn policies_are_compared() {
        let v: serde_json::Value =
            serde_json::from_str(&compare_policies(1, 10.0, 300, 3).unwrap()).unwrap();
        let rows = v.as_array().unwrap();
        assert_eq!(rows.len(), 4);
        assert!((rows[0]["avg_delay"].as_f64().unwrap() - 7.5).abs() < 0.1);
    }
}
