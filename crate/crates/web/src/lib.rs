//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string; the page parses it with `JSON.parse`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use iovsim::baselines::{baseline_episode, BaselineConfig, Variant};
use iovsim::channel::{noise_lin, pathloss_db, ChannelConfig};
use iovsim::config::{RunConfig, SweepPoint};
use iovsim::phy::{rate_bps, POWER_DBM};
use iovsim::scenario::Role;
use iovsim::world::{SimConfig, World};

fn js(e: iovsim::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[derive(Serialize)]
struct Curve {
    distance_m: Vec<f64>,
    pathloss_db: Vec<f64>,
    /// One series per non-silent power level, Mb/s on one resource block
    /// without fading or interference.
    rate_mbps: Vec<(f64, Vec<f64>)>,
}

/// Pathloss and single-link rate from 1 m to `max_distance_m`.
#[wasm_bindgen]
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn link_budget(max_distance_m: f64, points: usize) -> Result<String, JsError> {
    if !(max_distance_m > 1.0) || !(2..=10_000).contains(&points) {
        return Err(JsError::new("need max distance > 1 m and 2..=10000 points"));
    }
    let cfg = ChannelConfig::default();
    let noise = noise_lin(&cfg);
    let gain_db = cfg.link_antenna_gain_db();
    let distance_m: Vec<f64> = (0..points)
        .map(|i| 1.0 + (max_distance_m - 1.0) * i as f64 / (points - 1) as f64)
        .collect();
    let pathloss: Vec<f64> = distance_m.iter().map(|&d| pathloss_db(d, &cfg)).collect();
    let rate_mbps = POWER_DBM[1..]
        .iter()
        .map(|&p| {
            let series = pathloss
                .iter()
                .map(|&pl| {
                    let rx_mw = 10f64.powf((p + gain_db - pl) / 10.0);
                    rate_bps(rx_mw / noise, cfg.rb_bandwidth_hz) / 1e6
                })
                .collect();
            (p, series)
        })
        .collect();
    Ok(to_json(&Curve {
        distance_m,
        pathloss_db: pathloss,
        rate_mbps,
    }))
}

#[derive(Serialize)]
struct Car {
    id: usize,
    source: bool,
    lane: usize,
    x_m: f64,
    y_m: f64,
    speed_kmh: f64,
}

#[derive(Serialize)]
struct Layout {
    length_m: f64,
    lanes: usize,
    lane_width_m: f64,
    vehicles: Vec<Car>,
}

/// Vehicle positions of episode `episode` for a given seed.
#[wasm_bindgen]
pub fn highway_layout(seed: u64, episode: usize) -> Result<String, JsError> {
    let world = World::new(SimConfig::default(), seed).map_err(js)?;
    let sc = world.scenario(episode).map_err(js)?;
    let road = sc.road;
    let vehicles = sc
        .sources
        .iter()
        .chain(&sc.destinations)
        .map(|v| Car {
            id: v.id,
            source: v.role == Role::Source,
            lane: v.lane,
            x_m: v.x_m,
            y_m: v.position(&road).1,
            speed_kmh: v.speed_mps * 3.6,
        })
        .collect();
    Ok(to_json(&Layout {
        length_m: road.length_m,
        lanes: road.total_lanes(),
        lane_width_m: road.lane_width_m,
        vehicles,
    }))
}

#[derive(Serialize)]
struct BaselineSummary {
    name: &'static str,
    slice1: usize,
    slice2: usize,
    prr: Option<f64>,
    accepted_moves: usize,
    objective: Vec<usize>,
}

/// Runs the three benchmark schedulers on one episode.
#[wasm_bindgen]
pub fn compare_baselines(seed: u64, episode: usize, size_x300b: u32, deadline_x5ms: u32) -> Result<String, JsError> {
    let cfg = RunConfig::default();
    let sim = cfg
        .at(SweepPoint {
            size_x300b,
            deadline_x5ms,
        })
        .map_err(js)?;
    let world = World::new(sim, seed).map_err(js)?;
    let out: Vec<BaselineSummary> = Variant::ALL
        .iter()
        .map(|&v| {
            baseline_episode(v, &world, episode, &BaselineConfig::default()).map(|r| BaselineSummary {
                name: v.name(),
                slice1: r.metrics.slice1_delivered,
                slice2: r.metrics.slice2_delivered,
                prr: r.metrics.prr,
                accepted_moves: r.search.accepted.len(),
                objective: r.search.history,
            })
        })
        .collect::<iovsim::Result<_>>()
        .map_err(js)?;
    Ok(to_json(&out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exports_produce_json() {
        let c: serde_json::Value = serde_json::from_str(&link_budget(1500.0, 50).unwrap()).unwrap();
        assert_eq!(c["distance_m"].as_array().unwrap().len(), 50);
        assert_eq!(c["rate_mbps"].as_array().unwrap().len(), 3);
        let l: serde_json::Value = serde_json::from_str(&highway_layout(3, 0).unwrap()).unwrap();
        assert_eq!(l["vehicles"].as_array().unwrap().len(), 7);
        let b: serde_json::Value = serde_json::from_str(&compare_baselines(3, 0, 2, 8).unwrap()).unwrap();
        assert_eq!(b.as_array().unwrap().len(), 3);
    }
}
