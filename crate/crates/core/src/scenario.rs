//! Highway world: lanes, vehicle placement, mobility and per-episode packets.
//!
//! Lanes are numbered `1..=2L` where `L = lanes_per_direction`. Lanes `1..=L`
//! carry forward traffic (moving towards increasing `x`), lanes `L+1..=2L`
//! carry backward traffic. Lane centers sit at `y = (lane - 0.5) * lane_width`.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{invalid, Error, Result};

const KMH_TO_MPS: f64 = 1000.0 / 3600.0;

/// Mean headway between consecutive vehicles in a lane, in seconds.
pub const HEADWAY_S: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadConfig {
    pub length_m: f64,
    pub lane_width_m: f64,
    pub lanes_per_direction: usize,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            length_m: 2000.0,
            lane_width_m: 4.0,
            lanes_per_direction: 3,
        }
    }
}

impl RoadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0) {
            return Err(invalid("road length must be positive"));
        }
        if !(self.lane_width_m > 0.0) {
            return Err(invalid("lane width must be positive"));
        }
        if self.lanes_per_direction == 0 {
            return Err(invalid("at least one lane per direction is required"));
        }
        Ok(())
    }

    pub fn total_lanes(&self) -> usize {
        2 * self.lanes_per_direction
    }

    /// Direction and 1-based in-direction index of a global lane number.
    pub fn lane_group(&self, lane: usize) -> Result<(Direction, usize)> {
        let l = self.lanes_per_direction;
        match lane {
            x if x >= 1 && x <= l => Ok((Direction::Forward, x)),
            x if x > l && x <= 2 * l => Ok((Direction::Backward, x - l)),
            _ => Err(invalid(format!("lane {lane} outside 1..={}", 2 * l))),
        }
    }

    pub fn lane_center_y(&self, lane: usize) -> f64 {
        (lane as f64 - 0.5) * self.lane_width_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Source,
    Destination,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::Destination => "destination",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    /// Index within its role group.
    pub id: usize,
    pub role: Role,
    pub lane: usize,
    pub direction: Direction,
    pub x_m: f64,
    pub speed_mps: f64,
}

impl Vehicle {
    pub fn position(&self, road: &RoadConfig) -> (f64, f64) {
        (self.x_m, road.lane_center_y(self.lane))
    }

    pub fn distance_to(&self, other: &Vehicle, road: &RoadConfig) -> f64 {
        let (x0, y0) = self.position(road);
        let (x1, y1) = other.position(road);
        (x0 - x1).hypot(y0 - y1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slice {
    /// Throughput traffic; the whole horizon is usable.
    Throughput = 0,
    /// Safety traffic with an arrival slot and a deadline.
    Safety = 1,
}

impl Slice {
    pub const ALL: [Slice; 2] = [Slice::Throughput, Slice::Safety];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub owner: usize,
    pub slice: Slice,
    pub size_bits: f64,
    pub arrival_slot: usize,
    pub deadline_slot: usize,
    pub leftover_bits: f64,
}

impl Packet {
    pub fn in_window(&self, slot: usize) -> bool {
        slot >= self.arrival_slot && slot <= self.deadline_slot
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacketConfig {
    pub slice1_min_bits: f64,
    pub slice1_max_bits: f64,
    pub slice2_bits: f64,
    pub deadline_len_slots: usize,
}

impl Default for PacketConfig {
    fn default() -> Self {
        Self {
            slice1_min_bits: 1e5,
            slice1_max_bits: 1e6,
            slice2_bits: 4800.0,
            deadline_len_slots: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub road: RoadConfig,
    pub sources: Vec<Vehicle>,
    pub destinations: Vec<Vehicle>,
    /// `packets[i][slice.index()]` belongs to source `i`.
    pub packets: Vec<[Packet; 2]>,
    pub episode_index: usize,
}

impl Scenario {
    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn num_destinations(&self) -> usize {
        self.destinations.len()
    }

    pub fn packet(&self, source: usize, slice: Slice) -> &Packet {
        &self.packets[source][slice.index()]
    }

    /// Row-major `m x n` source-to-destination distances.
    pub fn distances(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.sources.len() * self.destinations.len());
        for s in &self.sources {
            for d in &self.destinations {
                out.push(s.distance_to(d, &self.road));
            }
        }
        out
    }
}

/// Speed of the `lane`-th lane (1-based within its direction).
pub fn lane_speed(lane: usize, direction: Direction, lanes_per_direction: usize) -> Result<f64> {
    if lane < 1 || lane > lanes_per_direction {
        return Err(invalid(format!("lane {lane} outside 1..={lanes_per_direction}")));
    }
    let step = 2.0 * (lane as f64 - 1.0) * 10.0;
    let kmh = match direction {
        Direction::Forward => 60.0 + step,
        Direction::Backward => 100.0 - step,
    };
    Ok(kmh * KMH_TO_MPS)
}

/// Points of a homogeneous Poisson process on `[0, length)` with the given
/// mean spacing.
pub fn poisson_lane_positions<R: Rng + ?Sized>(length_m: f64, mean_spacing_m: f64, rng: &mut R) -> Vec<f64> {
    let gap = Exp::new(1.0 / mean_spacing_m).expect("positive spacing");
    let mut out = Vec::new();
    let mut x = gap.sample(rng);
    while x < length_m {
        out.push(x);
        x += gap.sample(rng);
    }
    out
}

/// Places vehicles by a per-lane Poisson process and labels a uniform random
/// subset of them as `m` sources and `n` destinations.
///
/// Packets are left empty; see [`generate_packets`].
pub fn generate_vehicles<R: Rng + ?Sized>(road: &RoadConfig, m: usize, n: usize, rng: &mut R) -> Result<Scenario> {
    road.validate()?;
    if m == 0 || n == 0 {
        return Err(invalid("need at least one source and one destination"));
    }
    loop {
        let mut pool: Vec<(usize, Direction, f64, f64)> = Vec::new();
        for lane in 1..=road.total_lanes() {
            let (dir, idx) = road.lane_group(lane)?;
            let v = lane_speed(idx, dir, road.lanes_per_direction)?;
            if v <= 0.0 {
                continue;
            }
            for x in poisson_lane_positions(road.length_m, HEADWAY_S * v, rng) {
                pool.push((lane, dir, x, v));
            }
        }
        if pool.len() < m + n {
            continue;
        }
        let picked = sample(rng, pool.len(), m + n).into_vec();
        let make = |k: usize, id: usize, role: Role| {
            let (lane, direction, x_m, speed_mps) = pool[picked[k]];
            Vehicle {
                id,
                role,
                lane,
                direction,
                x_m,
                speed_mps,
            }
        };
        let sources = (0..m).map(|i| make(i, i, Role::Source)).collect();
        let destinations = (0..n).map(|j| make(m + j, j, Role::Destination)).collect();
        return Ok(Scenario {
            road: *road,
            sources,
            destinations,
            packets: Vec::new(),
            episode_index: 0,
        });
    }
}

/// Moves every vehicle along its lane, wrapping at the road ends.
pub fn advance_mobility(scenario: &Scenario, elapsed_s: f64) -> Result<Scenario> {
    if !(elapsed_s >= 0.0) {
        return Err(invalid("elapsed time must be non-negative"));
    }
    let len = scenario.road.length_m;
    let shift = |v: &Vehicle| {
        let mut v = v.clone();
        let x = (v.x_m + v.direction.sign() * v.speed_mps * elapsed_s).rem_euclid(len);
        // rem_euclid can round up to exactly `len` for tiny negative inputs
        v.x_m = if x >= len { 0.0 } else { x };
        v
    };
    Ok(Scenario {
        road: scenario.road,
        sources: scenario.sources.iter().map(shift).collect(),
        destinations: scenario.destinations.iter().map(shift).collect(),
        packets: scenario.packets.clone(),
        episode_index: scenario.episode_index,
    })
}

/// Draws one throughput and one safety packet per source for a horizon of
/// `slots` slots.
pub fn generate_packets<R: Rng + ?Sized>(
    scenario: &Scenario,
    cfg: &PacketConfig,
    slots: usize,
    rng: &mut R,
) -> Result<Vec<[Packet; 2]>> {
    if slots == 0 {
        return Err(invalid("horizon must contain at least one slot"));
    }
    if cfg.deadline_len_slots == 0 || cfg.deadline_len_slots > slots {
        return Err(invalid(format!(
            "deadline of {} slots does not fit a horizon of {slots}",
            cfg.deadline_len_slots
        )));
    }
    if !(cfg.slice1_min_bits > 0.0 && cfg.slice1_max_bits >= cfg.slice1_min_bits) {
        return Err(invalid("slice-1 size range must be positive and ordered"));
    }
    if !(cfg.slice2_bits > 0.0) {
        return Err(invalid("slice-2 size must be positive"));
    }
    let out = (0..scenario.num_sources())
        .map(|owner| {
            let s1 = if cfg.slice1_max_bits > cfg.slice1_min_bits {
                rng.random_range(cfg.slice1_min_bits..=cfg.slice1_max_bits)
            } else {
                cfg.slice1_min_bits
            };
            let arrival = rng.random_range(0..=slots - cfg.deadline_len_slots);
            [
                Packet {
                    owner,
                    slice: Slice::Throughput,
                    size_bits: s1,
                    arrival_slot: 0,
                    deadline_slot: slots - 1,
                    leftover_bits: s1,
                },
                Packet {
                    owner,
                    slice: Slice::Safety,
                    size_bits: cfg.slice2_bits,
                    arrival_slot: arrival,
                    deadline_slot: arrival + cfg.deadline_len_slots - 1,
                    leftover_bits: cfg.slice2_bits,
                },
            ]
        })
        .collect();
    Ok(out)
}

const DUMP_HEADER: &str = "# iovsim-vehicles v1";
const DUMP_COLUMNS: &str = "id,role,lane,direction,x_m,speed_mps";

/// Writes the vehicles of a scenario as a small CSV table.
///
/// Floats are written with `{:?}` so that a reload is bit-exact.
pub fn dump_vehicles<W: Write>(scenario: &Scenario, mut out: W) -> Result<()> {
    let r = &scenario.road;
    let mut s = String::new();
    writeln!(s, "{DUMP_HEADER}").unwrap();
    writeln!(
        s,
        "# road length_m={:?} lane_width_m={:?} lanes_per_direction={}",
        r.length_m, r.lane_width_m, r.lanes_per_direction
    )
    .unwrap();
    writeln!(s, "{DUMP_COLUMNS}").unwrap();
    for v in scenario.sources.iter().chain(&scenario.destinations) {
        writeln!(
            s,
            "{},{},{},{},{:?},{:?}",
            v.id,
            v.role.as_str(),
            v.lane,
            v.direction.as_str(),
            v.x_m,
            v.speed_mps
        )
        .unwrap();
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

/// Inverse of [`dump_vehicles`]. The returned scenario carries no packets.
pub fn load_vehicles<R: BufRead>(input: R) -> Result<Scenario> {
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Format("unexpected end of vehicle table".into()))?
            .map_err(Error::from)
    };
    let header = next()?;
    if header.trim() != DUMP_HEADER {
        return Err(Error::Format(format!("bad header line {header:?}")));
    }
    let road_line = next()?;
    let mut road = RoadConfig::default();
    for kv in road_line.trim_start_matches("# road").split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad road field {kv:?}")))?;
        let bad = |_| Error::Format(format!("bad value in {kv:?}"));
        match k {
            "length_m" => road.length_m = v.parse().map_err(bad)?,
            "lane_width_m" => road.lane_width_m = v.parse().map_err(bad)?,
            "lanes_per_direction" => road.lanes_per_direction = v.parse().map_err(|_| Error::Format(kv.into()))?,
            _ => return Err(Error::Format(format!("unknown road field {k:?}"))),
        }
    }
    road.validate()?;
    if next()?.trim() != DUMP_COLUMNS {
        return Err(Error::Format("unexpected column header".into()));
    }
    let mut sources = Vec::new();
    let mut destinations = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Format(format!("expected 6 fields in {line:?}")));
        }
        let bad = || Error::Format(format!("unparsable row {line:?}"));
        let role = match f[1] {
            "source" => Role::Source,
            "destination" => Role::Destination,
            _ => return Err(bad()),
        };
        let direction = match f[3] {
            "forward" => Direction::Forward,
            "backward" => Direction::Backward,
            _ => return Err(bad()),
        };
        let v = Vehicle {
            id: f[0].parse().map_err(|_| bad())?,
            role,
            lane: f[2].parse().map_err(|_| bad())?,
            direction,
            x_m: f[4].parse().map_err(|_| bad())?,
            speed_mps: f[5].parse().map_err(|_| bad())?,
        };
        if road.lane_group(v.lane)?.0 != v.direction {
            return Err(Error::Format(format!("lane/direction mismatch in {line:?}")));
        }
        match role {
            Role::Source => sources.push(v),
            Role::Destination => destinations.push(v),
        }
    }
    Ok(Scenario {
        road,
        sources,
        destinations,
        packets: Vec::new(),
        episode_index: 0,
    })
}
