//! Exhaustive search over joint schedules of tiny instances.

use crate::env::{ActionSpace, EnvConfig};
use crate::error::{invalid, Error, Result};
use crate::phy::{apply_slot, DeliveryLedger, Medium, PacketChoice, TxDecision, COVERAGE_M, MAX_POWER_IDX};
use crate::scenario::{Packet, PacketConfig, Slice};
use crate::world::SimConfig;

/// Largest number of schedules the search accepts.
pub const SEARCH_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub optimum: usize,
    /// One optimal schedule, `[slot][source]`, as sent after masking.
    pub schedule: Vec<Vec<TxDecision>>,
    /// Complete schedules replayed.
    pub leaves: u64,
}

/// Decisions that put nothing on the air collapse to [`TxDecision::SILENT`].
pub fn canonical(d: TxDecision) -> TxDecision {
    if d.is_effective() {
        d
    } else {
        TxDecision::SILENT
    }
}

fn dedup(mut v: Vec<TxDecision>) -> Vec<TxDecision> {
    let mut out: Vec<TxDecision> = Vec::with_capacity(v.len());
    for d in v.drain(..).map(canonical) {
        if !out.contains(&d) {
            out.push(d);
        }
    }
    out
}

/// Every distinct decision of the environment's action space.
pub fn full_actions(freqs: usize) -> Vec<TxDecision> {
    let space = ActionSpace { freqs };
    dedup(
        (0..space.len())
            .map(|a| space.decode(a).expect("index in range"))
            .collect(),
    )
}

/// Silence plus, for each packet, frequency and listed power, the smallest
/// radius that reaches at least one destination.
///
/// No schedule loses packets by this restriction: shrinking a group can
/// only raise its minimum rate, a transmission to an empty group delivers
/// nothing, and dropping it removes interference for everyone else.
pub fn dominant_actions(medium: &Medium, source: usize, powers: &[usize]) -> Vec<TxDecision> {
    let mut out = vec![TxDecision::SILENT];
    let Some(coverage_idx) = (1..COVERAGE_M.len()).find(|&c| medium.group(source, COVERAGE_M[c]).next().is_some())
    else {
        return out;
    };
    for packet in [PacketChoice::Slice1, PacketChoice::Slice2] {
        for freq in 0..medium.channel.freqs {
            for &power_idx in powers {
                out.push(TxDecision {
                    coverage_idx,
                    packet,
                    freq,
                    power_idx,
                });
            }
        }
    }
    dedup(out)
}

pub fn dominant_action_sets(medium: &Medium) -> Vec<Vec<TxDecision>> {
    let powers: Vec<usize> = (1..=MAX_POWER_IDX).collect();
    (0..medium.num_sources)
        .map(|s| dominant_actions(medium, s, &powers))
        .collect()
}

/// Number of joint schedules over `slots` slots.
pub fn search_size(sets: &[Vec<TxDecision>], slots: usize) -> f64 {
    sets.iter().map(|s| s.len() as f64).product::<f64>().powi(slots as i32)
}

/// Replays a `[slot][source]` schedule, masking as the environment does.
pub fn replay(packets: &[[Packet; 2]], medium: &Medium, schedule: &[Vec<TxDecision>]) -> Result<DeliveryLedger> {
    let mut ledger = DeliveryLedger::new(packets, medium.num_destinations);
    for (t, row) in schedule.iter().enumerate() {
        let masked: Vec<TxDecision> = row.iter().enumerate().map(|(s, &d)| ledger.mask(s, d, t)).collect();
        apply_slot(&masked, medium, &mut ledger, t)?;
    }
    Ok(ledger)
}

fn delivered(l: &DeliveryLedger) -> usize {
    l.delivered_count(Slice::Throughput) + l.delivered_count(Slice::Safety)
}

struct Search<'a> {
    medium: &'a Medium,
    sets: &'a [Vec<TxDecision>],
    slots: usize,
    best: usize,
    best_schedule: Vec<Vec<TxDecision>>,
    path: Vec<Vec<TxDecision>>,
    leaves: u64,
}

impl Search<'_> {
    fn visit(&mut self, ledger: &DeliveryLedger, t: usize) -> Result<()> {
        if t == self.slots || ledger.all_delivered() {
            self.leaves += 1;
            let v = delivered(ledger);
            if v > self.best || self.best_schedule.is_empty() {
                self.best = v;
                self.best_schedule = self.path.clone();
                self.best_schedule
                    .resize(self.slots, vec![TxDecision::SILENT; self.sets.len()]);
            }
            return Ok(());
        }
        // masked choices that coincide are the same branch
        let options: Vec<Vec<TxDecision>> = self
            .sets
            .iter()
            .enumerate()
            .map(|(s, set)| dedup(set.iter().map(|&d| ledger.mask(s, d, t)).collect()))
            .collect();
        let mut pick = vec![0usize; options.len()];
        loop {
            let row: Vec<TxDecision> = pick.iter().zip(&options).map(|(&k, o)| o[k]).collect();
            let mut next = ledger.clone();
            apply_slot(&row, self.medium, &mut next, t)?;
            self.path.push(row);
            self.visit(&next, t + 1)?;
            self.path.pop();
            if self.best == 2 * self.sets.len() {
                return Ok(());
            }
            // odometer over the per-source options
            let mut i = 0;
            loop {
                if i == pick.len() {
                    return Ok(());
                }
                pick[i] += 1;
                if pick[i] < options[i].len() {
                    break;
                }
                pick[i] = 0;
                i += 1;
            }
        }
    }
}

/// Maximum number of delivered packets over all schedules drawn from
/// `sets[source]` in every slot, with one schedule achieving it.
pub fn brute_force_optimal(packets: &[[Packet; 2]], medium: &Medium, sets: &[Vec<TxDecision>]) -> Result<OracleResult> {
    let m = medium.num_sources;
    if sets.len() != m || packets.len() != m {
        return Err(Error::ShapeMismatch {
            expected: format!("{m} sources"),
            found: format!("{} action sets, {} packet rows", sets.len(), packets.len()),
        });
    }
    if sets.iter().any(|s| s.is_empty()) {
        return Err(invalid("every source needs at least one action"));
    }
    let slots = medium.channel.slots;
    let size = search_size(sets, slots);
    if size > SEARCH_LIMIT {
        return Err(Error::SearchTooLarge {
            size,
            limit: SEARCH_LIMIT,
        });
    }
    let mut search = Search {
        medium,
        sets,
        slots,
        best: 0,
        best_schedule: Vec::new(),
        path: Vec::with_capacity(slots),
        leaves: 0,
    };
    search.visit(&DeliveryLedger::new(packets, medium.num_destinations), 0)?;
    Ok(OracleResult {
        optimum: search.best,
        schedule: search.best_schedule,
        leaves: search.leaves,
    })
}

/// A small world: `m` sources, `n` destinations, one frequency, `slots`
/// slots and a safety window of `deadline` slots.
pub fn tiny_config(m: usize, n: usize, slots: usize, deadline: usize) -> SimConfig {
    SimConfig {
        packets: PacketConfig {
            deadline_len_slots: deadline,
            ..PacketConfig::default()
        },
        env: EnvConfig {
            sources: m,
            destinations: n,
            freqs: 1,
            slots,
            ..EnvConfig::default()
        },
        ..SimConfig::default()
    }
}
