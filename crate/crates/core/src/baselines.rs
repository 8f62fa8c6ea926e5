//! Offline benchmark schedulers: random coverage and slice, gain-greedy
//! resource-block allocation, then swap-matching local search.
//!
//! Every variant plans the whole episode with full channel knowledge and is
//! scored by replaying the plan through [`crate::phy`], the same code path
//! the learned policy goes through.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::phy::{
    apply_slot, DeliveryLedger, EpisodeMetrics, Medium, PacketChoice, TxDecision, COVERAGE_M, MAX_POWER_IDX,
};
use crate::rng::{stream, Stream};
use crate::scenario::{Packet, Scenario, Slice};
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    OmaMp,
    NomaMp,
    NomaRp,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::OmaMp, Variant::NomaMp, Variant::NomaRp];

    pub fn name(self) -> &'static str {
        match self {
            Variant::OmaMp => "OMA-MP",
            Variant::NomaMp => "NOMA-MP",
            Variant::NomaRp => "NOMA-RP",
        }
    }

    pub fn is_oma(self) -> bool {
        self == Variant::OmaMp
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                invalid(format!("unknown baseline {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Order in which sources pick frequencies during the initial allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceOrder {
    /// Strongest best-frequency group gain first, ties by lower id.
    #[default]
    BestGain,
    Index,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub max_iters: usize,
    pub order: SourceOrder,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            max_iters: 1000,
            order: SourceOrder::BestGain,
        }
    }
}

/// A full-episode schedule. Entry `slot * sources + source`.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflinePlan {
    pub sources: usize,
    pub slots: usize,
    pub freqs: usize,
    pub decisions: Vec<TxDecision>,
    /// Sources left without a resource block (OMA) stay silent.
    pub active: Vec<bool>,
}

impl OfflinePlan {
    pub fn new(sources: usize, slots: usize, freqs: usize) -> Self {
        OfflinePlan {
            sources,
            slots,
            freqs,
            decisions: vec![TxDecision::SILENT; sources * slots],
            active: vec![true; sources * slots],
        }
    }

    fn at(&self, slot: usize, source: usize) -> usize {
        slot * self.sources + source
    }

    pub fn decision(&self, slot: usize, source: usize) -> TxDecision {
        self.decisions[self.at(slot, source)]
    }

    pub fn decision_mut(&mut self, slot: usize, source: usize) -> &mut TxDecision {
        let k = self.at(slot, source);
        &mut self.decisions[k]
    }

    pub fn is_active(&self, slot: usize, source: usize) -> bool {
        self.active[self.at(slot, source)]
    }

    pub fn set_active(&mut self, slot: usize, source: usize, on: bool) {
        let k = self.at(slot, source);
        self.active[k] = on;
    }

    /// Decisions of one slot as sent, inactive sources silenced.
    pub fn slot_decisions(&self, slot: usize) -> Vec<TxDecision> {
        (0..self.sources)
            .map(|s| {
                if self.is_active(slot, s) {
                    self.decision(slot, s)
                } else {
                    TxDecision::SILENT
                }
            })
            .collect()
    }

    /// Active source holding `freq` in `slot`, if any (first by id).
    pub fn holder(&self, slot: usize, freq: usize) -> Option<usize> {
        (0..self.sources).find(|&s| self.is_active(slot, s) && self.decision(slot, s).freq == freq)
    }

    /// At most one active source per resource block.
    pub fn is_oma_exclusive(&self) -> bool {
        (0..self.slots).all(|t| {
            (0..self.freqs).all(|f| {
                (0..self.sources)
                    .filter(|&s| self.is_active(t, s) && self.decision(t, s).freq == f)
                    .count()
                    <= 1
            })
        })
    }
}

/// Draws coverage and packet choice for every (source, slot).
///
/// Coverage is uniform over all radii and the packet uniform over
/// {none, slice 1, slice 2}; a safety packet drawn outside its window is
/// replaced by none. Already-delivered packets are masked later, while the
/// plan is replayed.
pub fn random_coverage_slice<R: Rng + ?Sized>(packets: &[[Packet; 2]], plan: &mut OfflinePlan, rng: &mut R) {
    for t in 0..plan.slots {
        for s in 0..plan.sources {
            let coverage_idx = rng.random_range(0..COVERAGE_M.len());
            let mut packet = PacketChoice::ALL[rng.random_range(0..3)];
            if packet == PacketChoice::Slice2 && !packets[s][Slice::Safety.index()].in_window(t) {
                packet = PacketChoice::None;
            }
            let d = plan.decision_mut(t, s);
            d.coverage_idx = coverage_idx;
            d.packet = packet;
        }
    }
}

/// Maximum power for MP variants, uniform over the non-silent levels for RP.
pub fn assign_powers<R: Rng + ?Sized>(variant: Variant, plan: &mut OfflinePlan, rng: &mut R) {
    for d in plan.decisions.iter_mut() {
        d.power_idx = match variant {
            Variant::NomaRp => rng.random_range(1..=MAX_POWER_IDX),
            _ => MAX_POWER_IDX,
        };
    }
}

/// Sum of linear gains from `source` to its current group on `freq`.
pub fn group_gain(medium: &Medium, plan: &OfflinePlan, slot: usize, source: usize, freq: usize) -> f64 {
    let cov = plan.decision(slot, source).coverage_m();
    medium
        .group(source, cov)
        .map(|d| medium.channel.gain(source, d, freq, slot))
        .sum()
}

fn best_freq(gains: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    gains.fold(None, |best, (f, g)| match best {
        Some((_, bg)) if bg >= g => best,
        _ => Some((f, g)),
    })
}

/// Gain-greedy frequency assignment, slot by slot.
///
/// Each source takes the frequency with the largest summed gain to its
/// group; under OMA frequencies already taken in the slot are skipped and a
/// source finding none free is set inactive.
pub fn initial_rb_allocation(medium: &Medium, variant: Variant, order: SourceOrder, plan: &mut OfflinePlan) {
    let (m, fq) = (plan.sources, plan.freqs);
    for t in 0..plan.slots {
        let mut srcs: Vec<(usize, f64)> = (0..m)
            .map(|s| {
                let best = best_freq((0..fq).map(|f| (f, group_gain(medium, plan, t, s, f))));
                (s, best.map_or(0.0, |b| b.1))
            })
            .collect();
        if order == SourceOrder::BestGain {
            srcs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        let mut taken = vec![false; fq];
        for (s, _) in srcs {
            let free = (0..fq).filter(|&f| !variant.is_oma() || !taken[f]);
            match best_freq(free.map(|f| (f, group_gain(medium, plan, t, s, f)))) {
                Some((f, _)) => {
                    taken[f] = true;
                    plan.decision_mut(t, s).freq = f;
                    plan.set_active(t, s, true);
                }
                None => plan.set_active(t, s, false),
            }
        }
    }
}

/// Replays a plan through the physical layer, masking packets that are
/// delivered or outside their window at the time they would be sent.
pub fn evaluate(plan: &OfflinePlan, medium: &Medium, packets: &[[Packet; 2]]) -> Result<DeliveryLedger> {
    let mut ledger = DeliveryLedger::new(packets, medium.num_destinations);
    for t in 0..plan.slots {
        let decisions: Vec<TxDecision> = plan
            .slot_decisions(t)
            .into_iter()
            .enumerate()
            .map(|(s, d)| ledger.mask(s, d, t))
            .collect();
        apply_slot(&decisions, medium, &mut ledger, t)?;
    }
    Ok(ledger)
}

fn objective(plan: &OfflinePlan, medium: &Medium, packets: &[[Packet; 2]]) -> Result<usize> {
    let l = evaluate(plan, medium, packets)?;
    Ok(l.delivered_count(Slice::Throughput) + l.delivered_count(Slice::Safety))
}

/// One local-search move inside a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    /// Exchange the frequencies of two active sources.
    Swap { slot: usize, a: usize, b: usize },
    /// Put an active source on another frequency.
    Shift { slot: usize, source: usize, freq: usize },
    /// An inactive source takes `freq`, evicting its holder if there is one.
    Enter { slot: usize, source: usize, freq: usize },
}

impl Move {
    fn apply(self, plan: &mut OfflinePlan) {
        match self {
            Move::Swap { slot, a, b } => {
                let fa = plan.decision(slot, a).freq;
                let fb = plan.decision(slot, b).freq;
                plan.decision_mut(slot, a).freq = fb;
                plan.decision_mut(slot, b).freq = fa;
            }
            Move::Shift { slot, source, freq } => plan.decision_mut(slot, source).freq = freq,
            Move::Enter { slot, source, freq } => {
                if let Some(h) = plan.holder(slot, freq) {
                    plan.set_active(slot, h, false);
                }
                plan.decision_mut(slot, source).freq = freq;
                plan.set_active(slot, source, true);
            }
        }
    }
}

fn candidate_moves(plan: &OfflinePlan, slot: usize, oma: bool) -> Vec<Move> {
    let (m, fq) = (plan.sources, plan.freqs);
    let mut out = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if plan.is_active(slot, a)
                && plan.is_active(slot, b)
                && plan.decision(slot, a).freq != plan.decision(slot, b).freq
            {
                out.push(Move::Swap { slot, a, b });
            }
        }
    }
    for s in 0..m {
        for f in 0..fq {
            if plan.is_active(slot, s) {
                if f != plan.decision(slot, s).freq && (!oma || plan.holder(slot, f).is_none()) {
                    out.push(Move::Shift {
                        slot,
                        source: s,
                        freq: f,
                    });
                }
            } else {
                out.push(Move::Enter {
                    slot,
                    source: s,
                    freq: f,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SwapOutcome {
    pub plan: OfflinePlan,
    /// Objective of the initial plan followed by the value after each
    /// accepted move.
    pub history: Vec<usize>,
    pub accepted: Vec<Move>,
}

/// First-improvement local search over swaps, shifts and entries; a move
/// is kept only if the delivered-packet count strictly increases. Stops
/// after a full pass without improvement or `max_iters` accepted moves.
pub fn swap_matching(
    mut plan: OfflinePlan,
    medium: &Medium,
    packets: &[[Packet; 2]],
    oma: bool,
    max_iters: usize,
) -> Result<SwapOutcome> {
    let mut current = objective(&plan, medium, packets)?;
    let mut history = vec![current];
    let mut accepted = Vec::new();
    let ceiling = 2 * plan.sources;
    'search: loop {
        let mut improved = false;
        for t in 0..plan.slots {
            for mv in candidate_moves(&plan, t, oma) {
                if accepted.len() >= max_iters || current == ceiling {
                    break 'search;
                }
                let mut trial = plan.clone();
                mv.apply(&mut trial);
                let v = objective(&trial, medium, packets)?;
                if v > current {
                    debug_assert!(!oma || trial.is_oma_exclusive());
                    plan = trial;
                    current = v;
                    history.push(v);
                    accepted.push(mv);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(SwapOutcome {
        plan,
        history,
        accepted,
    })
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub variant: Variant,
    pub metrics: EpisodeMetrics,
    pub search: SwapOutcome,
}

/// Plans and scores one episode. Coverage and slices are drawn first, so
/// variants given equally seeded generators share them.
pub fn run_baseline<R: Rng + ?Sized>(
    variant: Variant,
    scenario: &Scenario,
    medium: &Medium,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> Result<BaselineRun> {
    let m = scenario.num_sources();
    if scenario.packets.len() != m || medium.num_sources != m {
        return Err(Error::ShapeMismatch {
            expected: format!("{m} sources"),
            found: format!(
                "{} packet rows, {} medium sources",
                scenario.packets.len(),
                medium.num_sources
            ),
        });
    }
    let mut plan = OfflinePlan::new(m, medium.channel.slots, medium.channel.freqs);
    random_coverage_slice(&scenario.packets, &mut plan, rng);
    assign_powers(variant, &mut plan, rng);
    initial_rb_allocation(medium, variant, cfg.order, &mut plan);
    let search = swap_matching(plan, medium, &scenario.packets, variant.is_oma(), cfg.max_iters)?;
    let metrics = evaluate(&search.plan, medium, &scenario.packets)?.summary();
    Ok(BaselineRun {
        variant,
        metrics,
        search,
    })
}

/// Runs a variant on episode `k` of `world`, drawing its randomness from
/// the baseline stream of that episode.
pub fn baseline_episode(variant: Variant, world: &World, k: usize, cfg: &BaselineConfig) -> Result<BaselineRun> {
    let sim = world.config();
    let (sc, ch) = world.episode(k)?;
    let medium = Medium::new(&sc, ch, &sim.channel, sim.env.slot_duration_s)?;
    let mut rng = stream(world.seed(), Stream::Baseline, k as u64);
    run_baseline(variant, &sc, &medium, cfg, &mut rng)
}

pub fn evaluate_baseline(
    variant: Variant,
    world: &World,
    episodes: &[usize],
    cfg: &BaselineConfig,
) -> Result<Vec<EpisodeMetrics>> {
    crate::par::map_ordered(episodes, |k| {
        baseline_episode(variant, world, k, cfg).map(|r| r.metrics)
    })
}
