//! NOMA reception with ideal SIC, broadcast group rates and delivery accounting.

use crate::channel::{dbm_to_mw, noise_lin, ChannelConfig, ChannelState};
use crate::error::{invalid, Error, Result};
use crate::scenario::{Packet, Scenario, Slice};

/// Broadcast radii in meters; zero means "do not broadcast".
pub const COVERAGE_M: [f64; 5] = [0.0, 100.0, 400.0, 1000.0, 1400.0];
/// Transmit power levels in dBm; the lowest level means silence.
pub const POWER_DBM: [f64; 4] = [-100.0, 15.0, 23.0, 30.0];
pub const MAX_POWER_IDX: usize = POWER_DBM.len() - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PacketChoice {
    #[default]
    None,
    Slice1,
    Slice2,
}

impl PacketChoice {
    pub const ALL: [PacketChoice; 3] = [PacketChoice::None, PacketChoice::Slice1, PacketChoice::Slice2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn slice(self) -> Option<Slice> {
        match self {
            PacketChoice::None => None,
            PacketChoice::Slice1 => Some(Slice::Throughput),
            PacketChoice::Slice2 => Some(Slice::Safety),
        }
    }
}

/// What one source does in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TxDecision {
    pub coverage_idx: usize,
    pub packet: PacketChoice,
    pub freq: usize,
    pub power_idx: usize,
}

impl TxDecision {
    pub const SILENT: TxDecision = TxDecision {
        coverage_idx: 0,
        packet: PacketChoice::None,
        freq: 0,
        power_idx: 0,
    };

    pub fn coverage_m(&self) -> f64 {
        COVERAGE_M[self.coverage_idx]
    }

    /// Transmit power in mW; the silence level maps to exactly zero.
    pub fn power_mw(&self) -> f64 {
        if self.power_idx == 0 {
            0.0
        } else {
            dbm_to_mw(POWER_DBM[self.power_idx])
        }
    }

    /// Whether this decision puts energy on the air.
    pub fn is_effective(&self) -> bool {
        self.coverage_idx > 0 && self.power_idx > 0 && self.packet != PacketChoice::None
    }
}

/// Per-episode radio context shared by every policy: geometry, gains, noise.
#[derive(Debug, Clone)]
pub struct Medium {
    pub num_sources: usize,
    pub num_destinations: usize,
    /// Row-major `m x n` distances.
    pub distances: Vec<f64>,
    pub channel: ChannelState,
    pub noise_mw: f64,
    pub bandwidth_hz: f64,
    pub slot_duration_s: f64,
}

impl Medium {
    pub fn new(scenario: &Scenario, channel: ChannelState, cfg: &ChannelConfig, slot_duration_s: f64) -> Result<Self> {
        let m = scenario.num_sources();
        let n = scenario.num_destinations();
        if channel.num_sources != m || channel.num_destinations != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{m}x{n} links"),
                found: format!("{}x{} links", channel.num_sources, channel.num_destinations),
            });
        }
        Ok(Medium {
            num_sources: m,
            num_destinations: n,
            distances: scenario.distances(),
            channel,
            noise_mw: noise_lin(cfg),
            bandwidth_hz: cfg.rb_bandwidth_hz,
            slot_duration_s,
        })
    }

    pub fn distance(&self, source: usize, dest: usize) -> f64 {
        self.distances[source * self.num_destinations + dest]
    }

    /// Destinations inside the broadcast radius of `source`.
    pub fn group(&self, source: usize, coverage_m: f64) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_destinations).filter(move |&d| coverage_m > 0.0 && self.distance(source, d) <= coverage_m)
    }
}

/// SINR of every transmitter at one receiver under ideal SIC.
///
/// Signals are decoded strongest first (ties by lower source id); each one
/// only sees the weaker, not yet cancelled signals as interference. The
/// result is aligned with the input order.
pub fn sic_sinr(transmitters: &[(usize, f64)], noise: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..transmitters.len()).collect();
    order.sort_by(|&a, &b| {
        transmitters[b]
            .1
            .total_cmp(&transmitters[a].1)
            .then(transmitters[a].0.cmp(&transmitters[b].0))
    });
    let mut out = vec![0.0; transmitters.len()];
    let mut residual: f64 = order.iter().map(|&k| transmitters[k].1).sum();
    for &k in &order {
        let p = transmitters[k].1;
        residual -= p;
        out[k] = p / (residual.max(0.0) + noise);
    }
    out
}

/// Shannon rate of one resource block.
pub fn rate_bps(sinr: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * sinr.max(0.0).ln_1p() / std::f64::consts::LN_2
}

/// Rates of every source at every destination for one slot.
///
/// `rates[s][d]` is `None` when `d` is outside the group of `s` or `s` is
/// silent.
fn slot_rates(decisions: &[TxDecision], medium: &Medium, slot: usize) -> Vec<Vec<Option<f64>>> {
    let m = medium.num_sources;
    let n = medium.num_destinations;
    let mut rates = vec![vec![None; n]; m];
    for f in 0..medium.channel.freqs {
        let active: Vec<usize> = (0..m)
            .filter(|&s| decisions[s].is_effective() && decisions[s].freq == f)
            .collect();
        if active.is_empty() {
            continue;
        }
        for d in 0..n {
            let listeners: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&s| medium.distance(s, d) <= decisions[s].coverage_m())
                .collect();
            if listeners.is_empty() {
                continue;
            }
            let rx: Vec<(usize, f64)> = active
                .iter()
                .map(|&s| (s, decisions[s].power_mw() * medium.channel.gain(s, d, f, slot)))
                .collect();
            let sinr = sic_sinr(&rx, medium.noise_mw);
            for (k, &s) in active.iter().enumerate() {
                if listeners.contains(&s) {
                    rates[s][d] = Some(rate_bps(sinr[k], medium.bandwidth_hz));
                }
            }
        }
    }
    rates
}

/// Broadcast rate of `source`: the worst rate over its group, zero when the
/// group is empty or the source is silent.
pub fn group_rate(source: usize, decisions: &[TxDecision], medium: &Medium, slot: usize) -> f64 {
    min_rate(&slot_rates(decisions, medium, slot)[source])
}

fn min_rate(row: &[Option<f64>]) -> f64 {
    row.iter()
        .flatten()
        .copied()
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.min(r))))
        .unwrap_or(0.0)
}

/// Cumulative per-packet delivery state of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryLedger {
    pub packets: Vec<[Packet; 2]>,
    pub delivered: Vec<[bool; 2]>,
    pub delivered_slot: Vec<[Option<usize>; 2]>,
    /// Union of broadcast groups over every slot a packet was sent in.
    pub intended: Vec<[Vec<bool>; 2]>,
}

impl DeliveryLedger {
    pub fn new(packets: &[[Packet; 2]], num_destinations: usize) -> Self {
        let m = packets.len();
        let packets = packets
            .iter()
            .map(|pair| {
                pair.clone().map(|mut p| {
                    p.leftover_bits = p.size_bits;
                    p
                })
            })
            .collect();
        DeliveryLedger {
            packets,
            delivered: vec![[false; 2]; m],
            delivered_slot: vec![[None; 2]; m],
            intended: vec![[vec![false; num_destinations], vec![false; num_destinations]]; m],
        }
    }

    pub fn num_sources(&self) -> usize {
        self.packets.len()
    }

    pub fn leftover(&self, source: usize, slice: Slice) -> f64 {
        self.packets[source][slice.index()].leftover_bits
    }

    pub fn is_delivered(&self, source: usize, slice: Slice) -> bool {
        self.delivered[source][slice.index()]
    }

    /// Whether `source` may send `slice` in `slot`.
    pub fn can_send(&self, source: usize, slice: Slice, slot: usize) -> bool {
        !self.is_delivered(source, slice) && self.packets[source][slice.index()].in_window(slot)
    }

    /// Replaces an illegal packet choice (delivered packet, or a safety
    /// packet outside its window) with no transmission.
    pub fn mask(&self, source: usize, mut decision: TxDecision, slot: usize) -> TxDecision {
        if let Some(slice) = decision.packet.slice() {
            if !self.can_send(source, slice, slot) {
                decision.packet = PacketChoice::None;
            }
        }
        decision
    }

    pub fn delivered_count(&self, slice: Slice) -> usize {
        self.delivered.iter().filter(|d| d[slice.index()]).count()
    }

    pub fn all_delivered(&self) -> bool {
        self.delivered.iter().all(|d| d[0] && d[1])
    }

    /// Sum of group sizes over delivered packets of a slice.
    pub fn receptions(&self, slice: Slice) -> usize {
        (0..self.num_sources())
            .filter(|&s| self.is_delivered(s, slice))
            .map(|s| self.intended[s][slice.index()].iter().filter(|&&b| b).count())
            .sum()
    }

    pub fn summary(&self) -> EpisodeMetrics {
        EpisodeMetrics {
            slice1_delivered: self.delivered_count(Slice::Throughput),
            slice2_delivered: self.delivered_count(Slice::Safety),
            prr: prr(self),
            slice1_receptions: self.receptions(Slice::Throughput),
            slice2_receptions: self.receptions(Slice::Safety),
        }
    }
}

/// Result of resolving one slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotOutcome {
    /// Slice actually on the air for each source.
    pub transmitted: Vec<Option<Slice>>,
    /// Group rate per source in bit/s.
    pub rates: Vec<f64>,
    /// Slice completed by each source in this slot.
    pub delivered_now: Vec<Option<Slice>>,
}

/// Resolves one slot: computes group rates and drains leftover bits.
///
/// Decisions must already be masked; sending a delivered packet or a safety
/// packet outside its window is a caller bug.
pub fn apply_slot(
    decisions: &[TxDecision],
    medium: &Medium,
    ledger: &mut DeliveryLedger,
    slot: usize,
) -> Result<SlotOutcome> {
    let m = medium.num_sources;
    if decisions.len() != m || ledger.num_sources() != m {
        return Err(Error::ShapeMismatch {
            expected: format!("{m} decisions"),
            found: format!("{} decisions, {} ledger rows", decisions.len(), ledger.num_sources()),
        });
    }
    if slot >= medium.channel.slots {
        return Err(invalid(format!("slot {slot} outside horizon {}", medium.channel.slots)));
    }
    for (s, d) in decisions.iter().enumerate() {
        if d.coverage_idx >= COVERAGE_M.len() || d.power_idx >= POWER_DBM.len() || d.freq >= medium.channel.freqs {
            return Err(invalid(format!("decision {d:?} of source {s} out of range")));
        }
        if let Some(slice) = d.packet.slice() {
            if !ledger.can_send(s, slice, slot) {
                return Err(Error::ContractViolation(format!(
                    "source {s} scheduled {slice:?} in slot {slot} while it is delivered or outside its window"
                )));
            }
        }
    }

    let rates_to = slot_rates(decisions, medium, slot);
    let mut out = SlotOutcome {
        transmitted: vec![None; m],
        rates: vec![0.0; m],
        delivered_now: vec![None; m],
    };
    for s in 0..m {
        let d = decisions[s];
        if !d.is_effective() {
            continue;
        }
        let slice = d.packet.slice().expect("effective decisions carry a packet");
        out.transmitted[s] = Some(slice);
        let rate = min_rate(&rates_to[s]);
        out.rates[s] = rate;
        let k = slice.index();
        for (dest, r) in rates_to[s].iter().enumerate() {
            if r.is_some() {
                ledger.intended[s][k][dest] = true;
            }
        }
        if rate > 0.0 {
            let p = &mut ledger.packets[s][k];
            p.leftover_bits -= rate * medium.slot_duration_s;
            if p.leftover_bits <= 0.0 {
                p.leftover_bits = 0.0;
                ledger.delivered[s][k] = true;
                ledger.delivered_slot[s][k] = Some(slot);
                out.delivered_now[s] = Some(slice);
            }
        }
    }
    Ok(out)
}

/// Packet reception ratio of a finished episode, `None` when no packet had
/// any intended receiver.
pub fn prr(ledger: &DeliveryLedger) -> Option<f64> {
    let mut intended = 0usize;
    let mut ok = 0usize;
    for s in 0..ledger.num_sources() {
        for slice in Slice::ALL {
            let k = ledger.intended[s][slice.index()].iter().filter(|&&b| b).count();
            intended += k;
            if ledger.is_delivered(s, slice) {
                ok += k;
            }
        }
    }
    (intended > 0).then(|| ok as f64 / intended as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeMetrics {
    pub slice1_delivered: usize,
    pub slice2_delivered: usize,
    pub prr: Option<f64>,
    pub slice1_receptions: usize,
    pub slice2_receptions: usize,
}

impl EpisodeMetrics {
    pub fn total_delivered(&self) -> usize {
        self.slice1_delivered + self.slice2_delivered
    }
}
