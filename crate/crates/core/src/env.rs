//! The gNB decision process.
//!
//! Within a slot the agent decides for one source vehicle at a time. Each
//! such micro-step sees the decisions already taken for earlier vehicles in
//! the same slot; the slot is resolved on the last vehicle's micro-step,
//! which also carries the slot reward.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;

use crate::channel::{noise_lin, pathloss_db, ChannelConfig, ChannelState};
use crate::error::{invalid, Error, Result};
use crate::phy::{
    apply_slot, DeliveryLedger, EpisodeMetrics, Medium, PacketChoice, SlotOutcome, TxDecision, COVERAGE_M,
    MAX_POWER_IDX, POWER_DBM,
};
use crate::scenario::{Scenario, Slice};

/// Range used to scale large-scale gains into `[0, 1]`.
pub const GAIN_DB_RANGE: (f64, f64) = (-160.0, -40.0);
/// Fast-fading powers are clipped to this value before scaling.
pub const FASTFADE_CLIP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub sources: usize,
    pub destinations: usize,
    pub freqs: usize,
    pub slots: usize,
    pub slot_duration_s: f64,
    pub gamma: f64,
    pub reward_upper_bound: f64,
    pub rate_norm_bps: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            sources: 3,
            destinations: 4,
            freqs: 2,
            slots: 20,
            slot_duration_s: 0.005,
            gamma: 1.0,
            reward_upper_bound: 1.0,
            rate_norm_bps: default_rate_norm(&ChannelConfig::default()),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 || self.destinations == 0 {
            return Err(invalid("need at least one source and one destination"));
        }
        if self.freqs == 0 || self.slots == 0 {
            return Err(invalid("need at least one frequency and one slot"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("discount must lie in (0, 1]"));
        }
        if !(self.slot_duration_s > 0.0 && self.rate_norm_bps > 0.0 && self.reward_upper_bound > 0.0) {
            return Err(invalid(
                "slot duration, rate normalizer and reward bound must be positive",
            ));
        }
        Ok(())
    }

    pub fn actions(&self) -> ActionSpace {
        ActionSpace { freqs: self.freqs }
    }

    pub fn obs_dim(&self) -> usize {
        let (m, n, f) = (self.sources, self.destinations, self.freqs);
        m * n + m * n * f + 3 * m + 2 * m + 2 * m + 1 + m + 4 * m
    }

    pub fn episode_duration_s(&self) -> f64 {
        self.slots as f64 * self.slot_duration_s
    }
}

/// Shannon rate at full power over a 100 m link with no fading or shadowing.
pub fn default_rate_norm(ch: &ChannelConfig) -> f64 {
    let snr_db =
        POWER_DBM[MAX_POWER_IDX] + ch.link_antenna_gain_db() - pathloss_db(100.0, ch) - 10.0 * noise_lin(ch).log10();
    crate::phy::rate_bps(10f64.powf(snr_db / 10.0), ch.rb_bandwidth_hz)
}

/// Flat encoding of `(coverage, packet, freq, power)` tuples.
///
/// Coverage is the most significant digit, power the least.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    pub freqs: usize,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        COVERAGE_M.len() * PacketChoice::ALL.len() * self.freqs * POWER_DBM.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self, d: &TxDecision) -> Result<usize> {
        if d.coverage_idx >= COVERAGE_M.len() || d.freq >= self.freqs || d.power_idx >= POWER_DBM.len() {
            return Err(invalid(format!("decision {d:?} outside the action space")));
        }
        Ok(
            ((d.coverage_idx * PacketChoice::ALL.len() + d.packet.index()) * self.freqs + d.freq) * POWER_DBM.len()
                + d.power_idx,
        )
    }

    pub fn decode(&self, index: usize) -> Result<TxDecision> {
        if index >= self.len() {
            return Err(invalid(format!("action {index} outside 0..{}", self.len())));
        }
        let power_idx = index % POWER_DBM.len();
        let rest = index / POWER_DBM.len();
        let freq = rest % self.freqs;
        let rest = rest / self.freqs;
        let packet = PacketChoice::from_index(rest % PacketChoice::ALL.len()).unwrap();
        let coverage_idx = rest / PacketChoice::ALL.len();
        Ok(TxDecision {
            coverage_idx,
            packet,
            freq,
            power_idx,
        })
    }
}

/// Reward of one source for a resolved slot.
pub fn individual_reward(source: usize, outcome: &SlotOutcome, cfg: &EnvConfig) -> f64 {
    if outcome.delivered_now[source].is_some() {
        return cfg.reward_upper_bound;
    }
    if outcome.transmitted[source].is_none() {
        return 0.0;
    }
    cfg.reward_upper_bound * (outcome.rates[source] / cfg.rate_norm_bps).clamp(0.0, 1.0)
}

/// Discounted sum of per-slot rewards.
pub fn episode_return(slot_rewards: &[f64], gamma: f64) -> f64 {
    let mut w = 1.0;
    let mut acc = 0.0;
    for r in slot_rewards {
        acc += w * r;
        w *= gamma;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub observation: Vec<f64>,
    pub terminal: bool,
    /// True when this micro-step closed a slot.
    pub slot_resolved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub slot: usize,
    pub vehicle: usize,
    pub decision: TxDecision,
    pub reward: f64,
    /// Leftover bits after the step, `[source][slice]`.
    pub leftover: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
struct Episode {
    medium: Medium,
    ledger: DeliveryLedger,
    slot: usize,
    vehicle: usize,
    pending: Vec<TxDecision>,
    prev_choice: Vec<PacketChoice>,
    slot_rewards: Vec<f64>,
    done: bool,
}

#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    channel_cfg: ChannelConfig,
    episode: Option<Episode>,
    trace: Option<Vec<TraceRow>>,
}

impl Env {
    pub fn new(cfg: EnvConfig, channel_cfg: ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        channel_cfg.validate()?;
        Ok(Env {
            cfg,
            channel_cfg,
            episode: None,
            trace: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    pub fn actions(&self) -> ActionSpace {
        self.cfg.actions()
    }

    /// Records one [`TraceRow`] per micro-step from the next reset on.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[TraceRow] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn reset(&mut self, scenario: &Scenario, channel: ChannelState) -> Result<Vec<f64>> {
        let c = &self.cfg;
        let dims_ok = scenario.num_sources() == c.sources
            && scenario.num_destinations() == c.destinations
            && scenario.packets.len() == c.sources
            && channel.freqs == c.freqs
            && channel.slots == c.slots;
        if !dims_ok {
            return Err(invalid(format!(
                "episode dims (m={}, n={}, packets={}, F={}, T={}) do not match config (m={}, n={}, F={}, T={})",
                scenario.num_sources(),
                scenario.num_destinations(),
                scenario.packets.len(),
                channel.freqs,
                channel.slots,
                c.sources,
                c.destinations,
                c.freqs,
                c.slots
            )));
        }
        if scenario.packets.iter().flatten().any(|p| p.deadline_slot >= c.slots) {
            return Err(invalid("packet deadline beyond the horizon"));
        }
        let medium = Medium::new(scenario, channel, &self.channel_cfg, c.slot_duration_s)?;
        self.episode = Some(Episode {
            ledger: DeliveryLedger::new(&scenario.packets, c.destinations),
            medium,
            slot: 0,
            vehicle: 0,
            pending: Vec::with_capacity(c.sources),
            prev_choice: vec![PacketChoice::None; c.sources],
            slot_rewards: Vec::with_capacity(c.slots),
            done: false,
        });
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
        Ok(self.observation())
    }

    fn ep(&self) -> Result<&Episode> {
        self.episode
            .as_ref()
            .ok_or_else(|| Error::ContractViolation("environment used before reset".into()))
    }

    pub fn ledger(&self) -> Option<&DeliveryLedger> {
        self.episode.as_ref().map(|e| &e.ledger)
    }

    pub fn slot(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.slot)
    }

    pub fn deciding_vehicle(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.vehicle)
    }

    pub fn is_terminal(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.done)
    }

    pub fn slot_rewards(&self) -> &[f64] {
        self.episode.as_ref().map_or(&[], |e| &e.slot_rewards)
    }

    pub fn episode_return(&self) -> f64 {
        episode_return(self.slot_rewards(), self.cfg.gamma)
    }

    pub fn metrics(&self) -> Option<EpisodeMetrics> {
        self.ledger().map(DeliveryLedger::summary)
    }

    /// Current observation; see the crate README for the layout.
    pub fn observation(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.obs_dim());
        if let Some(ep) = &self.episode {
            self.write_observation(ep, &mut out);
        } else {
            out.resize(self.obs_dim(), 0.0);
        }
        out
    }

    fn write_observation(&self, ep: &Episode, out: &mut Vec<f64>) {
        let c = &self.cfg;
        let (m, n, fq, t_max) = (c.sources, c.destinations, c.freqs, c.slots);
        let ch = &ep.medium.channel;
        let (lo, hi) = GAIN_DB_RANGE;
        for i in 0..m {
            for j in 0..n {
                let g = ch.large_scale_db(ch.link(i, j));
                out.push(((g - lo) / (hi - lo)).clamp(0.0, 1.0));
            }
        }
        let t = ep.slot.min(t_max - 1);
        for i in 0..m {
            for j in 0..n {
                for f in 0..fq {
                    let ff = if ep.done { 0.0 } else { ch.fastfade(i, j, f, t) };
                    out.push(ff.min(FASTFADE_CLIP) / FASTFADE_CLIP);
                }
            }
        }
        for choice in &ep.prev_choice {
            for k in 0..3 {
                out.push(if choice.index() == k { 1.0 } else { 0.0 });
            }
        }
        for i in 0..m {
            for s in Slice::ALL {
                let p = &ep.ledger.packets[i][s.index()];
                out.push(p.leftover_bits / p.size_bits);
            }
        }
        for i in 0..m {
            let p = &ep.ledger.packets[i][Slice::Safety.index()];
            out.push(p.arrival_slot as f64 / t_max as f64);
            out.push(p.deadline_slot as f64 / t_max as f64);
        }
        out.push(ep.slot as f64 / t_max as f64);
        for i in 0..m {
            out.push(if !ep.done && i == ep.vehicle { 1.0 } else { 0.0 });
        }
        let f_scale = if fq > 1 { (fq - 1) as f64 } else { 1.0 };
        for i in 0..m {
            match ep.pending.get(i) {
                Some(d) => out.extend([
                    d.coverage_idx as f64 / (COVERAGE_M.len() - 1) as f64,
                    d.packet.index() as f64 / 2.0,
                    d.freq as f64 / f_scale,
                    d.power_idx as f64 / MAX_POWER_IDX as f64,
                ]),
                None => out.extend([0.0; 4]),
            }
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        let decision = self.actions().decode(action)?;
        self.step_decision(decision)
    }

    /// Like [`Env::step`] with a decoded action.
    pub fn step_decision(&mut self, decision: TxDecision) -> Result<StepResult> {
        let cfg = self.cfg.clone();
        let ep = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::ContractViolation("step before reset".into()))?;
        if ep.done {
            return Err(Error::ContractViolation("step after terminal".into()));
        }
        let vehicle = ep.vehicle;
        let slot = ep.slot;
        let masked = ep.ledger.mask(vehicle, decision, slot);
        ep.pending.push(masked);

        let mut reward = 0.0;
        let mut resolved = false;
        if ep.vehicle + 1 < cfg.sources {
            ep.vehicle += 1;
        } else {
            let outcome = apply_slot(&ep.pending, &ep.medium, &mut ep.ledger, ep.slot)?;
            reward = (0..cfg.sources).map(|i| individual_reward(i, &outcome, &cfg)).sum();
            for (prev, d) in ep.prev_choice.iter_mut().zip(&ep.pending) {
                *prev = if d.is_effective() { d.packet } else { PacketChoice::None };
            }
            ep.slot_rewards.push(reward);
            ep.pending.clear();
            ep.vehicle = 0;
            ep.slot += 1;
            resolved = true;
            if ep.slot == cfg.slots {
                ep.done = true;
            }
        }
        let terminal = ep.done;
        if let Some(trace) = self.trace.as_mut() {
            let ep = self.episode.as_ref().unwrap();
            trace.push(TraceRow {
                slot,
                vehicle,
                decision: masked,
                reward,
                leftover: ep
                    .ledger
                    .packets
                    .iter()
                    .map(|p| [p[0].leftover_bits, p[1].leftover_bits])
                    .collect(),
            });
        }
        Ok(StepResult {
            reward,
            observation: self.observation(),
            terminal,
            slot_resolved: resolved,
        })
    }

    /// Medium of the loaded episode, for policies needing full knowledge.
    pub fn medium(&self) -> Result<&Medium> {
        Ok(&self.ep()?.medium)
    }
}

/// Writes trace rows as CSV.
pub fn write_trace<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    let mut s =
        String::from("# iovsim-episode-trace v1\nslot,vehicle,coverage_m,packet,freq,power_dbm,reward,leftover\n");
    for r in rows {
        let left: Vec<String> = r.leftover.iter().map(|[a, b]| format!("{a:.1}/{b:.1}")).collect();
        writeln!(
            s,
            "{},{},{},{:?},{},{},{:?},{}",
            r.slot,
            r.vehicle,
            r.decision.coverage_m(),
            r.decision.packet,
            r.decision.freq,
            POWER_DBM[r.decision.power_idx],
            r.reward,
            left.join(";")
        )
        .unwrap();
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_channel;
    use crate::rng::{stream, Stream};
    use crate::scenario::{generate_packets, generate_vehicles, PacketConfig, RoadConfig};

    fn world(seed: u64) -> (Scenario, ChannelState) {
        let cfg = EnvConfig::default();
        let mut sc = generate_vehicles(&RoadConfig::default(), 3, 4, &mut stream(seed, Stream::Topology, 0)).unwrap();
        sc.packets = generate_packets(
            &sc,
            &PacketConfig::default(),
            cfg.slots,
            &mut stream(seed, Stream::Packets, 0),
        )
        .unwrap();
        let ch = draw_channel(
            &sc,
            &ChannelConfig::default(),
            cfg.freqs,
            cfg.slots,
            &mut stream(seed, Stream::Channel, 0),
        )
        .unwrap();
        (sc, ch)
    }

    fn env() -> Env {
        Env::new(EnvConfig::default(), ChannelConfig::default()).unwrap()
    }

    #[test]
    fn action_space_round_trip() {
        let a = EnvConfig::default().actions();
        assert_eq!(a.len(), 120);
        for i in 0..a.len() {
            assert_eq!(a.encode(&a.decode(i).unwrap()).unwrap(), i);
        }
        assert!(a.decode(120).is_err());
        assert_eq!(a.decode(0).unwrap(), TxDecision::SILENT);
        let last = a.decode(119).unwrap();
        assert_eq!(
            (last.coverage_idx, last.packet, last.freq, last.power_idx),
            (4, PacketChoice::Slice2, 1, 3)
        );
    }

    #[test]
    fn reset_observation_layout() {
        let (sc, ch) = world(1);
        let mut e = env();
        let obs = e.reset(&sc, ch).unwrap();
        assert_eq!(obs.len(), 73);
        assert!(obs.iter().all(|v| (0.0..=1.0).contains(v)));
        let leftover = &obs[12 + 24 + 9..12 + 24 + 9 + 6];
        assert!(leftover.iter().all(|&v| v == 1.0));
        assert_eq!(obs[12 + 24 + 9 + 6 + 6], 0.0);
        assert_eq!(&obs[58..61], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn reset_rejects_mismatched_dims() {
        let (sc, ch) = world(1);
        let mut e = Env::new(
            EnvConfig {
                freqs: 3,
                ..EnvConfig::default()
            },
            ChannelConfig::default(),
        )
        .unwrap();
        assert!(matches!(e.reset(&sc, ch), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn silence_earns_nothing() {
        let (sc, ch) = world(2);
        let mut e = env();
        e.reset(&sc, ch).unwrap();
        let mut total = 0.0;
        for k in 0..60 {
            let r = e.step(0).unwrap();
            assert_eq!(r.slot_resolved, k % 3 == 2);
            assert_eq!(r.terminal, k == 59);
            total += r.reward;
        }
        assert_eq!(total, 0.0);
        assert!(matches!(e.step(0), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn deciding_vehicle_advances_inside_a_slot() {
        let (sc, ch) = world(3);
        let mut e = env();
        e.reset(&sc, ch).unwrap();
        let a = e
            .actions()
            .encode(&TxDecision {
                coverage_idx: 2,
                packet: PacketChoice::Slice1,
                freq: 1,
                power_idx: 2,
            })
            .unwrap();
        let r = e.step(a).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(&r.observation[58..61], &[0.0, 1.0, 0.0]);
        assert_eq!(&r.observation[61..65], &[0.5, 0.5, 1.0, 2.0 / 3.0]);
    }

    #[test]
    fn rewards_follow_delivery_and_rate() {
        let cfg = EnvConfig::default();
        let out = SlotOutcome {
            transmitted: vec![
                Some(Slice::Safety),
                Some(Slice::Throughput),
                Some(Slice::Throughput),
                None,
            ],
            rates: vec![1e6, cfg.rate_norm_bps, 0.5 * cfg.rate_norm_bps, 0.0],
            delivered_now: vec![Some(Slice::Safety), None, None, None],
        };
        assert_eq!(individual_reward(0, &out, &cfg), 1.0);
        assert_eq!(individual_reward(1, &out, &cfg), 1.0);
        assert!((individual_reward(2, &out, &cfg) - 0.5).abs() < 1e-15);
        assert_eq!(individual_reward(3, &out, &cfg), 0.0);
    }

    #[test]
    fn returns() {
        assert_eq!(episode_return(&[1.0, 2.0, 3.0], 1.0), 6.0);
        assert_eq!(episode_return(&[1.0, 2.0], 0.5), 2.0);
        assert_eq!(episode_return(&[0.0; 5], 0.9), 0.0);
    }

    #[test]
    fn rate_norm_default() {
        let ch = ChannelConfig::default();
        let snr_db = 30.0 + 6.0 - pathloss_db(100.0, &ch) + 105.0;
        let want = 1e6 * (1.0 + 10f64.powf(snr_db / 10.0)).log2();
        assert!((default_rate_norm(&ch) / want - 1.0).abs() < 1e-12);
        assert!((want - 14.02e6).abs() < 0.01e6);
    }

    fn random_episode(seed: u64) -> (Vec<f64>, DeliveryLedger) {
        use rand::Rng;
        let (sc, ch) = world(seed);
        let mut e = env();
        e.reset(&sc, ch).unwrap();
        let mut rng = stream(seed, Stream::Exploration, 0);
        let mut rewards = Vec::new();
        let mut leftovers: Vec<Vec<[f64; 2]>> = Vec::new();
        loop {
            let r = e.step(rng.random_range(0..120)).unwrap();
            rewards.push(r.reward);
            let l = e.ledger().unwrap();
            leftovers.push(
                l.packets
                    .iter()
                    .map(|p| [p[0].leftover_bits, p[1].leftover_bits])
                    .collect(),
            );
            assert!(r.reward >= 0.0 && r.reward <= 3.0);
            if r.terminal {
                break;
            }
        }
        for w in leftovers.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!(b[0] <= a[0] && b[1] <= a[1]);
            }
        }
        (rewards, e.ledger().unwrap().clone())
    }

    #[test]
    fn random_play_is_bounded_monotone_and_deterministic() {
        for seed in 0..20 {
            let (r1, l1) = random_episode(seed);
            let (r2, l2) = random_episode(seed);
            assert_eq!(r1, r2);
            assert_eq!(l1, l2);
            assert!(r1.iter().sum::<f64>() <= 60.0);
        }
    }

    #[test]
    fn delivered_packet_is_masked_afterwards() {
        let (mut sc, ch) = world(4);
        for p in sc.packets.iter_mut() {
            p[1].size_bits = 1.0;
            p[1].leftover_bits = 1.0;
            p[1].arrival_slot = 0;
            p[1].deadline_slot = 19;
        }
        let mut e = env();
        e.enable_trace();
        e.reset(&sc, ch).unwrap();
        let a = e.actions();
        let loud = a
            .encode(&TxDecision {
                coverage_idx: 4,
                packet: PacketChoice::Slice2,
                freq: 0,
                power_idx: 3,
            })
            .unwrap();
        while !e.is_terminal() {
            e.step(loud).unwrap();
        }
        let trace = e.trace();
        assert_eq!(trace.len(), 60);
        for (i, delivered) in e.ledger().unwrap().delivered_slot.iter().enumerate() {
            if let Some(t) = delivered[1] {
                assert!(trace
                    .iter()
                    .filter(|r| r.vehicle == i && r.slot > t)
                    .all(|r| r.decision.packet == PacketChoice::None));
            }
        }
        let mut buf = Vec::new();
        write_trace(trace, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 62);
    }
}
