//! Episode generation shared by training, evaluation and the baselines.
//!
//! One topology is drawn per seed. Episode `k` sees that topology moved by
//! `k` episode durations, with fresh packets and a fresh channel drawn from
//! streams keyed by `k`, so any episode can be rebuilt on its own and every
//! algorithm evaluated at episode `k` faces the same world.

use crate::channel::{draw_channel, ChannelConfig, ChannelState};
use crate::env::EnvConfig;
use crate::error::{invalid, Result};
use crate::rng::{stream, Stream};
use crate::scenario::{advance_mobility, generate_packets, generate_vehicles, PacketConfig, RoadConfig, Scenario};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub road: RoadConfig,
    pub packets: PacketConfig,
    pub channel: ChannelConfig,
    pub env: EnvConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.road.validate()?;
        self.channel.validate()?;
        self.env.validate()?;
        if self.packets.deadline_len_slots == 0 || self.packets.deadline_len_slots > self.env.slots {
            return Err(invalid("safety deadline must fit inside the episode"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct World {
    cfg: SimConfig,
    seed: u64,
    initial: Scenario,
}

impl World {
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(seed, Stream::Topology, 0);
        let initial = generate_vehicles(&cfg.road, cfg.env.sources, cfg.env.destinations, &mut rng)?;
        Ok(World { cfg, seed, initial })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial(&self) -> &Scenario {
        &self.initial
    }

    pub fn scenario(&self, k: usize) -> Result<Scenario> {
        let elapsed = k as f64 * self.cfg.env.episode_duration_s();
        let mut sc = advance_mobility(&self.initial, elapsed)?;
        sc.episode_index = k;
        let mut rng = stream(self.seed, Stream::Packets, k as u64);
        sc.packets = generate_packets(&sc, &self.cfg.packets, self.cfg.env.slots, &mut rng)?;
        Ok(sc)
    }

    pub fn episode(&self, k: usize) -> Result<(Scenario, ChannelState)> {
        let sc = self.scenario(k)?;
        let mut rng = stream(self.seed, Stream::Channel, k as u64);
        let ch = draw_channel(&sc, &self.cfg.channel, self.cfg.env.freqs, self.cfg.env.slots, &mut rng)?;
        Ok((sc, ch))
    }
}
