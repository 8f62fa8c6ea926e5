//! Run configuration: every module setting plus seeds, output location and
//! the sweep axes, stored as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::dqn::TrainConfig;
use crate::error::{invalid, Error, Result};
use crate::scenario::PacketConfig;
use crate::world::SimConfig;

/// Bytes per unit of the safety-size axis.
pub const SIZE_UNIT_BYTES: u32 = 300;
/// Seconds per unit of the deadline axis.
pub const DEADLINE_UNIT_S: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Safety packet sizes in units of 300 bytes.
    pub sizes_x300b: Vec<u32>,
    /// Safety deadlines in units of 5 ms.
    pub deadlines_x5ms: Vec<u32>,
    /// Size held fixed while the deadline varies.
    pub default_size_x300b: u32,
    /// Deadline held fixed while the size varies.
    pub default_deadline_x5ms: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes_x300b: vec![2, 4, 6, 8, 10],
            deadlines_x5ms: (2..=8).collect(),
            default_size_x300b: 2,
            default_deadline_x5ms: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SweepPoint {
    pub size_x300b: u32,
    pub deadline_x5ms: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Only the default point.
    Default,
    Size,
    Deadline,
    /// Both axes; the shared default point appears once.
    All,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(SweepAxis::Default),
            "size" => Ok(SweepAxis::Size),
            "deadline" => Ok(SweepAxis::Deadline),
            "all" => Ok(SweepAxis::All),
            _ => Err(invalid(format!(
                "unknown sweep {s:?}; expected default, size, deadline or all"
            ))),
        }
    }
}

impl SweepConfig {
    pub fn default_point(&self) -> SweepPoint {
        SweepPoint {
            size_x300b: self.default_size_x300b,
            deadline_x5ms: self.default_deadline_x5ms,
        }
    }

    /// Points of an axis in a fixed order.
    pub fn points(&self, axis: SweepAxis) -> Vec<SweepPoint> {
        let size = self.sizes_x300b.iter().map(|&s| SweepPoint {
            size_x300b: s,
            deadline_x5ms: self.default_deadline_x5ms,
        });
        let deadline = self.deadlines_x5ms.iter().map(|&d| SweepPoint {
            size_x300b: self.default_size_x300b,
            deadline_x5ms: d,
        });
        let mut pts: Vec<SweepPoint> = match axis {
            SweepAxis::Default => vec![self.default_point()],
            SweepAxis::Size => size.collect(),
            SweepAxis::Deadline => deadline.collect(),
            SweepAxis::All => size.chain(deadline).collect(),
        };
        let mut seen = std::collections::HashSet::new();
        pts.retain(|p| seen.insert(*p));
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub eval_episodes: usize,
    /// First evaluated episode; by default the one after training ends.
    pub eval_first_episode: Option<usize>,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out: PathBuf::from("runs/default"),
            eval_episodes: 200,
            eval_first_episode: None,
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            baselines: BaselineConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        if self.eval_episodes == 0 {
            return Err(invalid("eval_episodes must be positive"));
        }
        let s = &self.sweep;
        if s.sizes_x300b.is_empty() || s.deadlines_x5ms.is_empty() {
            return Err(invalid("sweep axes must be non-empty"));
        }
        for p in s.points(SweepAxis::All) {
            self.at(p)?.validate()?;
        }
        Ok(())
    }

    /// Simulation settings at a sweep point.
    pub fn at(&self, p: SweepPoint) -> Result<SimConfig> {
        if p.size_x300b == 0 || p.deadline_x5ms == 0 {
            return Err(invalid(format!("sweep point {p:?} must be positive")));
        }
        let slot_s = self.sim.env.slot_duration_s;
        let slots = (p.deadline_x5ms as f64 * DEADLINE_UNIT_S / slot_s).round().max(1.0) as usize;
        let mut sim = self.sim.clone();
        sim.packets = PacketConfig {
            slice2_bits: (p.size_x300b * SIZE_UNIT_BYTES * 8) as f64,
            deadline_len_slots: slots,
            ..sim.packets
        };
        Ok(sim)
    }

    pub fn eval_episodes(&self) -> Vec<usize> {
        let first = self.eval_first_episode.unwrap_or(self.train.episodes);
        (first..first + self.eval_episodes).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(text.contains("eval_episodes = 200"), "{text}");
    }

    #[test]
    fn partial_files_take_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[train]\nepisodes = 10\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.episodes, 10);
        assert_eq!(cfg.train.batch, 32);
        assert_eq!(cfg.eval_episodes(), (10..210).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(matches!(RunConfig::from_toml("sed = 1\n"), Err(Error::Format(_))));
        assert!(RunConfig::from_toml("[sweep]\nsizes_x300b = []\n").is_err());
        assert!(RunConfig::from_toml("[sim.env]\nsources = 0\n").is_err());
    }

    #[test]
    fn sweep_points() {
        let s = SweepConfig::default();
        assert_eq!(s.points(SweepAxis::Size).len(), 5);
        assert_eq!(s.points(SweepAxis::Deadline).len(), 7);
        // (2, 8) is on both axes
        assert_eq!(s.points(SweepAxis::All).len(), 11);
        let sim = RunConfig::default().at(s.default_point()).unwrap();
        assert_eq!(sim.packets.slice2_bits, 4800.0);
        assert_eq!(sim.packets.deadline_len_slots, 8);
        assert!("diagonal".parse::<SweepAxis>().is_err());
    }
}
