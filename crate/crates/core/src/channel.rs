//! Link gains: LOS WINNER+ B1 pathloss, log-normal shadowing, Rayleigh fading.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};

use crate::error::{invalid, Error, Result};
use crate::rng::fnv1a;
use crate::scenario::Scenario;

const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Coefficients of the WINNER+ B1 line-of-sight pathloss model.
///
/// Below the breakpoint: `near_slope * log10(d) + near_intercept + near_freq * log10(fc/5)`.
/// Above it: `far_slope * log10(d) + far_intercept - far_height * (log10(h_tx') + log10(h_rx'))
/// + far_freq * log10(fc/5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WinnerB1Los {
    pub near_slope: f64,
    pub near_intercept: f64,
    pub near_freq: f64,
    pub far_slope: f64,
    pub far_intercept: f64,
    pub far_height: f64,
    pub far_freq: f64,
    /// Environment height subtracted from antenna heights.
    pub env_height_m: f64,
}

impl Default for WinnerB1Los {
    fn default() -> Self {
        Self {
            near_slope: 22.7,
            near_intercept: 41.0,
            near_freq: 20.0,
            far_slope: 40.0,
            far_intercept: 9.45,
            far_height: 17.3,
            far_freq: 2.7,
            env_height_m: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub fc_ghz: f64,
    pub antenna_height_m: f64,
    /// Per end; a link gets twice this.
    pub antenna_gain_dbi: f64,
    pub noise_figure_db: f64,
    pub shadow_sigma_db: f64,
    pub noise_floor_dbm: f64,
    pub rb_bandwidth_hz: f64,
    pub min_distance_m: f64,
    pub pathloss: WinnerB1Los,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            fc_ghz: 2.0,
            antenna_height_m: 1.5,
            antenna_gain_dbi: 3.0,
            noise_figure_db: 9.0,
            shadow_sigma_db: 3.0,
            noise_floor_dbm: -114.0,
            rb_bandwidth_hz: 1e6,
            min_distance_m: 3.0,
            pathloss: WinnerB1Los::default(),
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fc_ghz", self.fc_ghz),
            ("rb_bandwidth_hz", self.rb_bandwidth_hz),
            ("min_distance_m", self.min_distance_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        if !(self.antenna_height_m > self.pathloss.env_height_m) {
            return Err(invalid("antenna must be higher than the environment height"));
        }
        if !(self.shadow_sigma_db >= 0.0 && self.noise_figure_db >= 0.0) {
            return Err(invalid("shadowing sigma and noise figure must be non-negative"));
        }
        Ok(())
    }

    pub fn breakpoint_m(&self) -> f64 {
        let h = self.antenna_height_m - self.pathloss.env_height_m;
        4.0 * h * h * self.fc_ghz * 1e9 / SPEED_OF_LIGHT
    }

    /// Sum of both antenna gains.
    pub fn link_antenna_gain_db(&self) -> f64 {
        2.0 * self.antenna_gain_dbi
    }
}

pub fn pathloss_db(d_m: f64, cfg: &ChannelConfig) -> f64 {
    let p = &cfg.pathloss;
    let d = d_m.max(cfg.min_distance_m);
    let h = cfg.antenna_height_m - p.env_height_m;
    let f = (cfg.fc_ghz / 5.0).log10();
    if d <= cfg.breakpoint_m() {
        p.near_slope * d.log10() + p.near_intercept + p.near_freq * f
    } else {
        p.far_slope * d.log10() + p.far_intercept - 2.0 * p.far_height * h.log10() + p.far_freq * f
    }
}

/// Effective per-RB noise power in milliwatts (floor plus noise figure).
pub fn noise_lin(cfg: &ChannelConfig) -> f64 {
    dbm_to_mw(cfg.noise_floor_dbm + cfg.noise_figure_db)
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// All radio randomness of one episode.
///
/// Links are indexed `source * n + destination`; per-RB arrays are laid out
/// `[link][freq][slot]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub num_sources: usize,
    pub num_destinations: usize,
    pub freqs: usize,
    pub slots: usize,
    /// Antenna gains minus pathloss, before shadowing.
    pub deterministic_db: Vec<f64>,
    pub shadow_db: Vec<f64>,
    pub fastfade_pow: Vec<f64>,
    pub gain_lin: Vec<f64>,
}

impl ChannelState {
    /// Builds a state from explicit parts, recomputing the linear gains.
    pub fn from_parts(
        num_sources: usize,
        num_destinations: usize,
        freqs: usize,
        slots: usize,
        deterministic_db: Vec<f64>,
        shadow_db: Vec<f64>,
        fastfade_pow: Vec<f64>,
    ) -> Result<Self> {
        let links = num_sources * num_destinations;
        if deterministic_db.len() != links || shadow_db.len() != links || fastfade_pow.len() != links * freqs * slots {
            return Err(Error::ShapeMismatch {
                expected: format!("{links} links x {freqs} freqs x {slots} slots"),
                found: format!(
                    "{} / {} / {} entries",
                    deterministic_db.len(),
                    shadow_db.len(),
                    fastfade_pow.len()
                ),
            });
        }
        if fastfade_pow.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(invalid("fast-fading powers must be finite and non-negative"));
        }
        let mut st = ChannelState {
            num_sources,
            num_destinations,
            freqs,
            slots,
            deterministic_db,
            shadow_db,
            fastfade_pow,
            gain_lin: Vec::new(),
        };
        st.recompute();
        Ok(st)
    }

    fn recompute(&mut self) {
        let per_link = self.freqs * self.slots;
        self.gain_lin = self
            .fastfade_pow
            .iter()
            .enumerate()
            .map(|(k, &ff)| db_to_lin(self.large_scale_db(k / per_link)) * ff)
            .collect();
    }

    /// A channel in which every gain is exactly zero.
    pub fn silent(num_sources: usize, num_destinations: usize, freqs: usize, slots: usize) -> Self {
        let links = num_sources * num_destinations;
        ChannelState {
            num_sources,
            num_destinations,
            freqs,
            slots,
            deterministic_db: vec![f64::NEG_INFINITY; links],
            shadow_db: vec![0.0; links],
            fastfade_pow: vec![0.0; links * freqs * slots],
            gain_lin: vec![0.0; links * freqs * slots],
        }
    }

    pub fn link(&self, source: usize, dest: usize) -> usize {
        source * self.num_destinations + dest
    }

    fn rb_index(&self, link: usize, freq: usize, slot: usize) -> usize {
        (link * self.freqs + freq) * self.slots + slot
    }

    /// Large-scale gain (antennas, pathloss, shadowing) of a link in dB.
    pub fn large_scale_db(&self, link: usize) -> f64 {
        self.deterministic_db[link] - self.shadow_db[link]
    }

    pub fn gain(&self, source: usize, dest: usize, freq: usize, slot: usize) -> f64 {
        self.gain_lin[self.rb_index(self.link(source, dest), freq, slot)]
    }

    pub fn fastfade(&self, source: usize, dest: usize, freq: usize, slot: usize) -> f64 {
        self.fastfade_pow[self.rb_index(self.link(source, dest), freq, slot)]
    }

    /// Fingerprint of the realized gains, used to check that paired runs
    /// share one realization.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.gain_lin.iter().flat_map(|g| g.to_bits().to_le_bytes()))
    }

    /// Writes one row per (link, freq, slot) with gain in dB.
    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "# iovsim-channel-trace v1").unwrap();
        writeln!(
            s,
            "# sources={} destinations={} freqs={} slots={}",
            self.num_sources, self.num_destinations, self.freqs, self.slots
        )
        .unwrap();
        writeln!(s, "source,destination,freq,slot,large_scale_db,fastfade_pow,gain_db").unwrap();
        for i in 0..self.num_sources {
            for j in 0..self.num_destinations {
                let link = self.link(i, j);
                for f in 0..self.freqs {
                    for t in 0..self.slots {
                        let k = self.rb_index(link, f, t);
                        writeln!(
                            s,
                            "{i},{j},{f},{t},{:?},{:?},{:?}",
                            self.large_scale_db(link),
                            self.fastfade_pow[k],
                            10.0 * self.gain_lin[k].log10()
                        )
                        .unwrap();
                    }
                }
            }
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    /// Reloads a trace written by [`ChannelState::write_trace`].
    ///
    /// The large-scale term is stored whole, so a reloaded state reports a
    /// zero shadowing component.
    pub fn read_trace<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("truncated channel trace".into()))?
                .map_err(Error::from)
        };
        if next()?.trim() != "# iovsim-channel-trace v1" {
            return Err(Error::Format("not a v1 channel trace".into()));
        }
        let dims_line = next()?;
        let mut dims = [0usize; 4];
        for (slot, kv) in dims
            .iter_mut()
            .zip(dims_line.trim_start_matches('#').split_whitespace())
        {
            *slot = kv
                .split_once('=')
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad dimension field {kv:?}")))?;
        }
        let [m, n, freqs, slots] = dims;
        next()?;
        let links = m * n;
        let mut large = vec![f64::NAN; links];
        let mut ff = vec![f64::NAN; links * freqs * slots];
        let mut rows = 0usize;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("bad trace row {line:?}"));
            if f.len() != 7 {
                return Err(bad());
            }
            let ix: Vec<usize> = f[..4]
                .iter()
                .map(|v| v.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if ix[0] >= m || ix[1] >= n || ix[2] >= freqs || ix[3] >= slots {
                return Err(bad());
            }
            let link = ix[0] * n + ix[1];
            large[link] = f[4].parse().map_err(|_| bad())?;
            ff[(link * freqs + ix[2]) * slots + ix[3]] = f[5].parse().map_err(|_| bad())?;
            rows += 1;
        }
        if rows != links * freqs * slots || ff.iter().any(|v| v.is_nan()) {
            return Err(Error::Format(format!(
                "expected {} trace rows, found {rows}",
                links * freqs * slots
            )));
        }
        ChannelState::from_parts(m, n, freqs, slots, large, vec![0.0; links], ff)
    }
}

/// Draws shadowing per link and Rayleigh fading per (link, freq, slot).
pub fn draw_channel<R: Rng + ?Sized>(
    scenario: &Scenario,
    cfg: &ChannelConfig,
    freqs: usize,
    slots: usize,
    rng: &mut R,
) -> Result<ChannelState> {
    cfg.validate()?;
    if freqs == 0 || slots == 0 {
        return Err(invalid("need at least one frequency and one slot"));
    }
    let m = scenario.num_sources();
    let n = scenario.num_destinations();
    let g = cfg.link_antenna_gain_db();
    let deterministic: Vec<f64> = scenario
        .distances()
        .into_iter()
        .map(|d| g - pathloss_db(d, cfg))
        .collect();
    let shadow = Normal::new(0.0, cfg.shadow_sigma_db).map_err(|e| invalid(e.to_string()))?;
    let shadow_db: Vec<f64> = (0..m * n).map(|_| shadow.sample(rng)).collect();
    let fastfade: Vec<f64> = (0..m * n * freqs * slots).map(|_| Exp1.sample(rng)).collect();
    ChannelState::from_parts(m, n, freqs, slots, deterministic, shadow_db, fastfade)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::scenario::{generate_vehicles, RoadConfig};

    #[test]
    fn pathloss_hand_evaluation_at_ten_meters() {
        let cfg = ChannelConfig::default();
        assert!((cfg.breakpoint_m() - 20.0 / 3.0).abs() < 1e-12);
        // 40 + 9.45 + 2*17.3*log10(2) + 2.7*log10(0.4)
        let want = 40.0 + 9.45 + 34.6 * 2f64.log10() + 2.7 * 0.4f64.log10();
        assert!((want - 58.79).abs() < 0.01);
        assert!((pathloss_db(10.0, &cfg) - want).abs() < 1e-12);
    }

    #[test]
    fn pathloss_clamps_and_increases() {
        let cfg = ChannelConfig::default();
        assert_eq!(pathloss_db(1.0, &cfg), pathloss_db(3.0, &cfg));
        assert_eq!(pathloss_db(0.0, &cfg), pathloss_db(3.0, &cfg));
        assert!(pathloss_db(100.0, &cfg) > pathloss_db(10.0, &cfg));
        let bp = cfg.breakpoint_m();
        let near: Vec<f64> = (0..50).map(|k| 3.0 + k as f64 * (bp - 3.0) / 50.0).collect();
        let far: Vec<f64> = (1..200).map(|k| bp + k as f64 * 10.0).collect();
        for branch in [near, far] {
            for w in branch.windows(2) {
                assert!(pathloss_db(w[1], &cfg) > pathloss_db(w[0], &cfg));
            }
        }
    }

    #[test]
    fn noise_power_unit_conversion() {
        let cfg = ChannelConfig::default();
        assert!((noise_lin(&cfg) / 10f64.powf(-10.5) - 1.0).abs() < 1e-12);
        assert!((noise_lin(&cfg) - 3.162e-11).abs() < 1e-14);
        let quiet = ChannelConfig {
            noise_figure_db: 0.0,
            ..cfg
        };
        assert!((noise_lin(&quiet) - 3.981e-12).abs() < 1e-15);
        assert!(noise_lin(&quiet) < noise_lin(&cfg));
    }

    fn scenario() -> Scenario {
        let mut rng = stream(3, Stream::Topology, 0);
        generate_vehicles(&RoadConfig::default(), 3, 4, &mut rng).unwrap()
    }

    #[test]
    fn deterministic_reduction_without_randomness() {
        let sc = scenario();
        let cfg = ChannelConfig {
            shadow_sigma_db: 0.0,
            ..ChannelConfig::default()
        };
        let mut rng = stream(3, Stream::Channel, 0);
        let mut ch = draw_channel(&sc, &cfg, 2, 20, &mut rng).unwrap();
        ch.fastfade_pow.iter_mut().for_each(|g| *g = 1.0);
        ch.recompute();
        let d = sc.distances();
        for i in 0..3 {
            for j in 0..4 {
                let want = 6.0 - pathloss_db(d[i * 4 + j], &cfg);
                let got = 10.0 * ch.gain(i, j, 1, 7).log10();
                assert!((got - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gain_is_large_scale_times_fading() {
        let sc = scenario();
        let cfg = ChannelConfig::default();
        let ch = draw_channel(&sc, &cfg, 2, 20, &mut stream(4, Stream::Channel, 0)).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let link = ch.link(i, j);
                for f in 0..2 {
                    for t in 0..20 {
                        let ff = ch.fastfade(i, j, f, t);
                        let g = ch.gain(i, j, f, t);
                        assert!(g.is_finite() && g >= 0.0);
                        if ff > 0.0 {
                            let db = 10.0 * (g / ff).log10();
                            assert!((db - ch.large_scale_db(link)).abs() < 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fading_power_has_unit_mean() {
        let sc = scenario();
        let cfg = ChannelConfig::default();
        let mut rng = stream(5, Stream::Channel, 0);
        let mut sum = 0.0;
        let mut count = 0usize;
        while count < 100_000 {
            let ch = draw_channel(&sc, &cfg, 2, 20, &mut rng).unwrap();
            assert_eq!(ch.fastfade_pow.len(), 12 * 2 * 20);
            sum += ch.fastfade_pow.iter().sum::<f64>();
            count += ch.fastfade_pow.len();
        }
        let mean = sum / count as f64;
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
    }

    #[test]
    fn equal_distance_links_share_deterministic_part() {
        let mut sc = scenario();
        sc.destinations[1] = sc.destinations[0].clone();
        sc.destinations[1].id = 1;
        let ch = draw_channel(&sc, &ChannelConfig::default(), 1, 1, &mut stream(6, Stream::Channel, 0)).unwrap();
        assert_eq!(ch.deterministic_db[ch.link(2, 0)], ch.deterministic_db[ch.link(2, 1)]);
    }

    #[test]
    fn finite_gains_over_the_whole_road() {
        let cfg = ChannelConfig::default();
        for k in 0..=2000 {
            let pl = pathloss_db(k as f64, &cfg);
            assert!(pl.is_finite());
            let g = db_to_lin(cfg.link_antenna_gain_db() - pl);
            assert!(g.is_finite() && g > 0.0);
        }
    }

    #[test]
    fn trace_reload_preserves_gains() {
        let sc = scenario();
        let ch = draw_channel(&sc, &ChannelConfig::default(), 2, 3, &mut stream(8, Stream::Channel, 0)).unwrap();
        let mut buf = Vec::new();
        ch.write_trace(&mut buf).unwrap();
        let back = ChannelState::read_trace(&buf[..]).unwrap();
        for (a, b) in ch.gain_lin.iter().zip(&back.gain_lin) {
            assert!((a / b - 1.0).abs() < 1e-12);
        }
        let cut = &buf[..buf.len() - 40];
        assert!(ChannelState::read_trace(cut).is_err());
    }
}
