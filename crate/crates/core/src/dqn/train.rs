//! Training loop, exploration schedule and greedy inference.

use ndarray::ArrayView1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::net::{argmax, row_max, stack_rows, QNetwork};
use super::replay::{Experience, ReplayMemory};
use crate::env::Env;
use crate::error::{invalid, Error, Result};
use crate::phy::EpisodeMetrics;
use crate::policy::{run_episode, GreedyPolicy};
use crate::rng::{stream, Stream};
use crate::world::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub lr: f64,
    pub batch: usize,
    /// Gradient updates between target-network copies.
    pub target_period: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the episodes over which epsilon decays.
    pub eps_anneal_frac: f64,
    pub capacity: usize,
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub priority_eps: f64,
    /// Stored experiences required before the first update.
    pub warmup: usize,
    pub hidden: Vec<usize>,
    pub double_q: bool,
    pub avg_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 3000,
            lr: 1e-5,
            batch: 32,
            target_period: 500,
            eps_start: 1.0,
            eps_end: 0.02,
            eps_anneal_frac: 0.8,
            capacity: 100_000,
            alpha: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            priority_eps: 1e-3,
            warmup: 1000,
            hidden: vec![256, 128, 120],
            double_q: false,
            avg_window: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(invalid("train for at least one episode"));
        }
        if !(self.lr > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if !(0.0 < self.eps_end && self.eps_end <= self.eps_start && self.eps_start <= 1.0) {
            return Err(invalid("need 0 < eps_end <= eps_start <= 1"));
        }
        if !(0.0..=1.0).contains(&self.eps_anneal_frac) {
            return Err(invalid("anneal fraction must lie in [0, 1]"));
        }
        if self.batch == 0 || self.capacity < self.batch || self.target_period == 0 || self.avg_window == 0 {
            return Err(invalid(
                "batch, capacity, target period and window must be positive (capacity >= batch)",
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(invalid("hidden layers must be non-empty"));
        }
        Ok(())
    }
}

/// Exploration rate: linear from `eps_start` at episode 0 down to `eps_end`
/// at episode `ceil(frac * episodes)`, flat afterwards.
pub fn epsilon(episode: usize, cfg: &TrainConfig) -> f64 {
    let end = (cfg.eps_anneal_frac * cfg.episodes as f64).ceil();
    if end <= 0.0 || episode as f64 >= end {
        return cfg.eps_end;
    }
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * episode as f64 / end
}

/// Importance-sampling exponent, linear over the training run.
pub fn beta(episode: usize, cfg: &TrainConfig) -> f64 {
    let span = cfg.episodes.saturating_sub(1).max(1) as f64;
    let frac = (episode as f64 / span).min(1.0);
    cfg.beta_start + (cfg.beta_end - cfg.beta_start) * frac
}

/// Bootstrapped target `r + gamma * max_a Q_target(s', a)`, or `r` when
/// terminal. Micro-steps inside a slot are not discounted.
pub fn td_target(target: &QNetwork, exp: &Experience, gamma: f64) -> Result<f64> {
    if exp.terminal {
        return Ok(exp.reward);
    }
    let next: Vec<f64> = exp.next_obs.iter().map(|&v| v as f64).collect();
    let q = target.forward(&next)?;
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let g = if exp.slot_boundary { gamma } else { 1.0 };
    Ok(exp.reward + g * best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub episode: usize,
    pub ret: f64,
    pub moving_avg: Option<f64>,
    pub epsilon: f64,
    pub loss_mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: QNetwork,
    pub log: Vec<LogRow>,
    pub updates: u64,
    /// How often each action was taken during training.
    pub action_counts: Vec<u64>,
}

/// Trains on episodes `0..cfg.episodes` of `world`.
pub fn train(world: &World, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(world, cfg, |_| {})
}

pub fn train_with_progress(
    world: &World,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let sim = world.config();
    let gamma = sim.env.gamma;
    let mut env = Env::new(sim.env.clone(), sim.channel)?;
    let obs_dim = env.obs_dim();
    let n_actions = env.actions().len();
    let seed = world.seed();

    let mut net = QNetwork::new(obs_dim, &cfg.hidden, n_actions, &mut stream(seed, Stream::Init, 0));
    let mut target = net.clone();
    let mut opt = Adam::new(&net, cfg.lr);
    let mut memory = ReplayMemory::new(cfg.capacity, cfg.alpha, cfg.priority_eps);
    let mut explore = stream(seed, Stream::Exploration, 0);
    let mut replay_rng = stream(seed, Stream::Replay, 0);

    let mut log = Vec::with_capacity(cfg.episodes);
    let mut returns = Vec::with_capacity(cfg.episodes);
    let mut updates: u64 = 0;
    let mut action_counts = vec![0u64; n_actions];
    let warm = cfg.warmup.max(cfg.batch);

    for episode in 0..cfg.episodes {
        let (scenario, channel) = world.episode(episode)?;
        let eps = epsilon(episode, cfg);
        let b = beta(episode, cfg);
        let mut obs = env.reset(&scenario, channel)?;
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;

        while !env.is_terminal() {
            let action = if explore.random::<f64>() < eps {
                explore.random_range(0..n_actions)
            } else {
                let q = net.forward(&obs)?;
                argmax(ArrayView1::from(&q[..]))
            };
            action_counts[action] += 1;
            let step = env.step(action)?;
            memory.push(Experience {
                obs: obs.iter().map(|&v| v as f32).collect(),
                action,
                reward: step.reward,
                next_obs: step.observation.iter().map(|&v| v as f32).collect(),
                terminal: step.terminal,
                slot_boundary: step.slot_resolved,
            });
            obs = step.observation;

            if memory.len() < warm {
                continue;
            }
            let Some(sample) = memory.sample(cfg.batch, b, &mut replay_rng) else {
                continue;
            };
            let batch: Vec<&Experience> = sample.indices.iter().map(|&i| memory.get(i)).collect();
            let x = stack_rows(batch.iter().map(|e| &e.obs[..]), obs_dim);
            let next = stack_rows(batch.iter().map(|e| &e.next_obs[..]), obs_dim);
            let q_next_t = target.forward_batch(next.view())?;
            let bootstrap: Vec<f64> = if cfg.double_q {
                let q_next_o = net.forward_batch(next.view())?;
                q_next_o
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, r)| q_next_t[[i, argmax(r)]])
                    .collect()
            } else {
                row_max(&q_next_t)
            };
            let targets: Vec<f64> = batch
                .iter()
                .zip(&bootstrap)
                .map(|(e, &nb)| {
                    if e.terminal {
                        e.reward
                    } else {
                        e.reward + if e.slot_boundary { gamma } else { 1.0 } * nb
                    }
                })
                .collect();
            let actions: Vec<usize> = batch.iter().map(|e| e.action).collect();
            let back = net
                .backward(x.view(), &actions, &targets, &sample.weights)
                .map_err(|e| match e {
                    Error::TrainingDivergence { detail, .. } => Error::TrainingDivergence {
                        episode,
                        update: updates,
                        detail,
                    },
                    other => other,
                })?;
            opt.update(&mut net, &back.grads);
            memory.update_priorities(&sample.indices, &back.td_errors);
            updates += 1;
            loss_sum += back.loss;
            loss_n += 1;
            if updates.is_multiple_of(cfg.target_period) {
                target = net.clone();
            }
        }
        if !net.is_finite() {
            return Err(Error::TrainingDivergence {
                episode,
                update: updates,
                detail: "non-finite parameters".into(),
            });
        }

        let ret = env.episode_return();
        returns.push(ret);
        let w = cfg.avg_window;
        let moving_avg = (returns.len() >= w).then(|| returns[returns.len() - w..].iter().sum::<f64>() / w as f64);
        let row = LogRow {
            episode,
            ret,
            moving_avg,
            epsilon: eps,
            loss_mean: (loss_n > 0).then(|| loss_sum / loss_n as f64),
        };
        progress(&row);
        log.push(row);
    }
    Ok(TrainOutcome {
        net,
        log,
        updates,
        action_counts,
    })
}

/// Greedy evaluation on the given episode indices of `world`.
pub fn infer(net: &QNetwork, world: &World, episodes: &[usize]) -> Result<Vec<EpisodeMetrics>> {
    let sim = world.config();
    let proto = Env::new(sim.env.clone(), sim.channel)?;
    if net.input_dim() != proto.obs_dim() || net.num_actions() != proto.actions().len() {
        return Err(Error::ShapeMismatch {
            expected: format!("network {}->{}", proto.obs_dim(), proto.actions().len()),
            found: format!("network {}->{}", net.input_dim(), net.num_actions()),
        });
    }
    let one = |k: usize| -> Result<EpisodeMetrics> {
        let mut env = proto.clone();
        let (sc, ch) = world.episode(k)?;
        run_episode(&mut env, &sc, ch, &mut GreedyPolicy { net })
    };
    crate::par::map_ordered(episodes, one)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::SimConfig;

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(epsilon(0, &cfg), 1.0);
        assert!((epsilon(1200, &cfg) - 0.51).abs() < 1e-12);
        assert_eq!(epsilon(2400, &cfg), 0.02);
        assert_eq!(epsilon(2999, &cfg), 0.02);
        let mut prev = f64::INFINITY;
        for e in 0..3000 {
            let v = epsilon(e, &cfg);
            assert!(v <= prev && (0.02..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn beta_anneals_to_one() {
        let cfg = TrainConfig::default();
        assert_eq!(beta(0, &cfg), 0.4);
        assert!((beta(2999, &cfg) - 1.0).abs() < 1e-12);
    }

    fn zero_net() -> QNetwork {
        QNetwork::new(2, &[3], 4, &mut stream(0, Stream::Init, 0)).zeros_like()
    }

    fn exp(reward: f64, terminal: bool) -> Experience {
        Experience {
            obs: vec![0.0, 0.0],
            action: 0,
            reward,
            next_obs: vec![0.1, 0.2],
            terminal,
            slot_boundary: true,
        }
    }

    #[test]
    fn td_targets() {
        let mut net = zero_net();
        assert_eq!(td_target(&net, &exp(1.0, true), 1.0).unwrap(), 1.0);
        net.value.b[0] = 0.5;
        assert_eq!(td_target(&net, &exp(1.0, false), 0.0).unwrap(), 1.0);
        assert_eq!(td_target(&net, &exp(1.0, false), 1.0).unwrap(), 1.5);
    }

    fn tiny_cfg(episodes: usize) -> TrainConfig {
        TrainConfig {
            episodes,
            warmup: 64,
            batch: 8,
            capacity: 500,
            target_period: 20,
            hidden: vec![16, 8],
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let world = World::new(SimConfig::default(), 5).unwrap();
        let a = train(&world, &tiny_cfg(6)).unwrap();
        let b = train(&world, &tiny_cfg(6)).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.net, b.net);
        assert!(a.updates > 0);
        assert!(a.log.iter().all(|r| r.moving_avg.is_none()));
    }

    #[test]
    fn full_exploration_is_uniform() {
        let world = World::new(SimConfig::default(), 6).unwrap();
        let cfg = TrainConfig {
            eps_end: 1.0,
            ..tiny_cfg(100)
        };
        let out = train(&world, &cfg).unwrap();
        let total: u64 = out.action_counts.iter().sum();
        assert_eq!(total, 100 * 60);
        let expected = total as f64 / 120.0;
        let chi2: f64 = out
            .action_counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // upper 0.1% point of chi-square with 119 degrees of freedom
        assert!(chi2 < 173.0, "chi2 {chi2}");
    }

    #[test]
    fn zero_network_picks_first_action() {
        let world = World::new(SimConfig::default(), 7).unwrap();
        let env = Env::new(world.config().env.clone(), world.config().channel).unwrap();
        let net = QNetwork::new(env.obs_dim(), &[8], 120, &mut stream(0, Stream::Init, 0)).zeros_like();
        let res = infer(&net, &world, &[0, 1, 2]).unwrap();
        // action 0 is silence
        assert!(res.iter().all(|m| m.total_delivered() == 0));
        let wrong = QNetwork::new(10, &[8], 120, &mut stream(0, Stream::Init, 0));
        assert!(matches!(infer(&wrong, &world, &[0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            eps_end: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            eps_end: 1.1,
            eps_start: 1.2,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
