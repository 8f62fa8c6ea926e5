//! Online policies and the episode loop that drives them.

use ndarray::ArrayView1;
use rand::Rng;

use crate::channel::ChannelState;
use crate::dqn::net::{argmax, QNetwork};
use crate::env::Env;
use crate::error::Result;
use crate::phy::EpisodeMetrics;
use crate::rng::SimRng;
use crate::scenario::Scenario;

pub trait Policy {
    /// Chooses an action index for the vehicle the environment is asking about.
    fn act(&mut self, env: &Env, observation: &[f64]) -> Result<usize>;
}

/// Uniform over the whole action space.
pub struct RandomPolicy {
    pub rng: SimRng,
}

impl Policy for RandomPolicy {
    fn act(&mut self, env: &Env, _observation: &[f64]) -> Result<usize> {
        Ok(self.rng.random_range(0..env.actions().len()))
    }
}

/// Argmax of a Q-network, lowest index on ties.
pub struct GreedyPolicy<'a> {
    pub net: &'a QNetwork,
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, _env: &Env, observation: &[f64]) -> Result<usize> {
        let q = self.net.forward(observation)?;
        Ok(argmax(ArrayView1::from(&q[..])))
    }
}

/// Plays one full episode and returns its delivery metrics.
pub fn run_episode<P: Policy + ?Sized>(
    env: &mut Env,
    scenario: &Scenario,
    channel: ChannelState,
    policy: &mut P,
) -> Result<EpisodeMetrics> {
    let mut obs = env.reset(scenario, channel)?;
    while !env.is_terminal() {
        let a = policy.act(env, &obs)?;
        obs = env.step(a)?.observation;
    }
    Ok(env.metrics().expect("episode was reset"))
}
