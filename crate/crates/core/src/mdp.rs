//! Environment abstraction, trajectories and Monte-Carlo return estimation.

use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::policy::PolicyParams;
use crate::rng::{RngStream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MdpDescriptor {
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Bound on `|r|` for every reachable transition.
    pub reward_bound: f64,
}

impl MdpDescriptor {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        horizon: usize,
        gamma: f64,
        reward_bound: f64,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Input("state and action dimensions must be >= 1"));
        }
        if horizon == 0 {
            return Err(Error::Input("horizon must be >= 1"));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Input("discount must lie in [0, 1]"));
        }
        if !(reward_bound >= 0.0) {
            return Err(Error::Input("reward bound must be >= 0"));
        }
        Ok(Self {
            state_dim,
            action_dim,
            horizon,
            gamma,
            reward_bound,
        })
    }

    /// Largest possible `|G|` of a discounted return over the horizon.
    pub fn return_bound(&self) -> f64 {
        if self.gamma < 1.0 {
            self.reward_bound * (1.0 - math::powi(self.gamma, self.horizon as i32)) / (1.0 - self.gamma)
        } else {
            self.reward_bound * self.horizon as f64
        }
    }
}

/// Result of a single environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Terminal failure (Minigolf overshoot, cart leaving the track).
    pub failure: bool,
}

/// A task: initial-state distribution plus dynamics and reward.
///
/// Horizon truncation is handled by [`rollout`], not by `step`.
pub trait Environment {
    fn descriptor(&self) -> &MdpDescriptor;
    fn initial_state(&self, rng: &mut StreamRng) -> Vec<f64>;
    fn step(&self, state: &[f64], action: &[f64], rng: &mut StreamRng) -> Transition;
}

impl<E: Environment + ?Sized> Environment for &E {
    fn descriptor(&self) -> &MdpDescriptor {
        (**self).descriptor()
    }
    fn initial_state(&self, rng: &mut StreamRng) -> Vec<f64> {
        (**self).initial_state(rng)
    }
    fn step(&self, state: &[f64], action: &[f64], rng: &mut StreamRng) -> Transition {
        (**self).step(state, action, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Step {
    pub state: Vec<f64>,
    /// The action as sampled from the policy, before any clipping by the
    /// environment; the score function is evaluated on this value.
    pub action: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// True when the horizon cut the episode rather than a terminal state.
    pub truncated: bool,
    pub failed: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }
}

/// Discounted return `sum_t gamma^t r_t`.
pub fn trajectory_return(traj: &Trajectory, gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in traj.rewards() {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// Runs one episode of `params` in `env` up to the descriptor's horizon.
pub fn rollout<E: Environment + ?Sized>(
    env: &E,
    params: &PolicyParams,
    stream: RngStream,
) -> Result<Trajectory> {
    let desc = env.descriptor();
    check_dim("policy state dimension", desc.state_dim, params.state_dim)?;
    check_dim("policy action dimension", desc.action_dim, params.action_dim)?;
    let mut rng = stream.rng();
    let mut state = env.initial_state(&mut rng);
    let mut traj = Trajectory {
        steps: Vec::with_capacity(desc.horizon),
        truncated: true,
        failed: false,
    };
    for _ in 0..desc.horizon {
        let action = params.sample(&state, &mut rng)?;
        let tr = env.step(&state, &action, &mut rng);
        if !tr.reward.is_finite() || !math::all_finite(&tr.next_state) {
            return Err(Error::Numerical("environment step"));
        }
        traj.steps.push(Step {
            state: core::mem::replace(&mut state, tr.next_state),
            action,
            reward: tr.reward,
        });
        if tr.done {
            traj.truncated = false;
            traj.failed = tr.failure;
            break;
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trajectories: Vec<Trajectory>,
}

impl ReturnEstimate {
    /// Fraction of trajectories that ended in a failure state.
    pub fn failure_rate(&self) -> f64 {
        let failed = self.trajectories.iter().filter(|t| t.failed).count();
        failed as f64 / self.trajectories.len() as f64
    }
}

/// Monte-Carlo estimate of `j(theta)` from `n` rollouts.
///
/// Rollout `i` draws from `stream.derive(i)`, so two calls with the same
/// stream and different parameters use common random numbers.
pub fn estimate_return<E: Environment + ?Sized>(
    env: &E,
    params: &PolicyParams,
    n: usize,
    gamma: f64,
    stream: RngStream,
) -> Result<ReturnEstimate> {
    if n == 0 {
        return Err(Error::Input("batch size must be >= 1"));
    }
    let trajectories = (0..n as u64)
        .map(|i| rollout(env, params, stream.derive(i)))
        .collect::<Result<Vec<_>>>()?;
    let returns: Vec<f64> = trajectories
        .iter()
        .map(|t| trajectory_return(t, gamma))
        .collect();
    let (mean, stderr) = math::mean_stderr(&returns);
    Ok(ReturnEstimate {
        mean,
        stderr,
        trajectories,
    })
}
