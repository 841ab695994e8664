//! Contextual environment families.
//!
//! Each family maps a context vector to a concrete MDP. Contexts are drawn
//! uniformly from a per-family box.

use alloc::vec::Vec;

use crate::error::{check_dim, Result};
use crate::math;
use crate::mdp::{Environment, MdpDescriptor, Transition};
use crate::rng::StreamRng;

pub mod cartpole;
pub mod minigolf;
pub mod nav2d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Family {
    Nav2d,
    Minigolf,
    Cartpole,
    Swingup,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Nav2d, Family::Minigolf, Family::Cartpole, Family::Swingup];

    pub fn name(self) -> &'static str {
        match self {
            Family::Nav2d => "nav2d",
            Family::Minigolf => "minigolf",
            Family::Cartpole => "cartpole",
            Family::Swingup => "swingup",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(name))
    }

    /// Per-coordinate `(low, high)` bounds of the context distribution.
    pub fn context_box(self) -> &'static [(f64, f64)] {
        match self {
            Family::Nav2d => &[(-0.5, 0.5), (-0.5, 0.5)],
            // (putter length, friction)
            Family::Minigolf => &[(0.7, 1.0), (0.065, 0.196)],
            // (pole mass, pole length)
            Family::Cartpole => &[(0.1, 2.0), (0.5, 1.5)],
            // (pole mass,)
            Family::Swingup => &[(0.1, 2.0)],
        }
    }

    pub fn context_dim(self) -> usize {
        self.context_box().len()
    }

    /// Default MDP description of the family.
    pub fn descriptor(self) -> MdpDescriptor {
        let (state_dim, action_dim, horizon, gamma, reward_bound) = match self {
            Family::Nav2d => (2, 2, nav2d::HORIZON, 0.99, nav2d::REWARD_BOUND),
            Family::Minigolf => (1, 1, minigolf::HORIZON, 0.99, 100.0),
            Family::Cartpole => (4, 1, cartpole::HORIZON, 0.99, 1.0),
            Family::Swingup => (4, 1, cartpole::SWINGUP_HORIZON, 0.99, 100.0),
        };
        MdpDescriptor {
            state_dim,
            action_dim,
            horizon,
            gamma,
            reward_bound,
        }
    }

    pub fn sample_context(self, rng: &mut StreamRng) -> Context {
        Context(
            self.context_box()
                .iter()
                .map(|&(lo, hi)| rng.uniform(lo, hi))
                .collect(),
        )
    }

    /// Midpoint of the context box.
    pub fn center_context(self) -> Context {
        Context(
            self.context_box()
                .iter()
                .map(|&(lo, hi)| 0.5 * (lo + hi))
                .collect(),
        )
    }
}

impl core::fmt::Display for Family {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Task identifier within a family.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Context(pub Vec<f64>);

impl Context {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &Context) -> f64 {
        math::distance(&self.0, &other.0)
    }
}

/// A family member fixed to one context.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvInstance {
    pub family: Family,
    pub context: Context,
    pub descriptor: MdpDescriptor,
}

impl EnvInstance {
    pub fn new(family: Family, context: Context) -> Result<Self> {
        check_dim("context", family.context_dim(), context.0.len())?;
        Ok(Self {
            family,
            context,
            descriptor: family.descriptor(),
        })
    }

    /// Overrides horizon and discount of the family default.
    pub fn with_horizon(mut self, horizon: usize, gamma: f64) -> Result<Self> {
        let d = self.descriptor;
        self.descriptor = MdpDescriptor::new(d.state_dim, d.action_dim, horizon, gamma, d.reward_bound)?;
        Ok(self)
    }
}

impl Environment for EnvInstance {
    fn descriptor(&self) -> &MdpDescriptor {
        &self.descriptor
    }

    fn initial_state(&self, rng: &mut StreamRng) -> Vec<f64> {
        match self.family {
            Family::Nav2d => nav2d::initial_state(),
            Family::Minigolf => minigolf::initial_state(rng),
            Family::Cartpole => cartpole::initial_state(rng),
            Family::Swingup => cartpole::swingup_initial_state(rng),
        }
    }

    fn step(&self, state: &[f64], action: &[f64], rng: &mut StreamRng) -> Transition {
        let c = &self.context.0;
        match self.family {
            Family::Nav2d => nav2d::step(state, action, c),
            Family::Minigolf => minigolf::step(state, action, minigolf::Green::new(c[0], c[1]), rng),
            Family::Cartpole => cartpole::step(state, action, c[0], c[1]),
            Family::Swingup => cartpole::swingup_step(state, action, c[0]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn nav2d_contexts_stay_in_box() {
        let mut rng = RngStream::new(1).rng();
        for _ in 0..10_000 {
            let c = Family::Nav2d.sample_context(&mut rng);
            assert!(c.0[0].abs() <= 0.5 && c.0[1].abs() <= 0.5);
        }
    }

    #[test]
    fn minigolf_friction_in_range() {
        let mut rng = RngStream::new(2).rng();
        for _ in 0..10_000 {
            let c = Family::Minigolf.sample_context(&mut rng);
            assert!((0.065..=0.196).contains(&c.0[1]));
            assert!((0.7..=1.0).contains(&c.0[0]));
        }
    }

    #[test]
    fn cartpole_context_mean_is_box_center() {
        let mut rng = RngStream::new(3).rng();
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let c = Family::Cartpole.sample_context(&mut rng);
            sum[0] += c.0[0];
            sum[1] += c.0[1];
        }
        let center = Family::Cartpole.center_context();
        for i in 0..2 {
            let m = sum[i] / n as f64;
            assert!((m - center.0[i]).abs() < 0.01 * center.0[i], "{i}: {m}");
        }
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(Family::from_name(f.name()), Some(f));
        }
        assert_eq!(Family::from_name("cheetah"), None);
    }

    #[test]
    fn instance_checks_context_length() {
        assert!(EnvInstance::new(Family::Swingup, Context(alloc::vec![0.5, 0.5])).is_err());
    }
}
