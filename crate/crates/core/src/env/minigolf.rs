//! One-dimensional minigolf putt with noisy shot velocity.
//!
//! The context is `(putter length, friction coefficient)`. A shot of force `a`
//! leaves the putter at `v = a * l^2 * (1 + eps)`; the ball holes out when
//! `v_min <= v <= v_max`, flies off the green above `v_max` and otherwise rolls
//! `v^2 / (2 d)` metres towards the hole.

use alloc::vec::Vec;

use crate::math;
use crate::mdp::Transition;
use crate::rng::StreamRng;

pub const HORIZON: usize = 20;
pub const GRAVITY: f64 = 9.81;
pub const BALL_RADIUS: f64 = 0.02135;
pub const HOLE_DIAMETER: f64 = 0.10;
pub const MIN_FORCE: f64 = 1e-5;
pub const MAX_FORCE: f64 = 10.0;
pub const MAX_START_DISTANCE: f64 = 20.0;
/// Standard deviation of the multiplicative shot noise.
pub const NOISE_STD: f64 = 0.5;
pub const OVERSHOOT_REWARD: f64 = -100.0;
pub const MISS_REWARD: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Green {
    pub putter_length: f64,
    pub friction: f64,
}

impl Green {
    pub fn new(putter_length: f64, friction: f64) -> Self {
        Self {
            putter_length,
            friction,
        }
    }

    pub fn deceleration(&self) -> f64 {
        5.0 / 7.0 * self.friction * GRAVITY
    }

    /// Slowest velocity that reaches the hole from distance `x`.
    pub fn min_velocity(&self, x: f64) -> f64 {
        math::sqrt(2.0 * self.deceleration() * x)
    }

    /// Fastest velocity that still drops into the hole from distance `x`.
    pub fn max_velocity(&self, x: f64) -> f64 {
        let lip = 2.0 * HOLE_DIAMETER - BALL_RADIUS;
        let vmin = self.min_velocity(x);
        math::sqrt(lip * lip * GRAVITY / (2.0 * BALL_RADIUS) + vmin * vmin)
    }
}

pub fn initial_state(rng: &mut StreamRng) -> Vec<f64> {
    alloc::vec![rng.uniform(0.0, MAX_START_DISTANCE)]
}

/// Outcome of a shot leaving the putter at velocity `v` from distance `x`.
pub fn shot(x: f64, v: f64, green: Green) -> Transition {
    let v = v.max(0.0);
    if v > green.max_velocity(x) {
        Transition {
            next_state: alloc::vec![x],
            reward: OVERSHOOT_REWARD,
            done: true,
            failure: true,
        }
    } else if v >= green.min_velocity(x) {
        Transition {
            next_state: alloc::vec![0.0],
            reward: 0.0,
            done: true,
            failure: false,
        }
    } else {
        Transition {
            next_state: alloc::vec![x - v * v / (2.0 * green.deceleration())],
            reward: MISS_REWARD,
            done: false,
            failure: false,
        }
    }
}

pub fn step(state: &[f64], action: &[f64], green: Green, rng: &mut StreamRng) -> Transition {
    let force = action[0].clamp(MIN_FORCE, MAX_FORCE);
    let eps = NOISE_STD * rng.normal();
    let v = force * green.putter_length * green.putter_length * (1.0 + eps);
    shot(state[0], v, green)
}
