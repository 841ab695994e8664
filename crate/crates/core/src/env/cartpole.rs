//! Cart-pole balancing and swing-up, integrated with explicit Euler.
//!
//! State is `(x, x_dot, phi, phi_dot)`. The Gaussian policy output is turned
//! into a bang-bang force: `+F` for positive actions, `-F` otherwise. The pole
//! length follows the classic convention of measuring from pivot to centre of
//! mass.

use alloc::vec::Vec;

use crate::math;
use crate::mdp::Transition;
use crate::rng::StreamRng;

pub const HORIZON: usize = 100;
pub const SWINGUP_HORIZON: usize = 200;
pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const FORCE: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const ANGLE_LIMIT: f64 = 12.0 * 2.0 * core::f64::consts::PI / 360.0;
pub const TRACK_LIMIT: f64 = 2.4;
pub const SWINGUP_TRACK_LIMIT: f64 = 3.0;
pub const SWINGUP_POLE_LENGTH: f64 = 0.5;
pub const SWINGUP_CRASH_REWARD: f64 = -100.0;
pub const START_NOISE: f64 = 0.05;

/// One Euler step of the cart-pole equations of motion under `force`.
pub fn dynamics(state: &[f64], force: f64, pole_mass: f64, pole_length: f64) -> [f64; 4] {
    let (x, x_dot, phi, phi_dot) = (state[0], state[1], state[2], state[3]);
    let total_mass = CART_MASS + pole_mass;
    let pole_moment = pole_mass * pole_length;
    let (sin, cos) = (math::sin(phi), math::cos(phi));
    let temp = (force + pole_moment * phi_dot * phi_dot * sin) / total_mass;
    let phi_acc = (GRAVITY * sin - cos * temp)
        / (pole_length * (4.0 / 3.0 - pole_mass * cos * cos / total_mass));
    let x_acc = temp - pole_moment * phi_acc * cos / total_mass;
    [
        x + TAU * x_dot,
        x_dot + TAU * x_acc,
        phi + TAU * phi_dot,
        phi_dot + TAU * phi_acc,
    ]
}

pub fn force_of(action: &[f64]) -> f64 {
    if action[0] > 0.0 {
        FORCE
    } else {
        -FORCE
    }
}

pub fn initial_state(rng: &mut StreamRng) -> Vec<f64> {
    (0..4).map(|_| rng.uniform(-START_NOISE, START_NOISE)).collect()
}

pub fn swingup_initial_state(rng: &mut StreamRng) -> Vec<f64> {
    let mut s = initial_state(rng);
    s[2] += core::f64::consts::PI;
    s
}

/// Balancing task: `+1` for every step that ends with the pole up and the cart
/// on the track, `0` on the failing step.
pub fn step(state: &[f64], action: &[f64], pole_mass: f64, pole_length: f64) -> Transition {
    let next = dynamics(state, force_of(action), pole_mass, pole_length);
    let failed = next[0].abs() > TRACK_LIMIT || next[2].abs() > ANGLE_LIMIT;
    Transition {
        next_state: next.to_vec(),
        reward: if failed { 0.0 } else { 1.0 },
        done: failed,
        failure: failed,
    }
}

/// Swing-up task: reward `cos(phi)`, or `-100` when the cart leaves the track.
pub fn swingup_step(state: &[f64], action: &[f64], pole_mass: f64) -> Transition {
    let next = dynamics(state, force_of(action), pole_mass, SWINGUP_POLE_LENGTH);
    let crashed = next[0].abs() > SWINGUP_TRACK_LIMIT;
    Transition {
        reward: if crashed {
            SWINGUP_CRASH_REWARD
        } else {
            math::cos(next[2])
        },
        next_state: next.to_vec(),
        done: crashed,
        failure: crashed,
    }
}
