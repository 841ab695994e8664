//! Point agent moving in the plane towards a goal given by the context.

use alloc::vec::Vec;

use crate::math;
use crate::mdp::Transition;

pub const HORIZON: usize = 10;
pub const MAX_SPEED: f64 = 0.1;
pub const GOAL_THRESHOLD: f64 = 0.01;
/// Positions stay within `HORIZON * MAX_SPEED * sqrt(2)` of the origin and goals
/// within `0.5 * sqrt(2)`, which bounds the distance reward.
pub const REWARD_BOUND: f64 = (HORIZON as f64 * MAX_SPEED + 0.5) * core::f64::consts::SQRT_2;

pub fn initial_state() -> Vec<f64> {
    alloc::vec![0.0, 0.0]
}

/// Moves by the clipped velocity; the reward is the negative distance from the
/// goal measured after the move.
pub fn step(state: &[f64], action: &[f64], goal: &[f64]) -> Transition {
    let next_state: Vec<f64> = state
        .iter()
        .zip(action)
        .map(|(s, a)| s + a.clamp(-MAX_SPEED, MAX_SPEED))
        .collect();
    let dist = math::distance(&next_state, goal);
    Transition {
        next_state,
        reward: -dist,
        done: dist < GOAL_THRESHOLD,
        failure: false,
    }
}
