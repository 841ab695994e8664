//! Lipschitz constants of values and gradients with respect to the context,
//! and an empirical check of the resulting return bound on Navigation2D.
//!
//! Every calculator that divides by `1 - gamma * L_P * (1 + L_pi)` refuses
//! inputs where that quantity is not positive.

use alloc::vec::Vec;

use crate::env::{Context, EnvInstance, Family};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::mdp::estimate_return;
use crate::policy::PolicyParams;
use crate::rng::{tag, RngStream};

/// Moduli of the environment and policy; all non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LipschitzConstants {
    /// Transition modulus in (state, action).
    pub l_p: f64,
    /// Reward modulus in (state, action).
    pub l_r: f64,
    pub l_pi: f64,
    /// Transition modulus in the context.
    pub l_omega_p: f64,
    /// Reward modulus in the context.
    pub l_omega_r: f64,
    pub gamma: f64,
    /// Bound on each coordinate of the score.
    pub m_theta: f64,
    /// State-action modulus of the score.
    pub l_grad_log_pi: f64,
    /// Parametric policy modulus.
    pub l_pi_theta: f64,
}

impl LipschitzConstants {
    fn discount(&self) -> Result<()> {
        if (0.0..1.0).contains(&self.gamma) {
            Ok(())
        } else {
            Err(Error::Discount(self.gamma))
        }
    }

    /// `1 - gamma * L_P * (1 + pi)` for a given policy modulus.
    fn contraction(&self, pi: f64) -> Result<f64> {
        self.discount()?;
        let k = self.gamma * self.l_p * (1.0 + pi);
        if k < 1.0 {
            Ok(1.0 - k)
        } else {
            Err(Error::Contraction(k))
        }
    }
}

/// State value modulus `L_r (1 + L_pi) / (1 - gamma L_P (1 + L_pi))`.
pub fn l_v_pi(c: &LipschitzConstants) -> Result<f64> {
    Ok(c.l_r * (1.0 + c.l_pi) / c.contraction(c.l_pi)?)
}

/// Action value modulus `L_r / (1 - gamma L_P (1 + L_pi))`.
pub fn l_q_state_action(c: &LipschitzConstants) -> Result<f64> {
    Ok(c.l_r / c.contraction(c.l_pi)?)
}

/// Context modulus of the action value and of the return:
/// `(L_wr + gamma L_wP L_V) / (1 - gamma)`.
pub fn l_q_context(c: &LipschitzConstants) -> Result<f64> {
    let v = l_v_pi(c)?;
    Ok((c.l_omega_r + c.gamma * c.l_omega_p * v) / (1.0 - c.gamma))
}

/// Context modulus of the discounted state distribution:
/// `gamma L_wP / (1 - gamma L_P (1 + L_pi_theta))`.
pub fn l_delta(c: &LipschitzConstants) -> Result<f64> {
    Ok(c.gamma * c.l_omega_p / c.contraction(c.l_pi_theta)?)
}

/// `R_max / (1 - gamma) * L_grad_log_pi + M_theta * L_q`.
pub fn l_eta(c: &LipschitzConstants, r_max: f64, l_q: f64) -> Result<f64> {
    c.discount()?;
    Ok(r_max / (1.0 - c.gamma) * c.l_grad_log_pi + c.m_theta * l_q)
}

/// Context modulus of the return gradient:
/// `L_eta (1 + L_pi_theta) L_delta + M_theta L_wQ`.
pub fn l_grad_j(c: &LipschitzConstants, l_eta: f64, l_delta: f64, l_q_context: f64) -> f64 {
    l_eta * (1.0 + c.l_pi_theta) * l_delta + c.m_theta * l_q_context
}

/// Constants of Navigation2D: the reward is the negative distance to the
/// goal, so it is 1-Lipschitz in the goal, and transitions ignore the goal.
pub fn nav2d_constants(gamma: f64) -> LipschitzConstants {
    LipschitzConstants {
        l_omega_r: 1.0,
        l_omega_p: 0.0,
        gamma,
        ..LipschitzConstants::default()
    }
}

/// One context pair of [`verify_return_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairCheck {
    pub pair: u64,
    pub distance: f64,
    pub gap: f64,
    pub bound: f64,
    /// Statistical allowance `4 * (se + se')`.
    pub slack: f64,
    pub pass: bool,
}

impl PairCheck {
    /// Room left under the bound (negative on violation).
    pub fn margin(&self) -> f64 {
        self.bound + self.slack - self.gap
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundReport {
    pub l_q_context: f64,
    pub checks: Vec<PairCheck>,
}

impl BoundReport {
    pub fn violations(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    pub fn violation_rate(&self) -> f64 {
        self.violations() as f64 / self.checks.len().max(1) as f64
    }
}

/// Checks `|j_w - j_w'| <= L_wQ * |w - w'|` for `pairs` random goal pairs
/// on Navigation2D, with both returns estimated from `n` rollouts sharing
/// their random numbers.
pub fn verify_return_bound<P: Parallelism>(
    policy: &PolicyParams,
    pairs: usize,
    n: usize,
    stream: RngStream,
    exec: &P,
) -> Result<BoundReport> {
    let family = Family::Nav2d;
    let gamma = family.descriptor().gamma;
    let l = l_q_context(&nav2d_constants(gamma))?;
    let checks = exec.map_indexed(pairs, |i| {
        let s = stream.child(tag::PAIR, i as u64);
        let mut rng = s.derive(tag::CONTEXT).rng();
        let a = family.sample_context(&mut rng);
        let b = family.sample_context(&mut rng);
        check_pair(i as u64, policy, a, b, l, n, s.derive(tag::ROLLOUT))
    });
    Ok(BoundReport {
        l_q_context: l,
        checks: checks.into_iter().collect::<Result<_>>()?,
    })
}

fn check_pair(
    pair: u64,
    policy: &PolicyParams,
    a: Context,
    b: Context,
    l: f64,
    n: usize,
    rollouts: RngStream,
) -> Result<PairCheck> {
    let distance = a.distance(&b);
    let ea = EnvInstance::new(Family::Nav2d, a)?;
    let eb = EnvInstance::new(Family::Nav2d, b)?;
    let gamma = ea.descriptor.gamma;
    let ja = estimate_return(&ea, policy, n, gamma, rollouts)?;
    let jb = estimate_return(&eb, policy, n, gamma, rollouts)?;
    let gap = (ja.mean - jb.mean).abs();
    let bound = l * distance;
    let slack = 4.0 * (ja.stderr + jb.stderr);
    Ok(PairCheck {
        pair,
        distance,
        gap,
        bound,
        slack,
        pass: gap <= bound + slack,
    })
}
