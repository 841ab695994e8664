//! Baseline step-size rules and optimizers.
//!
//! Fixed, decaying and metagrad schedules pick the length of a normalized
//! natural-gradient step. Adam and RMSprop act directly on the vanilla
//! gradient, in ascent orientation.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::eval::{nga_output, ControlOutput, Controller, LearningState};
use crate::math;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-7;
pub const RMSPROP_RHO: f64 = 0.9;
pub const RMSPROP_EPSILON: f64 = 1e-7;

pub fn fixed_step(alpha: f64, _t: usize) -> f64 {
    alpha
}

/// `alpha / t` for `t >= 1`.
pub fn decay_step(alpha: f64, t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::Input("decaying step size is defined for t >= 1"));
    }
    Ok(alpha / t as f64)
}

/// `h_t = h0 * factor^t`.
pub fn exp_decay_step(h0: f64, factor: f64, t: usize) -> f64 {
    h0 * math::powi(factor, t as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl Adam {
    pub fn new(alpha: f64, dim: usize) -> Self {
        Self {
            alpha,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            m: alloc::vec![0.0; dim],
            v: alloc::vec![0.0; dim],
            t: 0,
        }
    }

    /// One bias-corrected Adam ascent step; returns the new parameters.
    pub fn update(&mut self, theta: &[f64], grad: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - math::powi(self.beta1, self.t as i32);
        let c2 = 1.0 - math::powi(self.beta2, self.t as i32);
        theta
            .iter()
            .zip(grad)
            .enumerate()
            .map(|(i, (th, g))| {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                th + self.alpha * m_hat / (math::sqrt(v_hat) + self.epsilon)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub alpha: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub v: Vec<f64>,
}

impl RmsProp {
    pub fn new(alpha: f64, dim: usize) -> Self {
        Self {
            alpha,
            rho: RMSPROP_RHO,
            epsilon: RMSPROP_EPSILON,
            v: alloc::vec![0.0; dim],
        }
    }

    pub fn update(&mut self, theta: &[f64], grad: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(grad)
            .enumerate()
            .map(|(i, (th, g))| {
                self.v[i] = self.rho * self.v[i] + (1.0 - self.rho) * g * g;
                th + self.alpha * g / (math::sqrt(self.v[i]) + self.epsilon)
            })
            .collect()
    }
}

/// Sign applied to the similarity term of the metagrad step-size update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MetagradSign {
    /// `h' = h - beta * sim`
    #[default]
    Subtract,
    /// `h' = h + beta * sim`
    Add,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metagrad {
    pub h: f64,
    pub beta: f64,
    pub mu: f64,
    pub sign: MetagradSign,
    /// Accumulated trace of `d theta / d h`.
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetagradOutcome {
    pub h: f64,
    /// True when a zero gradient made the update a no-op.
    pub skipped: bool,
}

impl Metagrad {
    pub fn new(h0: f64, beta: f64, mu: f64, sign: MetagradSign, dim: usize) -> Self {
        Self {
            h: h0,
            beta,
            mu,
            sign,
            z: alloc::vec![0.0; dim],
        }
    }

    /// `z' = mu z + g_prev/|g_prev|`, `h' = max(0, h -/+ beta (g_new/|g_new|) . z')`.
    pub fn update(&mut self, g_prev: &[f64], g_new: &[f64]) -> MetagradOutcome {
        let (np, nn) = (math::norm(g_prev), math::norm(g_new));
        if np == 0.0 || nn == 0.0 {
            return MetagradOutcome {
                h: self.h,
                skipped: true,
            };
        }
        for (z, g) in self.z.iter_mut().zip(g_prev) {
            *z = self.mu * *z + g / np;
        }
        let sim: f64 = g_new.iter().zip(&self.z).map(|(g, z)| g / nn * z).sum();
        let delta = self.beta * sim;
        let h = match self.sign {
            MetagradSign::Subtract => self.h - delta,
            MetagradSign::Add => self.h + delta,
        };
        self.h = h.max(0.0);
        MetagradOutcome {
            h: self.h,
            skipped: false,
        }
    }
}

/// Baseline controller configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum OptimizerKind {
    Fixed { alpha: f64 },
    Decay { alpha: f64 },
    ExpDecay { h0: f64, factor: f64 },
    Adam { alpha: f64 },
    RmsProp { alpha: f64 },
    Metagrad { h0: f64, beta: f64, mu: f64, sign: MetagradSign },
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Fixed { .. } => "fixed",
            OptimizerKind::Decay { .. } => "decay",
            OptimizerKind::ExpDecay { .. } => "exp-decay",
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::RmsProp { .. } => "rmsprop",
            OptimizerKind::Metagrad { .. } => "metagrad",
        }
    }

    /// The tuned initial rate of this configuration.
    pub fn alpha(&self) -> f64 {
        match *self {
            OptimizerKind::Fixed { alpha }
            | OptimizerKind::Decay { alpha }
            | OptimizerKind::Adam { alpha }
            | OptimizerKind::RmsProp { alpha } => alpha,
            OptimizerKind::ExpDecay { h0, .. } | OptimizerKind::Metagrad { h0, .. } => h0,
        }
    }

    /// Same configuration with its initial rate replaced.
    pub fn with_alpha(self, a: f64) -> Self {
        match self {
            OptimizerKind::Fixed { .. } => OptimizerKind::Fixed { alpha: a },
            OptimizerKind::Decay { .. } => OptimizerKind::Decay { alpha: a },
            OptimizerKind::Adam { .. } => OptimizerKind::Adam { alpha: a },
            OptimizerKind::RmsProp { .. } => OptimizerKind::RmsProp { alpha: a },
            OptimizerKind::ExpDecay { factor, .. } => OptimizerKind::ExpDecay { h0: a, factor },
            OptimizerKind::Metagrad { beta, mu, sign, .. } => OptimizerKind::Metagrad { h0: a, beta, mu, sign },
        }
    }

    pub fn build(&self, dim: usize) -> OptimizerState {
        match *self {
            OptimizerKind::Fixed { alpha } => OptimizerState::Fixed { alpha },
            OptimizerKind::Decay { alpha } => OptimizerState::Decay { alpha },
            OptimizerKind::ExpDecay { h0, factor } => OptimizerState::ExpDecay { h0, factor },
            OptimizerKind::Adam { alpha } => OptimizerState::Adam(Adam::new(alpha, dim)),
            OptimizerKind::RmsProp { alpha } => OptimizerState::RmsProp(RmsProp::new(alpha, dim)),
            OptimizerKind::Metagrad { h0, beta, mu, sign } => OptimizerState::Metagrad {
                state: Metagrad::new(h0, beta, mu, sign, dim),
                previous: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Fixed { alpha: f64 },
    Decay { alpha: f64 },
    ExpDecay { h0: f64, factor: f64 },
    Adam(Adam),
    RmsProp(RmsProp),
    Metagrad {
        state: Metagrad,
        /// Natural gradient of the previous update.
        previous: Option<Vec<f64>>,
    },
}

impl Controller for OptimizerState {
    fn next(&mut self, s: &LearningState<'_>) -> Result<ControlOutput> {
        let direct = |theta: Vec<f64>| {
            let h = math::distance(&theta, &s.params.theta);
            ControlOutput {
                params: s.params.with_theta(theta),
                h,
            }
        };
        match self {
            OptimizerState::Fixed { alpha } => nga_output(s, fixed_step(*alpha, s.step)),
            OptimizerState::Decay { alpha } => nga_output(s, decay_step(*alpha, s.step + 1)?),
            OptimizerState::ExpDecay { h0, factor } => nga_output(s, exp_decay_step(*h0, *factor, s.step)),
            OptimizerState::Adam(adam) => Ok(direct(adam.update(&s.params.theta, &s.gradient.vanilla.vector))),
            OptimizerState::RmsProp(rms) => Ok(direct(rms.update(&s.params.theta, &s.gradient.vanilla.vector))),
            OptimizerState::Metagrad { state, previous } => {
                let current = &s.gradient.natural.vector;
                if let Some(prev) = previous.as_deref() {
                    state.update(prev, current);
                }
                *previous = Some(current.clone());
                nga_output(s, state.h)
            }
        }
    }
}
