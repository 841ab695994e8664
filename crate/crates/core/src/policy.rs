//! Gaussian linear policies, `a ~ N(b + W s, sigma^2 I)`.
//!
//! Parameters are flattened bias-first per action dimension:
//! `[b_0, w_00, .., w_0(s-1), b_1, w_10, ..]`. The same layout is used by the
//! gradient estimators, the Fisher operator and the meta-state features.

use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    /// Fixed exploration noise. Zero gives a deterministic policy whose score
    /// function is taken to be zero.
    pub sigma: f64,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl PolicyParams {
    pub fn new(theta: Vec<f64>, sigma: f64, state_dim: usize, action_dim: usize) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Input("policy dimensions must be positive"));
        }
        check_dim("policy parameters", param_len(state_dim, action_dim), theta.len())?;
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Input("policy sigma must be finite and non-negative"));
        }
        if !math::all_finite(&theta) {
            return Err(Error::Numerical("policy parameters"));
        }
        Ok(Self {
            theta,
            sigma,
            state_dim,
            action_dim,
        })
    }

    pub fn zeros(sigma: f64, state_dim: usize, action_dim: usize) -> Result<Self> {
        Self::new(
            alloc::vec![0.0; param_len(state_dim, action_dim)],
            sigma,
            state_dim,
            action_dim,
        )
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        debug_assert_eq!(theta.len(), self.theta.len());
        Self {
            theta,
            ..self.clone()
        }
    }

    fn row(&self, d: usize) -> &[f64] {
        let w = self.state_dim + 1;
        &self.theta[d * w..(d + 1) * w]
    }

    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.state_dim, state.len())?;
        Ok(self.mean_unchecked(state))
    }

    pub(crate) fn mean_unchecked(&self, state: &[f64]) -> Vec<f64> {
        (0..self.action_dim)
            .map(|d| {
                let row = self.row(d);
                row[0] + math::dot(&row[1..], state)
            })
            .collect()
    }

    /// `mean + sigma * z` with `z` standard normal per action dimension.
    pub fn sample(&self, state: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        let mut a = self.mean(state)?;
        for ad in &mut a {
            *ad += self.sigma * rng.normal();
        }
        Ok(a)
    }

    /// Score function `d/dtheta log pi(a|s)` in the parameter layout.
    pub fn log_gradient(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.state_dim, state.len())?;
        check_dim("action", self.action_dim, action.len())?;
        let mut out = alloc::vec![0.0; self.len()];
        self.accumulate_log_gradient(state, action, 1.0, &mut out);
        Ok(out)
    }

    /// `out += scale * d/dtheta log pi(a|s)`; dimensions must already match.
    pub(crate) fn accumulate_log_gradient(
        &self,
        state: &[f64],
        action: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        if self.sigma == 0.0 {
            return;
        }
        let inv_var = 1.0 / (self.sigma * self.sigma);
        let w = self.state_dim + 1;
        let mean = self.mean_unchecked(state);
        for d in 0..self.action_dim {
            let c = scale * (action[d] - mean[d]) * inv_var;
            let slot = &mut out[d * w..(d + 1) * w];
            slot[0] += c;
            for (o, s) in slot[1..].iter_mut().zip(state) {
                *o += c * s;
            }
        }
    }

    /// Gaussian log-density of `action` under this policy at `state`.
    pub fn log_density(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        if self.sigma == 0.0 {
            return Err(Error::Input("log-density undefined for sigma = 0"));
        }
        let mean = self.mean(state)?;
        check_dim("action", self.action_dim, action.len())?;
        let var = self.sigma * self.sigma;
        let norm = -0.5 * math::ln(2.0 * core::f64::consts::PI * var);
        Ok(mean
            .iter()
            .zip(action)
            .map(|(m, a)| norm - (a - m) * (a - m) / (2.0 * var))
            .sum())
    }
}

/// Number of parameters of a linear policy with bias.
pub const fn param_len(state_dim: usize, action_dim: usize) -> usize {
    action_dim * (state_dim + 1)
}
