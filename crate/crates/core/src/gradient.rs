//! Policy-gradient estimation and the normalized natural-gradient update.

use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::mdp::Trajectory;
use crate::policy::PolicyParams;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradientEstimate {
    pub vector: Vec<f64>,
    pub batch_size: usize,
    pub norm: f64,
    /// Per-coordinate standard error across trajectories; empty when not
    /// available (natural gradients).
    pub stderr: Vec<f64>,
}

impl GradientEstimate {
    pub fn new(vector: Vec<f64>, batch_size: usize, stderr: Vec<f64>) -> Self {
        let norm = math::norm(&vector);
        Self {
            vector,
            batch_size,
            norm,
            stderr,
        }
    }

    pub fn zeros(len: usize, batch_size: usize) -> Self {
        Self::new(alloc::vec![0.0; len], batch_size, Vec::new())
    }
}

/// Baseline subtracted from rewards inside the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Baseline {
    #[default]
    None,
    /// Per-time-step batch mean of the discounted reward.
    MeanReward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradientSettings {
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub damping: f64,
    pub baseline: Baseline,
}

impl Default for GradientSettings {
    fn default() -> Self {
        Self {
            cg_iters: 10,
            cg_tol: 1e-10,
            damping: 1e-3,
            baseline: Baseline::None,
        }
    }
}

fn check_batch(trajectories: &[Trajectory], params: &PolicyParams) -> Result<()> {
    if trajectories.is_empty() {
        return Err(Error::Input("empty trajectory batch"));
    }
    for step in trajectories.iter().flat_map(|t| &t.steps) {
        check_dim("trajectory state", params.state_dim, step.state.len())?;
        check_dim("trajectory action", params.action_dim, step.action.len())?;
    }
    Ok(())
}

fn mean_reward_baseline(trajectories: &[Trajectory], gamma: f64) -> Vec<f64> {
    let horizon = trajectories.iter().map(Trajectory::len).max().unwrap_or(0);
    let mut sums = alloc::vec![0.0; horizon];
    let mut counts = alloc::vec![0usize; horizon];
    for traj in trajectories {
        let mut discount = 1.0;
        for (t, r) in traj.rewards().enumerate() {
            sums[t] += discount * r;
            counts[t] += 1;
            discount *= gamma;
        }
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
}

/// GPOMDP estimate of the return gradient:
/// the batch mean of `sum_t (sum_{t' <= t} score_t') gamma^t (r_t - b_t)`.
pub fn pgt_gradient(
    trajectories: &[Trajectory],
    params: &PolicyParams,
    gamma: f64,
    baseline: Baseline,
) -> Result<GradientEstimate> {
    check_batch(trajectories, params)?;
    let dim = params.len();
    let baseline = match baseline {
        Baseline::None => Vec::new(),
        Baseline::MeanReward => mean_reward_baseline(trajectories, gamma),
    };
    let n = trajectories.len();
    let mut per_traj = Vec::with_capacity(n);
    let mut cumulative = alloc::vec![0.0; dim];
    for traj in trajectories {
        cumulative.iter_mut().for_each(|c| *c = 0.0);
        let mut g = alloc::vec![0.0; dim];
        let mut discount = 1.0;
        for (t, step) in traj.steps.iter().enumerate() {
            params.accumulate_log_gradient(&step.state, &step.action, 1.0, &mut cumulative);
            let b = baseline.get(t).copied().unwrap_or(0.0);
            math::axpy(discount * step.reward - b, &cumulative, &mut g);
            discount *= gamma;
        }
        per_traj.push(g);
    }
    let mut mean = alloc::vec![0.0; dim];
    for g in &per_traj {
        math::axpy(1.0, g, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let stderr = if n > 1 {
        (0..dim)
            .map(|i| {
                let var = per_traj
                    .iter()
                    .map(|g| (g[i] - mean[i]) * (g[i] - mean[i]))
                    .sum::<f64>()
                    / (n - 1) as f64;
                math::sqrt(var / n as f64)
            })
            .collect()
    } else {
        alloc::vec![0.0; dim]
    };
    if !math::all_finite(&mean) {
        return Err(Error::Numerical("policy gradient"));
    }
    Ok(GradientEstimate::new(mean, n, stderr))
}

/// Empirical Fisher information of a batch, applied matrix-free.
///
/// `apply(v) = (1/M) sum_k score_k (score_k . v) + damping v`, where the sum
/// runs over all `M` state-action pairs of the batch.
#[derive(Debug, Clone)]
pub struct FisherOperator {
    scores: Vec<Vec<f64>>,
    dim: usize,
    damping: f64,
}

impl FisherOperator {
    pub fn new(trajectories: &[Trajectory], params: &PolicyParams, damping: f64) -> Result<Self> {
        check_batch(trajectories, params)?;
        if !(damping >= 0.0) {
            return Err(Error::Input("damping must be >= 0"));
        }
        let scores = trajectories
            .iter()
            .flat_map(|t| &t.steps)
            .map(|s| {
                let mut out = alloc::vec![0.0; params.len()];
                params.accumulate_log_gradient(&s.state, &s.action, 1.0, &mut out);
                out
            })
            .collect();
        Ok(Self {
            scores,
            dim: params.len(),
            damping,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = math::scaled(self.damping, v);
        if self.scores.is_empty() {
            return out;
        }
        let inv_m = 1.0 / self.scores.len() as f64;
        for score in &self.scores {
            let c = math::dot(score, v) * inv_m;
            math::axpy(c, score, &mut out);
        }
        out
    }
}

/// `(F + damping I) v` for the batch Fisher `F`.
pub fn fisher_vector_product(
    trajectories: &[Trajectory],
    params: &PolicyParams,
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    check_dim("Fisher-vector product operand", params.len(), v.len())?;
    Ok(FisherOperator::new(trajectories, params, damping)?.apply(v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True residual `||A x - b||`.
    pub residual: f64,
}

/// Conjugate gradient for a symmetric positive definite operator.
///
/// Stops once the recursive residual satisfies `||r|| <= tol ||b||` or after
/// `max_iters` iterations.
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], max_iters: usize, tol: f64) -> Result<CgSolution>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = alloc::vec![0.0; n];
    let b_norm = math::norm(b);
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = math::dot(&r, &r);
    let mut iterations = 0;
    while iterations < max_iters && math::sqrt(rs) > tol * b_norm {
        let ap = apply(&p);
        let curvature = math::dot(&p, &ap);
        if !curvature.is_finite() {
            return Err(Error::Numerical("conjugate gradient"));
        }
        if curvature <= 0.0 {
            break;
        }
        let alpha = rs / curvature;
        math::axpy(alpha, &p, &mut x);
        math::axpy(-alpha, &ap, &mut r);
        let rs_next = math::dot(&r, &r);
        iterations += 1;
        if rs_next == 0.0 {
            break;
        }
        let beta = rs_next / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_next;
    }
    if !math::all_finite(&x) {
        return Err(Error::Numerical("conjugate gradient"));
    }
    let ax = apply(&x);
    let residual = math::sqrt(ax.iter().zip(b).map(|(a, bi)| (a - bi) * (a - bi)).sum());
    Ok(CgSolution {
        x,
        iterations,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaturalGradient {
    pub vanilla: GradientEstimate,
    pub natural: GradientEstimate,
    pub cg_iterations: usize,
    pub residual: f64,
    /// Set when the vanilla gradient vanished and no direction was computed.
    pub degenerate: bool,
}

/// Solves `(F + damping I) g = grad j` on the batch with conjugate gradient.
pub fn natural_gradient(
    trajectories: &[Trajectory],
    params: &PolicyParams,
    gamma: f64,
    settings: &GradientSettings,
) -> Result<NaturalGradient> {
    let vanilla = pgt_gradient(trajectories, params, gamma, settings.baseline)?;
    let n = trajectories.len();
    if vanilla.norm == 0.0 {
        return Ok(NaturalGradient {
            natural: GradientEstimate::zeros(params.len(), n),
            vanilla,
            cg_iterations: 0,
            residual: 0.0,
            degenerate: true,
        });
    }
    let fisher = FisherOperator::new(trajectories, params, settings.damping)?;
    let sol = conjugate_gradient(|v| fisher.apply(v), &vanilla.vector, settings.cg_iters, settings.cg_tol)?;
    Ok(NaturalGradient {
        natural: GradientEstimate::new(sol.x, n, Vec::new()),
        vanilla,
        cg_iterations: sol.iterations,
        residual: sol.residual,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgaStep {
    pub params: PolicyParams,
    /// False when the direction was zero and the parameters were left as is.
    pub moved: bool,
}

/// `theta + h g / ||g||`; a zero direction leaves `theta` unchanged.
pub fn nga_update(params: &PolicyParams, h: f64, direction: &[f64]) -> Result<NgaStep> {
    check_dim("update direction", params.len(), direction.len())?;
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::Input("step size must be finite and >= 0"));
    }
    let norm = math::norm(direction);
    if norm == 0.0 || !norm.is_finite() {
        return Ok(NgaStep {
            params: params.clone(),
            moved: false,
        });
    }
    let scale = h / norm;
    let theta = params
        .theta
        .iter()
        .zip(direction)
        .map(|(t, g)| t + scale * g)
        .collect();
    Ok(NgaStep {
        params: params.with_theta(theta),
        moved: h > 0.0,
    })
}
