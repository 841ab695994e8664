//! The step-size meta-MDP: meta-states, meta rewards and dataset generation.
//!
//! A meta-state concatenates the policy parameters, the natural gradient at
//! those parameters and (optionally) the task context. A meta-action is a step
//! size `h`, the transition is one normalized natural-gradient update, and the
//! meta reward is the resulting change in estimated return.

use alloc::vec::Vec;

use crate::env::{Context, EnvInstance, Family};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::gradient::{natural_gradient, nga_update, GradientSettings, NaturalGradient};
use crate::math;
use crate::mdp::{estimate_return, MdpDescriptor};
use crate::policy::{param_len, PolicyParams};
use crate::rng::{tag, RngStream, StreamRng};

/// Interval of admissible step sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepSizeSpace {
    pub low: f64,
    pub high: f64,
}

impl StepSizeSpace {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low >= 0.0 && high >= low && high.is_finite()) {
            return Err(Error::Input("step-size interval must satisfy 0 <= low <= high"));
        }
        Ok(Self { low, high })
    }

    pub fn contains(&self, h: f64) -> bool {
        (self.low..=self.high).contains(&h)
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        rng.uniform(self.low, self.high)
    }

    /// `points` evenly spaced step sizes covering the interval.
    pub fn grid(&self, points: usize) -> Vec<f64> {
        math::linspace(self.low, self.high, points)
    }
}

/// Distribution of initial policy parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum InitialPolicy {
    /// Independent zero-mean Gaussian coordinates with the given variance.
    Gaussian { variance: f64 },
    /// Independent uniform coordinates, one `(low, high)` per parameter.
    Uniform { bounds: Vec<(f64, f64)> },
}

impl InitialPolicy {
    pub fn sample(&self, len: usize, rng: &mut StreamRng) -> Vec<f64> {
        match self {
            InitialPolicy::Gaussian { variance } => {
                let std = math::sqrt(*variance);
                (0..len).map(|_| std * rng.normal()).collect()
            }
            InitialPolicy::Uniform { bounds } => bounds
                .iter()
                .map(|&(lo, hi)| rng.uniform(lo, hi))
                .collect(),
        }
    }
}

/// Everything needed to instantiate tasks and policies of one family.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FamilySpec {
    pub family: Family,
    pub descriptor: MdpDescriptor,
    pub sigma: f64,
    pub step_sizes: StepSizeSpace,
    pub init: InitialPolicy,
    /// When set, every task uses this context instead of sampling one.
    pub fixed_context: Option<Context>,
}

impl FamilySpec {
    pub fn for_family(family: Family) -> Self {
        let (sigma, high, init) = match family {
            Family::Nav2d => (1.001, 8.0, InitialPolicy::Gaussian { variance: 0.1 }),
            // parameters are laid out (bias b, weight w)
            Family::Minigolf => (
                0.1,
                1.0,
                InitialPolicy::Uniform {
                    bounds: alloc::vec![(-2.0, 3.5), (-1.0, 2.0)],
                },
            ),
            Family::Cartpole => (1.001, 10.0, InitialPolicy::Gaussian { variance: 0.01 }),
            Family::Swingup => (1.001, 0.5, InitialPolicy::Gaussian { variance: 0.1 }),
        };
        Self {
            family,
            descriptor: family.descriptor(),
            sigma,
            step_sizes: StepSizeSpace { low: 0.0, high },
            init,
            fixed_context: None,
        }
    }

    pub fn param_len(&self) -> usize {
        param_len(self.descriptor.state_dim, self.descriptor.action_dim)
    }

    pub fn sample_context(&self, rng: &mut StreamRng) -> Context {
        match &self.fixed_context {
            Some(c) => c.clone(),
            None => self.family.sample_context(rng),
        }
    }

    pub fn initial_policy(&self, rng: &mut StreamRng) -> Result<PolicyParams> {
        let theta = self.init.sample(self.param_len(), rng);
        PolicyParams::new(
            theta,
            self.sigma,
            self.descriptor.state_dim,
            self.descriptor.action_dim,
        )
    }

    pub fn instance(&self, context: Context) -> Result<EnvInstance> {
        let mut env = EnvInstance::new(self.family, context)?;
        env.descriptor = self.descriptor;
        Ok(env)
    }
}

/// Batch size and gradient settings of the inner policy-gradient loop.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InnerSettings {
    pub batch_size: usize,
    pub gradient: GradientSettings,
}

/// Return and gradient estimates at one policy, from a single batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub j: f64,
    pub j_stderr: f64,
    /// Trajectories in the batch that ended in a failure state.
    pub failures: usize,
    pub gradient: NaturalGradient,
}

/// Samples one batch under `params` and estimates both `j` and the natural
/// gradient from it.
pub fn assess(
    env: &EnvInstance,
    params: &PolicyParams,
    settings: &InnerSettings,
    stream: RngStream,
) -> Result<Assessment> {
    let gamma = env.descriptor.gamma;
    let est = estimate_return(env, params, settings.batch_size, gamma, stream)?;
    let gradient = natural_gradient(&est.trajectories, params, gamma, &settings.gradient)?;
    Ok(Assessment {
        j: est.mean,
        j_stderr: est.stderr,
        failures: est.trajectories.iter().filter(|t| t.failed).count(),
        gradient,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetaState {
    pub theta: Vec<f64>,
    pub nat_grad: Vec<f64>,
    pub context: Vec<f64>,
}

impl MetaState {
    /// Regression features `[theta, nat_grad, context?]`.
    pub fn features(&self, include_context: bool) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.feature_len(include_context));
        f.extend_from_slice(&self.theta);
        f.extend_from_slice(&self.nat_grad);
        if include_context {
            f.extend_from_slice(&self.context);
        }
        f
    }

    pub fn feature_len(&self, include_context: bool) -> usize {
        2 * self.theta.len() + if include_context { self.context.len() } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetaTransition {
    pub episode_id: u64,
    pub step_id: u64,
    pub x: MetaState,
    pub h: f64,
    pub l: f64,
    pub x_next: MetaState,
    pub j_before: f64,
    pub j_after: f64,
}

/// Return improvement produced by one update.
pub fn meta_reward(j_before: f64, j_after: f64) -> f64 {
    j_after - j_before
}

/// Generated transitions plus the episodes dropped because a rollout failed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub rows: Vec<MetaTransition>,
    pub gaps: Vec<(u64, Error)>,
}

impl Dataset {
    fn collect(chunks: Vec<Result<Vec<MetaTransition>>>) -> Self {
        let mut out = Dataset::default();
        for (k, chunk) in chunks.into_iter().enumerate() {
            match chunk {
                Ok(rows) => out.rows.extend(rows),
                Err(e) => out.gaps.push((k as u64, e)),
            }
        }
        out
    }
}

fn meta_state(params: &PolicyParams, a: &Assessment, context: &Context) -> MetaState {
    MetaState {
        theta: params.theta.clone(),
        nat_grad: a.gradient.natural.vector.clone(),
        context: context.0.clone(),
    }
}

/// One meta-episode of the trajectory method: `T` chained random-step updates.
pub fn generate_episode(
    spec: &FamilySpec,
    settings: &InnerSettings,
    episode_id: u64,
    steps: usize,
    master: RngStream,
) -> Result<Vec<MetaTransition>> {
    let stream = master.child(tag::EPISODE, episode_id);
    let context = spec.sample_context(&mut stream.derive(tag::CONTEXT).rng());
    let mut params = spec.initial_policy(&mut stream.derive(tag::INIT_POLICY).rng())?;
    let env = spec.instance(context.clone())?;
    let batches = stream.derive(tag::BATCH);
    let mut h_rng = stream.derive(tag::STEP_SIZE).rng();

    let mut current = assess(&env, &params, settings, batches.derive(0))?;
    let mut rows = Vec::with_capacity(steps);
    for t in 0..steps {
        let h = spec.step_sizes.sample(&mut h_rng);
        let next_params = nga_update(&params, h, &current.gradient.natural.vector)?.params;
        let next = assess(&env, &next_params, settings, batches.derive(t as u64 + 1))?;
        rows.push(MetaTransition {
            episode_id,
            step_id: t as u64,
            x: meta_state(&params, &current, &context),
            h,
            l: meta_reward(current.j, next.j),
            x_next: meta_state(&next_params, &next, &context),
            j_before: current.j,
            j_after: next.j,
        });
        params = next_params;
        current = next;
    }
    Ok(rows)
}

/// Trajectory-method dataset of `episodes * steps` rows, ordered by
/// `(episode_id, step_id)`.
pub fn generate_dataset_trajectory<P: Parallelism>(
    spec: &FamilySpec,
    settings: &InnerSettings,
    episodes: usize,
    steps: usize,
    master: RngStream,
    exec: &P,
) -> Result<Dataset> {
    if episodes == 0 || steps == 0 {
        return Err(Error::Input("episodes and steps must be >= 1"));
    }
    let chunks = exec.map_indexed(episodes, |k| {
        generate_episode(spec, settings, k as u64, steps, master)
    });
    Ok(Dataset::collect(chunks))
}

/// A single generative-method tuple: context, policy and step size all fresh.
pub fn generate_sample(
    spec: &FamilySpec,
    settings: &InnerSettings,
    sample_id: u64,
    master: RngStream,
) -> Result<MetaTransition> {
    let stream = master.child(tag::EPISODE, sample_id);
    let context = spec.sample_context(&mut stream.derive(tag::CONTEXT).rng());
    let params = spec.initial_policy(&mut stream.derive(tag::INIT_POLICY).rng())?;
    let h = spec.step_sizes.sample(&mut stream.derive(tag::STEP_SIZE).rng());
    let env = spec.instance(context.clone())?;
    let batches = stream.derive(tag::BATCH);
    let before = assess(&env, &params, settings, batches.derive(0))?;
    let next_params = nga_update(&params, h, &before.gradient.natural.vector)?.params;
    let after = assess(&env, &next_params, settings, batches.derive(1))?;
    Ok(MetaTransition {
        episode_id: sample_id,
        step_id: 0,
        x: meta_state(&params, &before, &context),
        h,
        l: meta_reward(before.j, after.j),
        x_next: meta_state(&next_params, &after, &context),
        j_before: before.j,
        j_after: after.j,
    })
}

/// Generative-method dataset of `samples` independent rows.
pub fn generate_dataset_generative<P: Parallelism>(
    spec: &FamilySpec,
    settings: &InnerSettings,
    samples: usize,
    master: RngStream,
    exec: &P,
) -> Result<Dataset> {
    if samples == 0 {
        return Err(Error::Input("sample count must be >= 1"));
    }
    let chunks = exec.map_indexed(samples, |k| {
        generate_sample(spec, settings, k as u64, master).map(|row| alloc::vec![row])
    });
    Ok(Dataset::collect(chunks))
}
