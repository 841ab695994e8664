//! The inner learning loop shared by every step-size controller.
//!
//! A task fixes a context, an initial policy and the random stream of every
//! batch. Running the same task under different controllers therefore uses
//! common random numbers at each learning step.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::env::Context;
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::gradient::{nga_update, NaturalGradient};
use crate::math;
use crate::meta::{assess, FamilySpec, InnerSettings};
use crate::policy::PolicyParams;
use crate::rng::{tag, RngStream};

/// What a controller sees before choosing an update.
#[derive(Debug, Clone, Copy)]
pub struct LearningState<'a> {
    pub step: usize,
    pub params: &'a PolicyParams,
    pub context: &'a Context,
    pub gradient: &'a NaturalGradient,
    pub j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub params: PolicyParams,
    /// Step size used; for optimizers that do not take normalized steps this
    /// is the length of the parameter change.
    pub h: f64,
}

/// Chooses the next policy parameters from the current learning state.
pub trait Controller {
    fn next(&mut self, state: &LearningState<'_>) -> Result<ControlOutput>;
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn next(&mut self, state: &LearningState<'_>) -> Result<ControlOutput> {
        (**self).next(state)
    }
}

/// Normalized natural-gradient step of length `h`.
pub fn nga_output(state: &LearningState<'_>, h: f64) -> Result<ControlOutput> {
    let step = nga_update(state.params, h, &state.gradient.natural.vector)?;
    Ok(ControlOutput {
        params: step.params,
        h,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Task {
    pub index: u64,
    pub context: Context,
    pub initial: PolicyParams,
    /// Stream of the batches; step `t` uses `stream.derive(t)`.
    pub stream: RngStream,
}

/// `count` tasks drawn from `stream`; task `i` depends only on `(stream, i)`.
pub fn sample_tasks(spec: &FamilySpec, count: usize, stream: RngStream) -> Result<Vec<Task>> {
    (0..count as u64)
        .map(|i| {
            let s = stream.child(tag::PAIR, i);
            Ok(Task {
                index: i,
                context: spec.sample_context(&mut s.derive(tag::CONTEXT).rng()),
                initial: spec.initial_policy(&mut s.derive(tag::INIT_POLICY).rng())?,
                stream: s.derive(tag::BATCH),
            })
        })
        .collect()
}

/// Learning curve of one task.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskCurve {
    /// Estimated return at `theta_0 .. theta_T` (`T + 1` entries).
    pub returns: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Failed trajectories in each batch (`T + 1` entries).
    pub failures: Vec<usize>,
    /// Step sizes used by the `T` updates.
    pub step_sizes: Vec<f64>,
    pub batch_size: usize,
}

impl TaskCurve {
    pub fn final_return(&self) -> f64 {
        *self.returns.last().expect("curve holds the initial return")
    }
}

/// Runs `steps` updates of `controller` on `task`.
pub fn run_task<C: Controller>(
    spec: &FamilySpec,
    settings: &InnerSettings,
    task: &Task,
    steps: usize,
    mut controller: C,
) -> Result<TaskCurve> {
    let env = spec.instance(task.context.clone())?;
    let mut params = task.initial.clone();
    let mut curve = TaskCurve {
        returns: Vec::with_capacity(steps + 1),
        stderrs: Vec::with_capacity(steps + 1),
        failures: Vec::with_capacity(steps + 1),
        step_sizes: Vec::with_capacity(steps),
        batch_size: settings.batch_size,
    };
    for t in 0..=steps {
        let a = assess(&env, &params, settings, task.stream.derive(t as u64))?;
        curve.returns.push(a.j);
        curve.stderrs.push(a.j_stderr);
        curve.failures.push(a.failures);
        if t == steps {
            break;
        }
        let out = controller.next(&LearningState {
            step: t,
            params: &params,
            context: &task.context,
            gradient: &a.gradient,
            j: a.j,
        })?;
        if !math::all_finite(&out.params.theta) {
            return Err(Error::Numerical("controller update"));
        }
        curve.step_sizes.push(out.h);
        params = out.params;
    }
    Ok(curve)
}

/// Runs every task with a fresh controller from `make`.
pub fn run_tasks<P, C, F>(
    spec: &FamilySpec,
    settings: &InnerSettings,
    tasks: &[Task],
    steps: usize,
    make: F,
    exec: &P,
) -> Result<Vec<TaskCurve>>
where
    P: Parallelism,
    C: Controller,
    F: Fn(&Task) -> Result<C> + Sync + Send,
{
    exec.map_indexed(tasks.len(), |i| {
        let task = &tasks[i];
        run_task(spec, settings, task, steps, make(task)?)
    })
    .into_iter()
    .collect()
}

/// Per-step statistics over tasks.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurveSummary {
    pub tasks: usize,
    pub mean_return: Vec<f64>,
    /// Standard error of the mean over tasks.
    pub stderr: Vec<f64>,
    pub mean_h: Vec<f64>,
    /// Mean fraction of failed trajectories per batch.
    pub failure_rate: Vec<f64>,
}

impl CurveSummary {
    pub fn final_mean(&self) -> f64 {
        *self.mean_return.last().expect("non-empty summary")
    }

    pub fn final_stderr(&self) -> f64 {
        *self.stderr.last().expect("non-empty summary")
    }
}

pub fn summarize(curves: &[TaskCurve]) -> Result<CurveSummary> {
    let first = curves.first().ok_or(Error::Input("no curves to summarize"))?;
    let len = first.returns.len();
    if curves.iter().any(|c| c.returns.len() != len) {
        return Err(Error::Input("curves of different lengths"));
    }
    let column = |f: &dyn Fn(&TaskCurve) -> f64| -> (f64, f64) {
        let v: Vec<f64> = curves.iter().map(f).collect();
        math::mean_stderr(&v)
    };
    let (mut mean_return, mut stderr, mut failure_rate) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..len {
        let (m, s) = column(&|c| c.returns[t]);
        mean_return.push(m);
        stderr.push(s);
        failure_rate.push(column(&|c| c.failures[t] as f64 / c.batch_size as f64).0);
    }
    let mean_h = (0..len - 1).map(|t| column(&|c| c.step_sizes[t]).0).collect();
    Ok(CurveSummary {
        tasks: curves.len(),
        mean_return,
        stderr,
        mean_h,
        failure_rate,
    })
}
