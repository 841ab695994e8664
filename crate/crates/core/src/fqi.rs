//! Fitted Q-iteration over meta-transitions.
//!
//! Each iteration regresses `o = l + gamma * max_h Q_prev(x', h)` on the
//! inputs `(x, h)` with two tree ensembles that differ only in their seed.
//! Their predictions are blended as `lambda * min + (1 - lambda) * max`, both
//! inside the target and when acting greedily.

use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::eval::{
    nga_output, run_task, run_tasks, summarize, ControlOutput, Controller, CurveSummary,
    LearningState, Task,
};
use crate::exec::Parallelism;
use crate::math;
use crate::meta::{FamilySpec, InnerSettings, MetaTransition, StepSizeSpace};
use crate::optim::OptimizerState;
use crate::rng::{tag, RngStream};
use crate::trees::{Forest, Matrix, TreeParams};

pub const GRID_POINTS: usize = 101;
pub const DEFAULT_LAMBDA: f64 = 0.75;

/// Regression view of a dataset: state features, step size, reward and
/// next-state features, one entry per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct FqiData {
    pub states: Matrix,
    pub h: Vec<f64>,
    pub l: Vec<f64>,
    pub next_states: Matrix,
}

impl FqiData {
    pub fn new(states: Matrix, h: Vec<f64>, l: Vec<f64>, next_states: Matrix) -> Result<Self> {
        let n = states.rows();
        if n == 0 {
            return Err(Error::Input("empty FQI dataset"));
        }
        check_dim("step sizes", n, h.len())?;
        check_dim("meta rewards", n, l.len())?;
        check_dim("next states", n, next_states.rows())?;
        check_dim("next-state features", states.cols(), next_states.cols())?;
        Ok(Self {
            states,
            h,
            l,
            next_states,
        })
    }

    pub fn from_transitions(rows: &[MetaTransition], include_context: bool) -> Result<Self> {
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.x.features(include_context)).collect();
        let x_next: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.x_next.features(include_context))
            .collect();
        Self::new(
            Matrix::from_rows(&x)?,
            rows.iter().map(|r| r.h).collect(),
            rows.iter().map(|r| r.l).collect(),
            Matrix::from_rows(&x_next)?,
        )
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.cols()
    }

    /// Regression inputs `[x, h]`.
    pub fn inputs(&self) -> Matrix {
        let d = self.state_dim() + 1;
        let mut data = Vec::with_capacity(self.len() * d);
        for (row, h) in self.states.iter_rows().zip(&self.h) {
            data.extend_from_slice(row);
            data.push(*h);
        }
        Matrix::new(data, d).expect("row-major inputs")
    }
}

/// `lambda * min(a, b) + (1 - lambda) * max(a, b)`.
pub fn clip(lambda: f64, a: f64, b: f64) -> f64 {
    if a == b {
        return a;
    }
    lambda * a.min(b) + (1.0 - lambda) * a.max(b)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QPair {
    pub q1: Forest,
    pub q2: Forest,
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub iteration: usize,
    /// Whether the state features include the context.
    pub include_context: bool,
}

impl QPair {
    pub fn new(q1: Forest, q2: Forest, lambda: f64, grid: Vec<f64>, iteration: usize, include_context: bool) -> Result<Self> {
        check_lambda(lambda)?;
        check_grid(&grid)?;
        check_dim("second forest inputs", q1.feature_dim, q2.feature_dim)?;
        Ok(Self {
            q1,
            q2,
            lambda,
            grid,
            iteration,
            include_context,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.q1.feature_dim - 1
    }

    pub fn clipped_value(&self, x: &[f64], h: f64) -> Result<f64> {
        check_dim("meta-state", self.state_dim(), x.len())?;
        let mut input = Vec::with_capacity(x.len() + 1);
        input.extend_from_slice(x);
        input.push(h);
        Ok(self.value_at(&input))
    }

    fn value_at(&self, input: &[f64]) -> f64 {
        clip(
            self.lambda,
            self.q1.predict_unchecked(input),
            self.q2.predict_unchecked(input),
        )
    }

    /// Best grid value and its step size; ties go to the smaller step size.
    pub fn best(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim("meta-state", self.state_dim(), x.len())?;
        let mut input = Vec::with_capacity(x.len() + 1);
        input.extend_from_slice(x);
        input.push(0.0);
        let last = x.len();
        let mut best = (f64::NEG_INFINITY, self.grid[0]);
        for &h in &self.grid {
            input[last] = h;
            let v = self.value_at(&input);
            if v > best.0 {
                best = (v, h);
            }
        }
        Ok((best.1, best.0))
    }

    pub fn greedy_action(&self, x: &[f64]) -> Result<f64> {
        self.best(x).map(|(h, _)| h)
    }

    pub fn max_value(&self, x: &[f64]) -> Result<f64> {
        self.best(x).map(|(_, v)| v)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.5 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::Input("lambda must lie in (0.5, 1]"))
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("action grid must be non-empty and strictly increasing"));
    }
    Ok(())
}

/// Targets `l + gamma * max_h Q_prev(x', h)`; `l` itself when there is no
/// previous model.
pub fn bellman_targets<P: Parallelism>(
    data: &FqiData,
    prev: Option<&QPair>,
    meta_gamma: f64,
    exec: &P,
) -> Result<Vec<f64>> {
    let Some(q) = prev else {
        return Ok(data.l.clone());
    };
    check_dim("meta-state", q.state_dim(), data.state_dim())?;
    Ok(exec.map_indexed(data.len(), |i| {
        let (_, v) = q.best(data.next_states.row(i)).expect("checked dimension");
        data.l[i] + meta_gamma * v
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FqiConfig {
    pub iterations: usize,
    pub meta_gamma: f64,
    pub lambda: f64,
    pub trees: TreeParams,
    pub grid_points: usize,
    pub include_context: bool,
    /// With `false` the second forest is a copy of the first and clipping is
    /// the identity.
    pub double: bool,
    pub seed: u64,
}

impl Default for FqiConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            meta_gamma: 1.0,
            lambda: DEFAULT_LAMBDA,
            trees: TreeParams::default(),
            grid_points: GRID_POINTS,
            include_context: true,
            double: true,
            seed: 0,
        }
    }
}

impl FqiConfig {
    /// Tree seed of forest `which` (0 or 1) at `iteration` (1-based).
    pub fn forest_seed(&self, iteration: usize, which: u64) -> u64 {
        RngStream::new(self.seed)
            .child(tag::FOREST, 2 * iteration as u64 + which)
            .rng()
            .next_u64()
    }
}

/// Statistics of one iteration's regression targets.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationLog {
    pub iteration: usize,
    pub target_mean: f64,
    pub target_std: f64,
    pub target_min: f64,
    pub target_max: f64,
}

impl IterationLog {
    fn of(iteration: usize, y: &[f64]) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            iteration,
            target_mean: mean,
            target_std: math::sqrt(var),
            target_min: y.iter().copied().fold(f64::INFINITY, f64::min),
            target_max: y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FqiRun {
    /// `models[i].iteration == i + 1`.
    pub models: Vec<QPair>,
    pub meta_gamma: f64,
    pub log: Vec<IterationLog>,
}

/// Training stopped early; the models finished before the failure are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct FqiAbort {
    pub partial: FqiRun,
    pub error: Error,
}

pub fn fqi_train<P: Parallelism>(
    data: &FqiData,
    grid: Vec<f64>,
    config: &FqiConfig,
    exec: &P,
) -> core::result::Result<FqiRun, FqiAbort> {
    let mut run = FqiRun {
        models: Vec::with_capacity(config.iterations),
        meta_gamma: config.meta_gamma,
        log: Vec::with_capacity(config.iterations),
    };
    let abort = |run: FqiRun, error: Error| FqiAbort { partial: run, error };
    if config.iterations == 0 {
        return Err(abort(run, Error::Input("FQI needs at least one iteration")));
    }
    if let Err(e) = check_lambda(config.lambda).and(check_grid(&grid)) {
        return Err(abort(run, e));
    }
    let inputs = data.inputs();
    for iteration in 1..=config.iterations {
        let step = (|| {
            let y = bellman_targets(data, run.models.last(), config.meta_gamma, exec)?;
            let fit = |which: u64| {
                let params = TreeParams {
                    seed: config.forest_seed(iteration, which),
                    ..config.trees
                };
                Forest::fit_with(&inputs, &y, &params, exec)
            };
            let q1 = fit(0)?;
            let q2 = if config.double { fit(1)? } else { q1.clone() };
            let pair = QPair::new(q1, q2, config.lambda, grid.clone(), iteration, config.include_context)?;
            Ok((pair, IterationLog::of(iteration, &y)))
        })();
        match step {
            Ok((pair, log)) => {
                run.models.push(pair);
                run.log.push(log);
            }
            Err(e) => return Err(abort(run, e)),
        }
    }
    Ok(run)
}

/// Acts greedily with respect to a trained pair.
#[derive(Debug, Clone, Copy)]
pub struct Greedy<'a> {
    pub q: &'a QPair,
}

impl Controller for Greedy<'_> {
    fn next(&mut self, s: &LearningState<'_>) -> Result<ControlOutput> {
        let mut x = Vec::with_capacity(self.q.state_dim());
        x.extend_from_slice(&s.params.theta);
        x.extend_from_slice(&s.gradient.natural.vector);
        if self.q.include_context {
            x.extend_from_slice(s.context.values());
        }
        nga_output(s, self.q.greedy_action(&x)?)
    }
}

/// Validation results of every iteration on the same tasks.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Selection {
    /// 1-based iteration of the chosen model.
    pub best_iteration: usize,
    /// Mean final return per iteration.
    pub means: Vec<f64>,
}

/// Picks the iteration with the highest mean final return; ties go to the
/// earlier iteration.
pub fn select_model<P: Parallelism>(
    run: &FqiRun,
    spec: &FamilySpec,
    settings: &InnerSettings,
    tasks: &[Task],
    steps: usize,
    exec: &P,
) -> Result<Selection> {
    if run.models.is_empty() {
        return Err(Error::Input("no models to select from"));
    }
    let mut means = Vec::with_capacity(run.models.len());
    for q in &run.models {
        let curves = run_tasks(spec, settings, tasks, steps, |_| Ok(Greedy { q }), exec)?;
        means.push(summarize(&curves)?.final_mean());
    }
    let mut best = 0;
    for (i, m) in means.iter().enumerate() {
        if *m > means[best] {
            best = i;
        }
    }
    Ok(Selection {
        best_iteration: best + 1,
        means,
    })
}

/// Test curves of the greedy controller, plus the step sizes it chose.
pub fn evaluate_policy<P: Parallelism>(
    q: &QPair,
    spec: &FamilySpec,
    settings: &InnerSettings,
    tasks: &[Task],
    steps: usize,
    exec: &P,
) -> Result<(CurveSummary, Vec<crate::eval::TaskCurve>)> {
    let curves = run_tasks(spec, settings, tasks, steps, |_| Ok(Greedy { q }), exec)?;
    Ok((summarize(&curves)?, curves))
}

/// Final return of a whole run with one fixed step size, on task context
/// `context`; the training tuples of the single-action model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SingleActionSample {
    pub context: Vec<f64>,
    pub h: f64,
    pub final_return: f64,
}

pub fn generate_single_action_data<P: Parallelism>(
    spec: &FamilySpec,
    settings: &InnerSettings,
    count: usize,
    steps: usize,
    master: RngStream,
    exec: &P,
) -> Result<Vec<SingleActionSample>> {
    let tasks = crate::eval::sample_tasks(spec, count, master.derive(tag::TRAIN))?;
    let h_stream = master.derive(tag::STEP_SIZE);
    exec.map_indexed(count, |i| {
        let h = spec.step_sizes.sample(&mut h_stream.derive(i as u64).rng());
        let curve = run_task(spec, settings, &tasks[i], steps, OptimizerState::Fixed { alpha: h })?;
        Ok(SingleActionSample {
            context: tasks[i].context.0.clone(),
            h,
            final_return: curve.final_return(),
        })
    })
    .into_iter()
    .collect()
}

/// Regression of the final return on `(context, h)`; one step size is chosen
/// per task and kept for the whole run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SingleActionModel {
    pub forest: Forest,
    pub grid: Vec<f64>,
}

impl SingleActionModel {
    pub fn fit<P: Parallelism>(
        samples: &[SingleActionSample],
        space: &StepSizeSpace,
        params: &TreeParams,
        exec: &P,
    ) -> Result<Self> {
        let rows: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| {
                let mut r = s.context.clone();
                r.push(s.h);
                r
            })
            .collect();
        let y: Vec<f64> = samples.iter().map(|s| s.final_return).collect();
        let forest = Forest::fit_with(&Matrix::from_rows(&rows)?, &y, params, exec)?;
        Ok(Self {
            forest,
            grid: space.grid(GRID_POINTS),
        })
    }

    pub fn choose(&self, context: &[f64]) -> Result<f64> {
        let mut input = context.to_vec();
        input.push(0.0);
        let last = context.len();
        let mut best = (f64::NEG_INFINITY, self.grid[0]);
        for &h in &self.grid {
            input[last] = h;
            let v = self.forest.predict(&input)?;
            if v > best.0 {
                best = (v, h);
            }
        }
        Ok(best.1)
    }
}
