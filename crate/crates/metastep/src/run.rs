//! Pipeline stages. Each stage reads and writes files in the run directory
//! and keeps `manifest.json` up to date.
//!
//! Every stage derives its random streams from the master seed alone, so
//! FQI, every baseline and every ablation are evaluated on the same test
//! tasks.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use log::info;
use metastep_core::eval::{run_tasks, sample_tasks, summarize, CurveSummary, Task, TaskCurve};
use metastep_core::fqi::{
    fqi_train, select_model, FqiData, FqiRun, Greedy, IterationLog, QPair, Selection,
    SingleActionModel,
};
use metastep_core::lipschitz::{verify_return_bound, BoundReport};
use metastep_core::meta::{generate_dataset_generative, generate_dataset_trajectory, Dataset};
use metastep_core::optim::{OptimizerKind, OptimizerState};
use metastep_core::rng::tag;
use metastep_core::RngStream;
use serde::{Deserialize, Serialize};

use crate::config::{BaselineKind, DatasetMode, ExperimentConfig};
use crate::csvio::{self, fmt_f64, CsvOut};
use crate::exec::Pool;
use crate::manifest::{sha256_hex, RunManifest};
use crate::report;

pub const DATASET_FILE: &str = "dataset.csv";
pub const GAPS_FILE: &str = "dataset_gaps.csv";
pub const TRAINING_LOG_FILE: &str = "training_log.csv";
pub const SELECTION_FILE: &str = "selection.csv";
pub const TASKS_FILE: &str = "tasks.csv";
pub const EVAL_FILE: &str = "eval_fqi.csv";
pub const H_TRACE_FILE: &str = "htrace_fqi.csv";
pub const LIPSCHITZ_FILE: &str = "lipschitz.csv";
pub const MODEL_DIR: &str = "models";
const MODEL_FORMAT: &str = "metastep-qpair/1";

/// Random streams of the pipeline stages.
pub fn stage_streams(seed: u64) -> [(&'static str, RngStream); 5] {
    let master = RngStream::new(seed);
    [
        ("dataset", master.derive(tag::TRAIN)),
        ("forest", master.derive(tag::FOREST)),
        ("validation", master.derive(tag::VALIDATION)),
        ("test", master.derive(tag::TEST)),
        ("single_action", master.derive(tag::STEP_SIZE)),
    ]
}

fn stream(config: &ExperimentConfig, name: &str) -> RngStream {
    stage_streams(config.seed)
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| s)
        .expect("known stage")
}

fn forest_seed(config: &ExperimentConfig) -> u64 {
    stream(config, "forest").rng().next_u64()
}

fn open_manifest(config: &ExperimentConfig) -> Result<RunManifest> {
    let m = RunManifest::load(&config.out_dir)?;
    if m.config_sha256 != crate::manifest::config_sha256(config) {
        bail!(
            "configuration differs from the one recorded in {}; rerun gen-dataset",
            config.out_dir.join(crate::manifest::FILE_NAME).display()
        );
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct DatasetOutcome {
    pub dataset: Dataset,
    pub sha256: String,
}

/// Generates the meta-transition dataset and starts a fresh manifest.
pub fn gen_dataset(config: &ExperimentConfig, pool: &Pool) -> Result<DatasetOutcome> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = RunManifest::new(config);
    manifest.seeds = stage_streams(config.seed)
        .into_iter()
        .map(|(n, s)| (n.to_string(), s))
        .collect();
    let spec = config.spec()?;
    let master = stream(config, "dataset");
    info!("generating {} dataset for {} (K = {})", mode_name(config.dataset_mode), config.family, config.k);
    let dataset = match config.dataset_mode {
        DatasetMode::Trajectory => generate_dataset_trajectory(&spec, &config.inner(), config.k, config.t, master, pool)?,
        DatasetMode::Generative => generate_dataset_generative(&spec, &config.inner(), config.k, master, pool)?,
    };
    if dataset.rows.is_empty() {
        bail!("every episode failed; no dataset written");
    }
    let reference = manifest.reference();
    csvio::write_dataset(&dir.join(DATASET_FILE), &reference, &dataset.rows)?;
    if !dataset.gaps.is_empty() {
        log::warn!("{} episodes dropped after numerical failures", dataset.gaps.len());
        let mut out = CsvOut::create(&dir.join(GAPS_FILE), &reference, &["episode_id", "error"])?;
        for (k, e) in &dataset.gaps {
            out.row(&[k.to_string(), e.to_string()])?;
        }
        out.finish()?;
        manifest.record(dir, GAPS_FILE)?;
    }
    let sha256 = manifest.record(dir, DATASET_FILE)?;
    manifest.dataset_sha256 = Some(sha256.clone());
    manifest.save(dir)?;
    Ok(DatasetOutcome { dataset, sha256 })
}

fn mode_name(m: DatasetMode) -> &'static str {
    match m {
        DatasetMode::Trajectory => "trajectory",
        DatasetMode::Generative => "generative",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    dataset_sha256: String,
    model: QPair,
}

fn model_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(MODEL_DIR).join(format!("iter_{iteration:03}.json"))
}

fn model_rel(iteration: usize) -> String {
    format!("{MODEL_DIR}/iter_{iteration:03}.json")
}

fn write_training(dir: &Path, manifest: &mut RunManifest, dataset_sha: &str, run: &FqiRun) -> Result<()> {
    std::fs::create_dir_all(dir.join(MODEL_DIR))?;
    for q in &run.models {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            dataset_sha256: dataset_sha.into(),
            model: q.clone(),
        };
        std::fs::write(model_path(dir, q.iteration), serde_json::to_string(&file)?)?;
        manifest.record(dir, &model_rel(q.iteration))?;
    }
    let mut out = CsvOut::create(
        &dir.join(TRAINING_LOG_FILE),
        &manifest.reference(),
        &["iteration", "target_mean", "target_std", "target_min", "target_max"],
    )?;
    for l in &run.log {
        out.row(&[
            l.iteration.to_string(),
            fmt_f64(l.target_mean),
            fmt_f64(l.target_std),
            fmt_f64(l.target_min),
            fmt_f64(l.target_max),
        ])?;
    }
    out.finish()?;
    manifest.record(dir, TRAINING_LOG_FILE)?;
    Ok(())
}

/// Fits one Q pair per FQI iteration on the run's dataset.
pub fn train(config: &ExperimentConfig, pool: &Pool) -> Result<FqiRun> {
    let dir = &config.out_dir;
    let mut manifest = open_manifest(config)?;
    let expected = manifest
        .dataset_sha256
        .clone()
        .ok_or_else(|| anyhow!("manifest records no dataset; run gen-dataset"))?;
    let bytes = std::fs::read(dir.join(DATASET_FILE)).context("reading dataset")?;
    let actual = sha256_hex(&bytes);
    if actual != expected {
        bail!("dataset hash {actual} does not match the manifest ({expected}); refusing to train on stale data");
    }
    let rows = csvio::read_dataset(&dir.join(DATASET_FILE))?;
    let data = FqiData::from_transitions(&rows, !config.no_context)?;
    info!("training {} FQI iterations on {} rows", config.fqi_iterations, data.len());
    let run = match fqi_train(&data, config.grid()?, &config.fqi(forest_seed(config)), pool) {
        Ok(run) => run,
        Err(abort) => {
            write_training(dir, &mut manifest, &expected, &abort.partial)?;
            manifest.save(dir)?;
            bail!(
                "FQI stopped after {} iterations: {}",
                abort.partial.models.len(),
                abort.error
            );
        }
    };
    write_training(dir, &mut manifest, &expected, &run)?;
    manifest.selected_iteration = None;
    manifest.save(dir)?;
    Ok(run)
}

pub fn load_model(config: &ExperimentConfig, iteration: usize) -> Result<QPair> {
    let path = model_path(&config.out_dir, iteration);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let file: ModelFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.format != MODEL_FORMAT {
        bail!("{} has unsupported format {:?}", path.display(), file.format);
    }
    Ok(file.model)
}

pub fn load_run(config: &ExperimentConfig) -> Result<FqiRun> {
    let models = (1..=config.fqi_iterations)
        .map(|i| load_model(config, i))
        .collect::<Result<Vec<_>>>()?;
    let (_, records) = csvio::read(&config.out_dir.join(TRAINING_LOG_FILE))?;
    let log = records
        .iter()
        .map(|r| {
            Ok(IterationLog {
                iteration: r[0].parse()?,
                target_mean: csvio::parse_f64(&r[1])?,
                target_std: csvio::parse_f64(&r[2])?,
                target_min: csvio::parse_f64(&r[3])?,
                target_max: csvio::parse_f64(&r[4])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FqiRun {
        models,
        meta_gamma: config.meta_gamma,
        log,
    })
}

pub fn validation_tasks(config: &ExperimentConfig) -> Result<Vec<Task>> {
    Ok(sample_tasks(&config.spec()?, config.validation_tasks, stream(config, "validation"))?)
}

pub fn test_tasks(config: &ExperimentConfig) -> Result<Vec<Task>> {
    Ok(sample_tasks(&config.spec()?, config.test_tasks, stream(config, "test"))?)
}

/// Validates every trained iteration and records the best one.
pub fn select(config: &ExperimentConfig, pool: &Pool) -> Result<Selection> {
    let dir = &config.out_dir;
    let mut manifest = open_manifest(config)?;
    let run = load_run(config)?;
    let tasks = validation_tasks(config)?;
    info!("selecting among {} models on {} validation tasks", run.models.len(), tasks.len());
    let selection = select_model(&run, &config.spec()?, &config.inner(), &tasks, config.t, pool)?;
    let mut out = CsvOut::create(&dir.join(SELECTION_FILE), &manifest.reference(), &["iteration", "mean_final_return", "selected"])?;
    for (i, m) in selection.means.iter().enumerate() {
        let selected = i + 1 == selection.best_iteration;
        out.row(&[(i + 1).to_string(), fmt_f64(*m), u8::from(selected).to_string()])?;
    }
    out.finish()?;
    manifest.record(dir, SELECTION_FILE)?;
    manifest.selected_iteration = Some(selection.best_iteration);
    manifest.save(dir)?;
    Ok(selection)
}

/// Digest of the task list, logged so that paired runs can be checked.
pub fn tasks_digest(tasks: &[Task]) -> String {
    sha256_hex(serde_json::to_string(tasks).expect("tasks serialize").as_bytes())
}

fn write_tasks(path: &Path, reference: &str, tasks: &[Task]) -> Result<()> {
    let first = tasks.first().context("no test tasks")?;
    let mut header = vec!["task".to_string(), "stream_seed".into(), "stream_id".into()];
    header.extend((0..first.context.0.len()).map(|i| format!("omega_{i}")));
    header.extend((0..first.initial.theta.len()).map(|i| format!("theta0_{i}")));
    let mut out = CsvOut::create(path, reference, &header)?;
    for t in tasks {
        let mut row = vec![t.index.to_string(), t.stream.seed.to_string(), t.stream.stream_id.to_string()];
        row.extend(t.context.0.iter().chain(&t.initial.theta).map(|v| fmt_f64(*v)));
        out.row(&row)?;
    }
    out.finish()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub summary: CurveSummary,
    pub curves: Vec<TaskCurve>,
    pub tasks_sha256: String,
}

fn evaluate_with<C, F>(config: &ExperimentConfig, tasks: &[Task], make: F, pool: &Pool) -> Result<Evaluation>
where
    C: metastep_core::eval::Controller,
    F: Fn(&Task) -> metastep_core::Result<C> + Sync + Send,
{
    let curves = run_tasks(&config.spec()?, &config.inner(), tasks, config.t, make, pool)?;
    Ok(Evaluation {
        summary: summarize(&curves)?,
        curves,
        tasks_sha256: tasks_digest(tasks),
    })
}

pub fn evaluate_model(config: &ExperimentConfig, q: &QPair, tasks: &[Task], pool: &Pool) -> Result<Evaluation> {
    evaluate_with(config, tasks, |_| Ok(Greedy { q }), pool)
}

pub fn evaluate_optimizer(config: &ExperimentConfig, kind: OptimizerKind, tasks: &[Task], pool: &Pool) -> Result<Evaluation> {
    let dim = config.spec()?.param_len();
    evaluate_with(config, tasks, |_| Ok(kind.build(dim)), pool)
}

/// Runs the selected model on the test tasks.
pub fn evaluate(config: &ExperimentConfig, pool: &Pool) -> Result<Evaluation> {
    let dir = &config.out_dir;
    let mut manifest = open_manifest(config)?;
    let iteration = manifest
        .selected_iteration
        .ok_or_else(|| anyhow!("no model selected yet; run select"))?;
    let q = load_model(config, iteration)?;
    let tasks = test_tasks(config)?;
    info!("evaluating iteration {iteration} on {} test tasks", tasks.len());
    let eval = evaluate_model(config, &q, &tasks, pool)?;
    let reference = manifest.reference();
    write_tasks(&dir.join(TASKS_FILE), &reference, &tasks)?;
    report::write_curves(&dir.join(EVAL_FILE), &reference, &[("fqi", &eval.summary)])?;
    report::write_h_trace(&dir.join(H_TRACE_FILE), &reference, &eval.curves)?;
    for f in [TASKS_FILE, EVAL_FILE, H_TRACE_FILE] {
        manifest.record(dir, f)?;
    }
    manifest.tasks_sha256 = Some(eval.tasks_sha256.clone());
    manifest.save(dir)?;
    Ok(eval)
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub kind: BaselineKind,
    /// `(alpha, evaluation)` in grid order.
    pub runs: Vec<(f64, Evaluation)>,
    /// Index into `runs` of the best final mean return; ties go to the
    /// smaller rate.
    pub best: usize,
}

impl BaselineResult {
    pub fn best_run(&self) -> &(f64, Evaluation) {
        &self.runs[self.best]
    }
}

fn alpha_label(a: f64) -> String {
    format!("{a}")
}

pub fn baseline_file(kind: BaselineKind, alpha: f64) -> String {
    format!("baseline_{}_{}.csv", kind.name(), alpha_label(alpha))
}

pub fn baseline_summary_file(kind: BaselineKind) -> String {
    format!("baseline_{}_summary.csv", kind.name())
}

/// Evaluates `kind` at every rate of `grid` (the configured grid if `None`).
pub fn baseline(config: &ExperimentConfig, kind: BaselineKind, grid: Option<&[f64]>, pool: &Pool) -> Result<BaselineResult> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut manifest = match RunManifest::load(dir) {
        Ok(_) => open_manifest(config)?,
        Err(_) => RunManifest::new(config),
    };
    let kinds = match grid {
        Some(g) => g.iter().map(|&a| kind.optimizer(config, a)).collect(),
        None => config.optimizers(kind),
    };
    if kinds.is_empty() {
        bail!("empty rate grid for {}", kind.name());
    }
    let tasks = test_tasks(config)?;
    let reference = manifest.reference();
    let mut runs = Vec::with_capacity(kinds.len());
    for k in kinds {
        info!("baseline {} alpha = {}", kind.name(), k.alpha());
        let eval = evaluate_optimizer(config, k, &tasks, pool)?;
        let file = baseline_file(kind, k.alpha());
        let run_name = format!("{}_{}", kind.name(), alpha_label(k.alpha()));
        report::write_curves(&dir.join(&file), &reference, &[(&run_name, &eval.summary)])?;
        manifest.record(dir, &file)?;
        runs.push((k.alpha(), eval));
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[a].0.total_cmp(&runs[b].0));
    let mut best = order[0];
    for &i in &order {
        if runs[i].1.summary.final_mean() > runs[best].1.summary.final_mean() {
            best = i;
        }
    }
    let summary = baseline_summary_file(kind);
    let mut out = CsvOut::create(
        &dir.join(&summary),
        &reference,
        &["alpha", "final_mean_return", "final_stderr", "best", "tasks_sha256"],
    )?;
    for (i, (a, e)) in runs.iter().enumerate() {
        out.row(&[
            fmt_f64(*a),
            fmt_f64(e.summary.final_mean()),
            fmt_f64(e.summary.final_stderr()),
            u8::from(i == best).to_string(),
            e.tasks_sha256.clone(),
        ])?;
    }
    out.finish()?;
    manifest.record(dir, &summary)?;
    manifest.save(dir)?;
    Ok(BaselineResult { kind, runs, best })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Meta-states without the task context.
    NoContext,
    /// One forest per iteration instead of the clipped pair.
    SingleQ,
    /// Every task uses the centre context.
    FixedContext,
    /// One step size per task, regressed from final returns.
    SingleAction,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoContext => "no-context",
            Ablation::SingleQ => "single-q",
            Ablation::FixedContext => "fixed-context",
            Ablation::SingleAction => "single-action",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub base: Evaluation,
    pub ablated: Evaluation,
    /// Step size chosen per test task (single-action only).
    pub chosen_h: Vec<f64>,
}

pub fn ablation_file(a: Ablation) -> String {
    format!("ablation_{}.csv", a.name())
}

/// Reruns the pipeline with one component changed and compares it with the
/// base model on the same test tasks.
pub fn ablate(config: &ExperimentConfig, ablation: Ablation, pool: &Pool) -> Result<AblationResult> {
    let dir = &config.out_dir;
    let mut manifest = open_manifest(config)?;
    if !dir.join(EVAL_FILE).exists() {
        bail!("ablations are paired with the base evaluation; run evaluate first");
    }
    let base_iteration = manifest
        .selected_iteration
        .ok_or_else(|| anyhow!("no model selected yet; run select"))?;
    let base_q = load_model(config, base_iteration)?;

    let mut variant = config.clone();
    variant.out_dir = dir.join(format!("ablation_{}", ablation.name()));
    match ablation {
        Ablation::NoContext => variant.no_context = true,
        Ablation::SingleQ => variant.single_q = true,
        Ablation::FixedContext => variant.fixed_context = true,
        Ablation::SingleAction => {}
    }
    let tasks = test_tasks(&variant)?;
    let base = evaluate_model(&variant, &base_q, &tasks, pool)?;
    let (ablated, chosen_h) = match ablation {
        Ablation::SingleAction => single_action(&variant, &tasks, pool)?,
        _ => {
            gen_dataset(&variant, pool)?;
            train(&variant, pool)?;
            select(&variant, pool)?;
            (evaluate(&variant, pool)?, Vec::new())
        }
    };
    let file = ablation_file(ablation);
    report::write_curves(&dir.join(&file), &manifest.reference(), &[("base", &base.summary), (ablation.name(), &ablated.summary)])?;
    manifest.record(dir, &file)?;
    manifest.save(dir)?;
    Ok(AblationResult { base, ablated, chosen_h })
}

fn single_action(config: &ExperimentConfig, tasks: &[Task], pool: &Pool) -> Result<(Evaluation, Vec<f64>)> {
    let spec = config.spec()?;
    info!("single-action model from {} learning runs", config.single_action_samples);
    let samples = metastep_core::fqi::generate_single_action_data(
        &spec,
        &config.inner(),
        config.single_action_samples,
        config.t,
        stream(config, "single_action"),
        pool,
    )?;
    let params = metastep_core::trees::TreeParams {
        seed: forest_seed(config),
        ..config.tree_params()
    };
    let model = SingleActionModel::fit(&samples, &spec.step_sizes, &params, pool)?;
    let chosen = tasks
        .iter()
        .map(|t| model.choose(t.context.values()))
        .collect::<metastep_core::Result<Vec<f64>>>()?;
    let eval = evaluate_with(
        config,
        tasks,
        |t| Ok(OptimizerState::Fixed { alpha: chosen[t.index as usize] }),
        pool,
    )?;
    Ok((eval, chosen))
}

/// Checks the context-Lipschitz return bound on Navigation2D with a policy
/// drawn from the family's initial distribution.
pub fn lipschitz_check(config: &ExperimentConfig, pairs: usize, rollouts: usize, sigma: f64, pool: &Pool) -> Result<BoundReport> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut spec = metastep_core::meta::FamilySpec::for_family(metastep_core::env::Family::Nav2d);
    spec.sigma = sigma;
    let master = RngStream::new(config.seed).derive(tag::ROLLOUT);
    let policy = spec.initial_policy(&mut master.derive(tag::INIT_POLICY).rng())?;
    let report = verify_return_bound(&policy, pairs, rollouts, master.derive(tag::PAIR), pool)?;
    let mut manifest = RunManifest::load(dir).ok();
    let reference = manifest
        .as_ref()
        .map(RunManifest::reference)
        .unwrap_or_else(|| RunManifest::new(config).reference());
    let mut out = CsvOut::create(&dir.join(LIPSCHITZ_FILE), &reference, &["pair", "distance", "gap", "bound", "slack", "pass"])?;
    for c in &report.checks {
        out.row(&[
            c.pair.to_string(),
            fmt_f64(c.distance),
            fmt_f64(c.gap),
            fmt_f64(c.bound),
            fmt_f64(c.slack),
            u8::from(c.pass).to_string(),
        ])?;
    }
    out.finish()?;
    if let Some(m) = manifest.as_mut() {
        m.record(dir, LIPSCHITZ_FILE)?;
        m.save(dir)?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub selection: Selection,
    pub fqi: Evaluation,
    pub fixed: BaselineResult,
}

/// Dataset, training, selection, evaluation and the fixed-step baseline.
pub fn pipeline(config: &ExperimentConfig, pool: &Pool) -> Result<PipelineResult> {
    gen_dataset(config, pool)?;
    train(config, pool)?;
    let selection = select(config, pool)?;
    let fqi = evaluate(config, pool)?;
    let fixed = baseline(config, BaselineKind::Fixed, None, pool)?;
    Ok(PipelineResult { selection, fqi, fixed })
}
