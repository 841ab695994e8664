//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.
//!
//! `cargo test --test acceptance -- 3 7` runs only criteria 3 and 7.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use metastep::config::{resolve, ExperimentConfig, Overrides, Profile};
use metastep::exec::Pool;
use metastep::manifest::RunManifest;
use metastep::run::{self, PipelineResult};
use metastep_core::env::Family;
use metastep_core::eval::{CurveSummary, TaskCurve};
use metastep_core::exec::Sequential;
use metastep_core::fqi::{bellman_targets, clip, fqi_train, FqiConfig, FqiData, QPair};
use metastep_core::gradient::{
    conjugate_gradient, natural_gradient, nga_update, pgt_gradient, Baseline, FisherOperator,
    GradientSettings,
};
use metastep_core::lipschitz::{
    l_delta, l_eta, l_grad_j, l_q_context, l_q_state_action, l_v_pi, nav2d_constants,
    verify_return_bound, LipschitzConstants,
};
use metastep_core::math::{dot, norm};
use metastep_core::mdp::{estimate_return, rollout, Environment, MdpDescriptor, Step, Trajectory, Transition};
use metastep_core::meta::FamilySpec;
use metastep_core::optim::{Adam, Metagrad, MetagradSign, RmsProp};
use metastep_core::rng::{RngStream, StreamRng};
use metastep_core::trees::{Forest, Matrix, TreeParams};
use metastep_core::PolicyParams;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    format!("{e:#}")
}

// ---------------------------------------------------------------- criterion 1

/// Two steps from `s0 = 1`; the action moves the state and the reward is
/// `s' - 0.1 s'^2` at the state reached. Deterministic given the action.
struct Drift {
    desc: MdpDescriptor,
}

impl Environment for Drift {
    fn descriptor(&self) -> &MdpDescriptor {
        &self.desc
    }
    fn initial_state(&self, _: &mut StreamRng) -> Vec<f64> {
        vec![1.0]
    }
    fn step(&self, s: &[f64], a: &[f64], _: &mut StreamRng) -> Transition {
        let next = s[0] + a[0];
        Transition {
            next_state: vec![next],
            reward: next - 0.1 * next * next,
            done: false,
            failure: false,
        }
    }
}

/// One step, constant state 1, reward `-(a - target)^2`.
struct Bandit {
    desc: MdpDescriptor,
    target: f64,
}

impl Environment for Bandit {
    fn descriptor(&self) -> &MdpDescriptor {
        &self.desc
    }
    fn initial_state(&self, _: &mut StreamRng) -> Vec<f64> {
        vec![1.0]
    }
    fn step(&self, _: &[f64], a: &[f64], _: &mut StreamRng) -> Transition {
        Transition {
            next_state: vec![1.0],
            reward: -(a[0] - self.target).powi(2),
            done: true,
            failure: false,
        }
    }
}

fn gradient_correctness() -> Outcome {
    let gamma = 0.9;
    let env = Drift {
        desc: MdpDescriptor::new(1, 1, 2, gamma, 10.0).map_err(err)?,
    };
    let params = PolicyParams::new(vec![0.2, -0.3], 0.5, 1, 1).map_err(err)?;
    // 1.6e6 rollouts in chunks of 1e5 to bound memory; chunk means are
    // averaged with equal weights.
    let (chunks, per) = (16u64, 100_000);
    let eps = 1e-3;
    let mut g = vec![0.0; params.len()];
    let mut fd = vec![0.0; params.len()];
    for c in 0..chunks {
        let stream = RngStream::new(1).derive(c);
        let batch = estimate_return(&env, &params, per, gamma, stream).map_err(err)?;
        let gc = pgt_gradient(&batch.trajectories, &params, gamma, Baseline::MeanReward).map_err(err)?;
        for i in 0..params.len() {
            g[i] += gc.vector[i] / chunks as f64;
            // Central differences with common random numbers.
            let shifted = |d: f64| {
                let mut theta = params.theta.clone();
                theta[i] += d;
                estimate_return(&env, &params.with_theta(theta), per, gamma, stream).map(|r| r.mean)
            };
            fd[i] += (shifted(eps).map_err(err)? - shifted(-eps).map_err(err)?) / (2.0 * eps) / chunks as f64;
        }
    }
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    let rel = norm(&diff) / norm(&fd);
    ensure!(rel < 1e-2, "finite-difference relative error {rel:.3e} (pgt {g:?}, fd {fd:?})");

    // Bandit: j = -((mu - c)^2 + sigma^2) with mu = theta_0 + theta_1.
    let bandit = Bandit {
        desc: MdpDescriptor::new(1, 1, 1, 1.0, 100.0).map_err(err)?,
        target: 1.5,
    };
    let p = PolicyParams::new(vec![0.4, 0.3], 0.8, 1, 1).map_err(err)?;
    let mu = p.theta[0] + p.theta[1];
    let exact = -2.0 * (mu - bandit.target);
    let trajectories = (0..100_000u64)
        .map(|i| rollout(&bandit, &p, RngStream::new(2).derive(i)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let gb = pgt_gradient(&trajectories, &p, 1.0, Baseline::None).map_err(err)?;
    let mut worst: f64 = 0.0;
    for (est, se) in gb.vector.iter().zip(&gb.stderr) {
        worst = worst.max((est - exact).abs() / se);
    }
    ensure!(worst <= 4.0, "bandit gradient {:?} vs {exact} is {worst:.2} stderr away", gb.vector);
    Ok(format!("fd rel err {rel:.2e}; bandit within {worst:.2} stderr"))
}

// ---------------------------------------------------------------- criterion 2

fn random_batch(params: &PolicyParams, rng: &mut StreamRng) -> Vec<Trajectory> {
    (0..6)
        .map(|_| Trajectory {
            steps: (0..5)
                .map(|_| Step {
                    state: (0..params.state_dim).map(|_| rng.uniform(-2.0, 2.0)).collect(),
                    action: (0..params.action_dim).map(|_| rng.normal()).collect(),
                    reward: rng.uniform(-1.0, 1.0),
                })
                .collect(),
            truncated: true,
            failed: false,
        })
        .collect()
}

fn natural_gradient_contract() -> Outcome {
    let settings = GradientSettings::default();
    let mut rng = RngStream::new(3).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let theta = (0..6).map(|_| rng.normal()).collect();
        let params = PolicyParams::new(theta, 0.5, 2, 2).map_err(err)?;
        let batch = random_batch(&params, &mut rng);
        let ng = natural_gradient(&batch, &params, 0.99, &settings).map_err(err)?;
        let fisher = FisherOperator::new(&batch, &params, settings.damping).map_err(err)?;
        let lhs = fisher.apply(&ng.natural.vector);
        let r: Vec<f64> = lhs.iter().zip(&ng.vanilla.vector).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&r) / ng.vanilla.norm);
    }
    ensure!(worst <= 1e-8, "natural gradient relative residual {worst:.3e}");

    let mut cg_worst: f64 = 0.0;
    let mut most_iters = 0;
    for _ in 0..20 {
        // A = M^T M + I with M_ij ~ N(0, 1/20): spectrum within about [1, 5].
        let m: Vec<Vec<f64>> = (0..20).map(|_| (0..20).map(|_| rng.normal() / 20f64.sqrt()).collect()).collect();
        let a: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                (0..20)
                    .map(|j| (0..20).map(|k| m[k][i] * m[k][j]).sum::<f64>() + f64::from(u8::from(i == j)))
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let sol = conjugate_gradient(|v| a.iter().map(|row| dot(row, v)).collect(), &b, 20, 1e-8).map_err(err)?;
        cg_worst = cg_worst.max(sol.residual / norm(&b));
        most_iters = most_iters.max(sol.iterations);
    }
    ensure!(cg_worst <= 1e-8 && most_iters <= 20, "CG residual {cg_worst:.3e} after {most_iters} iterations");
    Ok(format!("max residual {worst:.2e}; CG {cg_worst:.2e} in <= {most_iters} iterations"))
}

// ---------------------------------------------------------------- criterion 3

fn nga_normalization() -> Outcome {
    let mut rng = RngStream::new(4).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let theta = (0..6).map(|_| rng.uniform(-10.0, 10.0)).collect();
        let params = PolicyParams::new(theta, 1.0, 2, 2).map_err(err)?;
        let scale = 10f64.powf(rng.uniform(-6.0, 6.0));
        let dir: Vec<f64> = (0..6).map(|_| scale * rng.normal()).collect();
        let h = rng.uniform(0.0, 10.0);
        let next = nga_update(&params, h, &dir).map_err(err)?;
        let moved: Vec<f64> = next.params.theta.iter().zip(&params.theta).map(|(a, b)| a - b).collect();
        worst = worst.max((norm(&moved) - h).abs());
    }
    ensure!(worst <= 1e-12, "step length off by {worst:.3e}");
    Ok(format!("max | ||d theta|| - h | = {worst:.2e}"))
}

// ---------------------------------------------------------------- criterion 4

fn tree_properties() -> Outcome {
    let mut rng = RngStream::new(5).rng();
    let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
    let x = Matrix::from_rows(&rows).map_err(err)?;
    let y: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
    let grown = TreeParams {
        n_trees: 8,
        min_split_fraction: 1e-6,
        seed: 11,
        ..TreeParams::default()
    };
    let probes: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect()).collect();

    let constant = Forest::fit(&x, &[0.3; 50], &grown).map_err(err)?;
    for p in &probes {
        ensure!(constant.predict(p).map_err(err)? == 0.3, "constant target not reproduced");
    }

    let one = Forest::fit(&Matrix::from_rows(&rows[..1]).map_err(err)?, &[-1.7], &grown).map_err(err)?;
    for p in &probes {
        ensure!(one.predict(p).map_err(err)? == -1.7, "single sample not memorized");
    }

    let forest = Forest::fit(&x, &y, &grown).map_err(err)?;
    for (row, target) in rows.iter().zip(&y) {
        let p = forest.predict(row).map_err(err)?;
        ensure!((p - target).abs() <= 1e-12, "training error {} on a fully grown forest", p - target);
    }

    let shallow = TreeParams {
        min_split_fraction: 0.2,
        ..grown
    };
    let again = Forest::fit(&x, &y, &shallow).map_err(err)?;
    ensure!(again == Forest::fit(&x, &y, &shallow).map_err(err)?, "fit is not deterministic");

    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    for p in &probes {
        for f in [&forest, &again] {
            let v = f.predict(p).map_err(err)?;
            ensure!((lo..=hi).contains(&v), "prediction {v} outside [{lo}, {hi}]");
        }
    }
    Ok("constant, memorization, zero training error, determinism, range".into())
}

// ---------------------------------------------------------------- criterion 5

fn fqi_oracle() -> Outcome {
    // States 0 and 1, actions 0 and 1.
    let reward = [[0.0, 1.0], [2.0, -1.0]];
    let next = [[0usize, 1], [0, 1]];
    let gamma = 0.9;
    let (mut states, mut hs, mut ls, mut nexts) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in 0..2 {
        for a in 0..2 {
            states.push(vec![s as f64]);
            hs.push(a as f64);
            ls.push(reward[s][a]);
            nexts.push(vec![next[s][a] as f64]);
        }
    }
    let data = FqiData::new(
        Matrix::from_rows(&states).map_err(err)?,
        hs,
        ls,
        Matrix::from_rows(&nexts).map_err(err)?,
    )
    .map_err(err)?;
    let config = FqiConfig {
        iterations: 5,
        meta_gamma: gamma,
        trees: TreeParams {
            n_trees: 4,
            min_split_fraction: 1e-6,
            ..TreeParams::default()
        },
        seed: 6,
        ..FqiConfig::default()
    };
    let run = fqi_train(&data, vec![0.0, 1.0], &config, &Sequential).map_err(|a| err(a.error))?;

    let mut q = [[0.0f64; 2]; 2];
    let mut worst: f64 = 0.0;
    for model in &run.models {
        let v = [q[0][0].max(q[0][1]), q[1][0].max(q[1][1])];
        for s in 0..2 {
            for a in 0..2 {
                q[s][a] = reward[s][a] + gamma * v[next[s][a]];
            }
        }
        for s in 0..2 {
            for a in 0..2 {
                let fitted = model.clipped_value(&[s as f64], a as f64).map_err(err)?;
                worst = worst.max((fitted - q[s][a]).abs());
            }
        }
    }
    ensure!(run.models.len() == 5, "expected 5 models, got {}", run.models.len());
    ensure!(worst <= 1e-9, "FQI departs from value iteration by {worst:.3e}");
    Ok(format!("N = 1..5 within {worst:.1e}"))
}

// ---------------------------------------------------------------- criterion 6

fn clipped_targets() -> Outcome {
    let mut rng = RngStream::new(7).rng();
    let n = 40;
    let rows = |rng: &mut StreamRng| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..2).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect()
    };
    let (s, s2) = (rows(&mut rng), rows(&mut rng));
    let data = FqiData::new(
        Matrix::from_rows(&s).map_err(err)?,
        (0..n).map(|_| rng.uniform(0.0, 1.0)).collect(),
        (0..n).map(|_| rng.normal()).collect(),
        Matrix::from_rows(&s2).map_err(err)?,
    )
    .map_err(err)?;
    let inputs = data.inputs();
    let fit = |seed: u64, y: &[f64]| {
        let p = TreeParams {
            n_trees: 5,
            min_split_fraction: 0.1,
            seed,
            ..TreeParams::default()
        };
        Forest::fit(&inputs, y, &p)
    };
    let y1: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let y2: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let (q1, q2) = (fit(1, &y1).map_err(err)?, fit(2, &y2).map_err(err)?);
    let grid = metastep_core::math::linspace(0.0, 1.0, 11);
    let oracle = |a: &Forest, b: &Forest, lambda: f64, gamma: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let best = grid
                    .iter()
                    .map(|&h| {
                        let x = [s2[i].as_slice(), &[h]].concat();
                        clip(lambda, a.predict(&x).unwrap(), b.predict(&x).unwrap())
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                data.l[i] + gamma * best
            })
            .collect()
    };

    let pair = QPair::new(q1.clone(), q2.clone(), 1.0, grid.clone(), 1, true).map_err(err)?;
    let min_rule: Vec<f64> = (0..n)
        .map(|i| {
            let best = grid
                .iter()
                .map(|&h| {
                    let x = [s2[i].as_slice(), &[h]].concat();
                    q1.predict(&x).unwrap().min(q2.predict(&x).unwrap())
                })
                .fold(f64::NEG_INFINITY, f64::max);
            data.l[i] + 0.8 * best
        })
        .collect();
    ensure!(bellman_targets(&data, Some(&pair), 0.8, &Sequential).map_err(err)? == min_rule, "lambda = 1 is not the min rule");

    let twin = QPair::new(q1.clone(), q1.clone(), 0.75, grid.clone(), 1, true).map_err(err)?;
    let single: Vec<f64> = (0..n)
        .map(|i| {
            let best = grid
                .iter()
                .map(|&h| q1.predict(&[s2[i].as_slice(), &[h]].concat()).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            data.l[i] + 0.8 * best
        })
        .collect();
    ensure!(bellman_targets(&data, Some(&twin), 0.8, &Sequential).map_err(err)? == single, "identical forests differ from single Q");

    let mixed = QPair::new(q1.clone(), q2.clone(), 0.75, grid.clone(), 1, true).map_err(err)?;
    ensure!(bellman_targets(&data, Some(&mixed), 0.0, &Sequential).map_err(err)? == data.l, "zero discount targets differ from l");
    ensure!(
        bellman_targets(&data, Some(&mixed), 0.8, &Sequential).map_err(err)? == oracle(&q1, &q2, 0.75, 0.8),
        "clipped targets differ from the direct computation"
    );
    Ok("min rule, single Q, bandit targets exact".into())
}

// ---------------------------------------------------------------- criterion 7

fn lipschitz(pool: &Pool) -> Outcome {
    let c = |f: &dyn Fn(&mut LipschitzConstants)| {
        let mut c = LipschitzConstants::default();
        f(&mut c);
        c
    };
    let checks = [
        ("l_v_pi", l_v_pi(&c(&|c| {
            c.l_r = 1.0;
            c.l_p = 0.5;
            c.gamma = 0.9;
        })), 1.0 / (1.0 - 0.45)),
        ("l_q_state_action", l_q_state_action(&c(&|c| {
            c.l_r = 2.0;
            c.l_p = 0.5;
            c.l_pi = 1.0;
            c.gamma = 0.5;
        })), 4.0),
        ("l_q_context", l_q_context(&c(&|c| {
            c.l_omega_r = 1.0;
            c.gamma = 0.5;
        })), 2.0),
        ("l_q_context nav2d", l_q_context(&nav2d_constants(0.99)), 100.0),
        ("l_delta", l_delta(&c(&|c| {
            c.gamma = 0.5;
            c.l_omega_p = 2.0;
            c.l_p = 0.5;
        })), 1.0 / 0.75),
        ("l_eta", l_eta(&c(&|c| {
            c.gamma = 0.5;
            c.l_grad_log_pi = 1.0;
            c.m_theta = 2.0;
        }), 1.0, 3.0), 8.0),
        ("l_grad_j", Ok(l_grad_j(&c(&|c| {
            c.l_pi_theta = 1.0;
            c.m_theta = 1.0;
        }), 2.0, 0.5, 3.0)), 5.0),
    ];
    for (name, got, want) in checks {
        let got = got.map_err(err)?;
        ensure!((got - want).abs() <= 1e-12, "{name} = {got}, expected {want}");
    }

    let mut spec = FamilySpec::for_family(Family::Nav2d);
    let mut rates = Vec::new();
    for (sigma, n) in [(0.0, 1), (spec.sigma, 100)] {
        spec.sigma = sigma;
        let policy = spec.initial_policy(&mut RngStream::new(8).rng()).map_err(err)?;
        let report = verify_return_bound(&policy, 1000, n, RngStream::new(9), pool).map_err(err)?;
        rates.push((sigma, report.violations(), report.violation_rate()));
    }
    ensure!(rates[0].1 == 0, "{} violations with sigma = 0", rates[0].1);
    ensure!(rates[1].2 <= 0.05, "violation rate {} with sigma = {}", rates[1].2, rates[1].0);
    Ok(format!(
        "formulas exact; violations {} (sigma 0), {:.1}% (sigma {})",
        rates[0].1,
        100.0 * rates[1].2,
        rates[1].0
    ))
}

// ---------------------------------------------------------------- criterion 8, 9, 11

fn pooled_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

fn desk_pipeline(family: Family, dir: &Path, pool: &Pool) -> Result<(ExperimentConfig, PipelineResult), String> {
    let mut config = ExperimentConfig::preset(family, Profile::Desk);
    config.out_dir = dir.to_path_buf();
    let result = run::pipeline(&config, pool).map_err(err)?;
    Ok((config, result))
}

fn headline(config: &ExperimentConfig, p: &PipelineResult) -> Outcome {
    ensure!(config.test_tasks == 20 && config.fixed_grid == [0.5, 1.0, 2.0, 4.0, 8.0], "unexpected desk settings");
    let (alpha, best) = p.fixed.best_run();
    let (fqi, fixed) = (&p.fqi.summary, &best.summary);
    let mid = config.t / 2;
    let slack = pooled_se(fqi.final_stderr(), fixed.final_stderr());
    let line = format!(
        "final {:.3} vs fixed h={alpha} {:.3} (-{slack:.3}); step {mid}: {:.3} vs {:.3}",
        fqi.final_mean(),
        fixed.final_mean(),
        fqi.mean_return[mid],
        fixed.mean_return[mid]
    );
    ensure!(fqi.final_mean() >= fixed.final_mean() - slack, "{line}");
    ensure!(fqi.mean_return[mid] > fixed.mean_return[mid], "{line}");
    Ok(line)
}

/// Overshoot terminations per evaluation step, summed over tasks, averaged
/// over the steps after the first update.
fn overshoots_per_step(curves: &[TaskCurve]) -> f64 {
    let steps = curves[0].failures.len() - 1;
    let total: usize = curves.iter().map(|c| c.failures[1..].iter().sum::<usize>()).sum();
    total as f64 / steps as f64
}

fn minigolf(pool: &Pool) -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let (_, p) = desk_pipeline(Family::Minigolf, dir.path(), pool)?;
    let largest = p
        .fixed
        .runs
        .iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty grid");
    let (fqi_over, big_over) = (overshoots_per_step(&p.fqi.curves), overshoots_per_step(&largest.1.curves));
    let (alpha, best) = p.fixed.best_run();
    let (f, b): (&CurveSummary, &CurveSummary) = (&p.fqi.summary, &best.summary);
    let slack = pooled_se(f.final_stderr(), b.final_stderr());
    let line = format!(
        "overshoots/step {fqi_over:.2} vs {big_over:.2} at h={}; final {:.3} vs fixed h={alpha} {:.3} (-{slack:.3})",
        largest.0,
        f.final_mean(),
        b.final_mean()
    );
    ensure!(fqi_over < big_over, "{line}");
    ensure!(f.final_mean() >= b.final_mean() - slack, "{line}");
    Ok(line)
}

fn reproducible(first: &Path, pool: &Pool) -> Outcome {
    let second = tempfile::tempdir().map_err(err)?;
    let overrides = Overrides {
        config_file: Some(first.join(metastep::manifest::FILE_NAME)),
        out_dir: Some(second.path().to_path_buf()),
        ..Overrides::default()
    };
    let config = resolve(&overrides, std::iter::empty()).map_err(err)?;
    run::pipeline(&config, pool).map_err(err)?;
    let manifest = RunManifest::load(first).map_err(err)?;
    let csvs: Vec<&String> = manifest.files.keys().filter(|f| f.ends_with(".csv")).collect();
    for f in &csvs {
        let a = std::fs::read(first.join(f)).map_err(err)?;
        let b = std::fs::read(second.path().join(f)).map_err(err)?;
        ensure!(a == b, "{f} differs between the two runs");
    }
    Ok(format!("{} CSV files identical", csvs.len()))
}

// ---------------------------------------------------------------- criterion 10

fn baseline_recursions() -> Outcome {
    let grads = [[0.5, -2.0], [1.0, 0.0], [-0.25, 3.0]];
    let alpha = 0.1;

    // Adam: beta1 0.9, beta2 0.999, eps 1e-7, bias-corrected.
    let mut adam = Adam::new(alpha, 2);
    let mut theta = vec![1.0, -1.0];
    let mut reference = theta.clone();
    let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
    for (t, g) in grads.iter().enumerate() {
        theta = adam.update(&theta, g);
        let t = t as i32 + 1;
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let m_hat = m[i] / (1.0 - 0.9f64.powi(t));
            let v_hat = v[i] / (1.0 - 0.999f64.powi(t));
            reference[i] += alpha * m_hat / (v_hat.sqrt() + 1e-7);
        }
        ensure!(theta.iter().zip(&reference).all(|(a, b)| (a - b).abs() <= 1e-12), "Adam step {t}: {theta:?} vs {reference:?}");
    }
    // First Adam step is a signed step of length alpha (up to epsilon).
    let first = Adam::new(alpha, 1).update(&[0.0], &[-3.0])[0];
    ensure!((first + alpha * 3.0 / (3.0 + 1e-7)).abs() <= 1e-12, "first Adam step {first}");

    let mut rms = RmsProp::new(alpha, 2);
    let mut theta = vec![1.0, -1.0];
    let mut reference = theta.clone();
    let mut v = [0.0; 2];
    for (t, g) in grads.iter().enumerate() {
        theta = rms.update(&theta, g);
        for i in 0..2 {
            v[i] = 0.9 * v[i] + 0.1 * g[i] * g[i];
            reference[i] += alpha * g[i] / (v[i].sqrt() + 1e-7);
        }
        ensure!(theta.iter().zip(&reference).all(|(a, b)| (a - b).abs() <= 1e-12), "RMSprop step {}: {theta:?} vs {reference:?}", t + 1);
    }

    // Metagrad with mu = 0.5: z' = mu z + g_prev/|g_prev|, h' = max(0, h - beta g_new/|g_new| . z').
    let (beta, mu) = (0.2, 0.5);
    let mut mg = Metagrad::new(1.0, beta, mu, MetagradSign::Subtract, 2);
    let seq = [[1.0, 0.0], [1.0, 1.0], [0.0, -2.0], [3.0, 4.0]];
    let unit = |g: &[f64; 2]| {
        let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
        [g[0] / n, g[1] / n]
    };
    let (mut h, mut z) = (1.0f64, [0.0; 2]);
    for w in seq.windows(2) {
        let out = mg.update(&w[0], &w[1]);
        let (p, q) = (unit(&w[0]), unit(&w[1]));
        z = [mu * z[0] + p[0], mu * z[1] + p[1]];
        h = (h - beta * (q[0] * z[0] + q[1] * z[1])).max(0.0);
        ensure!(!out.skipped && (out.h - h).abs() <= 1e-12, "metagrad h {} vs {h}", out.h);
    }

    let mut aligned = Metagrad::new(1.0, beta, 0.0, MetagradSign::Subtract, 2);
    let a = aligned.update(&[2.0, 1.0], &[4.0, 2.0]).h;
    ensure!(a == 1.0 - beta, "aligned gradients give h' = {a}");
    let mut orthogonal = Metagrad::new(1.0, beta, 0.0, MetagradSign::Subtract, 2);
    let o = orthogonal.update(&[2.0, 0.0], &[0.0, -5.0]).h;
    ensure!(o == 1.0, "orthogonal gradients give h' = {o}");
    Ok("Adam, RMSprop and metagrad sequences within 1e-12".into())
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let pool = Pool::new(0).expect("worker pool");
    let mut failed = 0;
    let mut report = |k: u32, name: &str, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {k:>2} PASS  {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("criterion {k:>2} FAIL  {name}: {msg} [{secs:.1}s]");
            }
        }
    };

    let quick: [(u32, &str, &dyn Fn() -> Outcome); 6] = [
        (1, "gradient correctness", &gradient_correctness),
        (2, "natural-gradient contract", &natural_gradient_contract),
        (3, "NGA normalization", &nga_normalization),
        (4, "ExtraTrees properties", &tree_properties),
        (5, "FQI oracle equivalence", &fqi_oracle),
        (6, "clipped-target identities", &clipped_targets),
    ];
    for (k, name, f) in quick {
        if on(k) {
            let t = Instant::now();
            report(k, name, t, f());
        }
    }
    if on(7) {
        let t = Instant::now();
        report(7, "Lipschitz formulas and return bound", t, lipschitz(&pool));
    }
    if on(8) || on(11) {
        let dir = tempfile::tempdir().expect("temp dir");
        let t = Instant::now();
        match desk_pipeline(Family::Nav2d, dir.path(), &pool) {
            Ok((config, result)) => {
                if on(8) {
                    report(8, "desk Nav2D headline", t, headline(&config, &result));
                }
                if on(11) {
                    let t = Instant::now();
                    report(11, "reproducibility", t, reproducible(dir.path(), &pool));
                }
            }
            Err(e) => {
                for k in [8, 11].into_iter().filter(|k| on(*k)) {
                    report(k, "desk Nav2D pipeline", t, Err(e.clone()));
                }
            }
        }
    }
    if on(9) {
        let t = Instant::now();
        report(9, "Minigolf overshoot safety", t, minigolf(&pool));
    }
    if on(10) {
        let t = Instant::now();
        report(10, "baseline recursions", t, baseline_recursions());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
