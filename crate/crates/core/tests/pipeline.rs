use metastep_core::env::Family;
use metastep_core::eval::{run_tasks, sample_tasks, summarize};
use metastep_core::exec::Sequential;
use metastep_core::fqi::{evaluate_policy, fqi_train, select_model, FqiConfig, FqiData, FqiRun, QPair};
use metastep_core::gradient::{nga_update, GradientSettings};
use metastep_core::meta::{
    generate_dataset_generative, generate_dataset_trajectory, FamilySpec, InnerSettings,
};
use metastep_core::optim::OptimizerState;
use metastep_core::trees::{Forest, Matrix, Tree, TreeParams};
use metastep_core::{PolicyParams, RngStream};

fn settings(n: usize) -> InnerSettings {
    InnerSettings {
        batch_size: n,
        gradient: GradientSettings::default(),
    }
}

fn small_trees() -> TreeParams {
    TreeParams {
        n_trees: 5,
        min_split_fraction: 0.05,
        ..TreeParams::default()
    }
}

#[test]
fn trajectory_dataset_rows_chain() {
    let spec = FamilySpec::for_family(Family::Nav2d);
    let data = generate_dataset_trajectory(&spec, &settings(5), 3, 4, RngStream::new(10), &Sequential).unwrap();
    assert!(data.gaps.is_empty());
    assert_eq!(data.rows.len(), 12);
    for (i, row) in data.rows.iter().enumerate() {
        assert_eq!((row.episode_id, row.step_id), ((i / 4) as u64, (i % 4) as u64));
        assert!((row.l - (row.j_after - row.j_before)).abs() <= 1e-12);
        assert!(spec.step_sizes.contains(row.h));
        assert_eq!(row.x.features(false).len() + 2, row.x.features(true).len());
    }
    for w in data.rows.windows(2).filter(|w| w[0].episode_id == w[1].episode_id) {
        let p = PolicyParams::new(w[0].x.theta.clone(), spec.sigma, 2, 2).unwrap();
        let next = nga_update(&p, w[0].h, &w[0].x.nat_grad).unwrap();
        assert_eq!(next.params.theta, w[1].x.theta);
        assert_eq!(w[0].x_next, w[1].x);
    }
}

#[test]
fn generative_dataset_has_one_row_per_sample() {
    let spec = FamilySpec::for_family(Family::Minigolf);
    let data = generate_dataset_generative(&spec, &settings(4), 7, RngStream::new(11), &Sequential).unwrap();
    assert_eq!(data.rows.len() + data.gaps.len(), 7);
    for row in &data.rows {
        let (b, w) = (row.x.theta[0], row.x.theta[1]);
        assert!((-2.0..=3.5).contains(&b) && (-1.0..=2.0).contains(&w));
    }
}

#[test]
fn zero_rewards_stay_at_zero() {
    let spec = FamilySpec::for_family(Family::Nav2d);
    let mut data = generate_dataset_trajectory(&spec, &settings(3), 2, 3, RngStream::new(12), &Sequential).unwrap();
    data.rows.iter_mut().for_each(|r| r.l = 0.0);
    let fqi = FqiData::from_transitions(&data.rows, true).unwrap();
    let config = FqiConfig {
        iterations: 3,
        trees: small_trees(),
        ..FqiConfig::default()
    };
    let run = fqi_train(&fqi, spec.step_sizes.grid(11), &config, &Sequential).unwrap();
    let inputs = fqi.inputs();
    for q in &run.models {
        for row in inputs.iter_rows() {
            assert!(q.q1.predict(row).unwrap().abs() < 1e-9);
        }
    }
    assert_eq!(run.models.iter().map(|m| m.iteration).collect::<Vec<_>>(), [1, 2, 3]);
}

fn trained_run(iterations: usize, double: bool) -> (FqiData, FqiRun) {
    let spec = FamilySpec::for_family(Family::Nav2d);
    let data = generate_dataset_trajectory(&spec, &settings(5), 4, 5, RngStream::new(13), &Sequential).unwrap();
    let fqi = FqiData::from_transitions(&data.rows, true).unwrap();
    let config = FqiConfig {
        iterations,
        trees: small_trees(),
        double,
        ..FqiConfig::default()
    };
    let run = fqi_train(&fqi, spec.step_sizes.grid(101), &config, &Sequential).unwrap();
    (fqi, run)
}

#[test]
fn greedy_action_matches_a_linear_scan() {
    let (fqi, run) = trained_run(2, true);
    let q = &run.models[1];
    let mut rng = RngStream::new(14).rng();
    for i in 0..100 {
        let mut x = fqi.states.row(i % fqi.len()).to_vec();
        x.iter_mut().for_each(|v| *v += rng.uniform(-0.5, 0.5));
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &h in &q.grid {
            let v = q.clipped_value(&x, h).unwrap();
            if v > best.0 {
                best = (v, h);
            }
        }
        assert_eq!(q.greedy_action(&x).unwrap(), best.1);
    }
}

#[test]
fn bounded_rewards_bound_the_targets() {
    let (fqi, run) = trained_run(4, true);
    let max_l = fqi.l.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    for log in &run.log {
        let cap = log.iteration as f64 * max_l + 1e-9;
        assert!(log.target_min >= -cap && log.target_max <= cap);
    }
}

#[test]
fn single_q_equals_a_pair_of_identical_forests() {
    let (fqi, single) = trained_run(3, false);
    for q in &single.models {
        assert_eq!(q.q1, q.q2);
    }
    let x = fqi.states.row(0);
    let q = &single.models[2];
    let direct = q.q1.predict(&[x, &[q.grid[7]]].concat()).unwrap();
    assert_eq!(q.clipped_value(x, q.grid[7]).unwrap(), direct);
}

fn constant_pair(grid_fn: impl Fn(f64) -> f64, state_dim: usize) -> QPair {
    // One split on h at every grid midpoint, leaves carrying grid_fn(h).
    let grid = metastep_core::math::linspace(0.0, 8.0, 101);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for &h in &grid {
        let mut r = vec![0.0; state_dim];
        r.push(h);
        rows.push(r);
        y.push(grid_fn(h));
    }
    let params = TreeParams {
        n_trees: 1,
        min_split_fraction: 0.001,
        ..TreeParams::default()
    };
    let f = Forest::fit(&Matrix::from_rows(&rows).unwrap(), &y, &params).unwrap();
    QPair::new(f.clone(), f, 0.75, grid, 1, true).unwrap()
}

#[test]
fn constant_pair_picks_the_smallest_step_and_a_peak_wins() {
    let flat = QPair::new(
        Forest::from_trees(vec![Tree::constant(2.0)], 15, 1),
        Forest::from_trees(vec![Tree::constant(2.0)], 15, 1),
        0.75,
        metastep_core::math::linspace(0.0, 8.0, 101),
        1,
        true,
    )
    .unwrap();
    assert_eq!(flat.greedy_action(&[0.3; 14]).unwrap(), 0.0);
    let peaked = constant_pair(|h| if (h - 2.4).abs() < 1e-9 { 1.0 } else { 0.0 }, 14);
    assert!((peaked.greedy_action(&[0.0; 14]).unwrap() - 2.4).abs() < 1e-12);
}

#[test]
fn zero_step_controller_keeps_deterministic_curves_flat() {
    let mut spec = FamilySpec::for_family(Family::Nav2d);
    spec.sigma = 0.0;
    let tasks = sample_tasks(&spec, 3, RngStream::new(15)).unwrap();
    let zero = constant_pair(|h| -h, 14);
    let (summary, curves) = evaluate_policy(&zero, &spec, &settings(4), &tasks, 5, &Sequential).unwrap();
    for c in &curves {
        assert!(c.returns.iter().all(|r| *r == c.returns[0]));
        assert!(c.step_sizes.iter().all(|h| *h == 0.0));
    }
    assert_eq!(summary.mean_return.len(), 6);
    let (none, _) = evaluate_policy(&zero, &spec, &settings(4), &tasks, 0, &Sequential).unwrap();
    assert_eq!(none.mean_return.len(), 1);
}

#[test]
fn selection_picks_the_dominant_model_and_is_reproducible() {
    let spec = FamilySpec::for_family(Family::Nav2d);
    let tasks = sample_tasks(&spec, 4, RngStream::new(16)).unwrap();
    let stay = constant_pair(|h| -h, 14);
    let mut go = constant_pair(|h| if (h - 2.0).abs() < 1e-9 { 1.0 } else { 0.0 }, 14);
    go.iteration = 2;
    let run = FqiRun {
        models: vec![stay.clone(), go],
        meta_gamma: 1.0,
        log: Vec::new(),
    };
    let s = select_model(&run, &spec, &settings(50), &tasks, 5, &Sequential).unwrap();
    assert_eq!(s.best_iteration, 2);
    assert_eq!(s, select_model(&run, &spec, &settings(50), &tasks, 5, &Sequential).unwrap());

    let single = FqiRun {
        models: vec![stay],
        meta_gamma: 1.0,
        log: Vec::new(),
    };
    assert_eq!(select_model(&single, &spec, &settings(50), &tasks, 5, &Sequential).unwrap().best_iteration, 1);
}

#[test]
fn baselines_share_tasks_with_fqi() {
    let spec = FamilySpec::for_family(Family::Cartpole);
    let tasks = sample_tasks(&spec, 3, RngStream::new(17)).unwrap();
    let a = run_tasks(&spec, &settings(4), &tasks, 3, |_| Ok(OptimizerState::Fixed { alpha: 0.0 }), &Sequential).unwrap();
    let b = run_tasks(&spec, &settings(4), &tasks, 3, |_| Ok(OptimizerState::Fixed { alpha: 2.0 }), &Sequential).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.returns[0], y.returns[0]);
    }
    assert_eq!(summarize(&a).unwrap().tasks, 3);
}
