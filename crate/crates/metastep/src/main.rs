use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use metastep::config::{resolve, BaselineKind, Overrides, Profile};
use metastep::exec::Pool;
use metastep::run::{self, Ablation};
use metastep_core::env::Family;

#[derive(Debug, Parser)]
#[command(name = "metastep", version, about = "Learn step-size schedules for policy gradient with fitted Q-iteration")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML config file, or a run's manifest.json to repeat that run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// nav2d, minigolf, cartpole or swingup.
    #[arg(long, global = true, value_parser = parse_family)]
    family: Option<Family>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect meta-transitions into dataset.csv.
    GenDataset,
    /// Run fitted Q-iteration on the dataset.
    Train,
    /// Pick the iteration with the best validation return.
    Select,
    /// Run the selected model on the test tasks.
    Evaluate,
    /// Evaluate a step-size baseline over its rate grid.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        /// Comma-separated rates replacing the configured grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Rerun with one component removed and compare with the base model.
    Ablate {
        #[arg(value_enum)]
        kind: Ablation,
    },
    /// Check the context-Lipschitz return bound on Navigation2D.
    LipschitzCheck {
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, default_value_t = 100)]
        rollouts: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
    },
    /// gen-dataset, train, select, evaluate and the fixed-step baseline.
    Pipeline,
}

fn parse_family(s: &str) -> Result<Family> {
    Family::from_name(s).ok_or_else(|| anyhow!("unknown family {s:?} (expected nav2d, minigolf, cartpole or swingup)"))
}

fn execute(cli: Cli) -> Result<()> {
    let g = cli.global;
    let overrides = Overrides {
        profile: g.profile,
        family: g.family,
        config_file: g.config,
        seed: g.seed,
        out_dir: g.out,
    };
    let config = resolve(&overrides, std::env::vars())?;
    let pool = Pool::new(g.jobs)?;
    log::info!("{} ({}) in {} with {} workers", config.family.name(), config.profile, config.out_dir.display(), pool.workers());
    let final_line = |name: &str, s: &metastep_core::eval::CurveSummary| {
        println!("{name}: final mean return {:.4} (stderr {:.4}, {} tasks)", s.final_mean(), s.final_stderr(), s.tasks);
    };
    match cli.command {
        Command::GenDataset => {
            let d = run::gen_dataset(&config, &pool)?;
            println!("{} rows, {} dropped episodes, sha256 {}", d.dataset.rows.len(), d.dataset.gaps.len(), d.sha256);
        }
        Command::Train => {
            let r = run::train(&config, &pool)?;
            println!("{} models written to {}", r.models.len(), config.out_dir.join(run::MODEL_DIR).display());
        }
        Command::Select => {
            let s = run::select(&config, &pool)?;
            println!("selected iteration {}", s.best_iteration);
        }
        Command::Evaluate => final_line("fqi", &run::evaluate(&config, &pool)?.summary),
        Command::Baseline { kind, grid } => {
            let b = run::baseline(&config, kind, grid.as_deref(), &pool)?;
            for (alpha, e) in &b.runs {
                final_line(&format!("{} {alpha}", kind.name()), &e.summary);
            }
            println!("best rate {}", b.best_run().0);
        }
        Command::Ablate { kind } => {
            let a = run::ablate(&config, kind, &pool)?;
            final_line("base", &a.base.summary);
            final_line(kind.name(), &a.ablated.summary);
        }
        Command::LipschitzCheck { pairs, rollouts, sigma } => {
            let r = run::lipschitz_check(&config, pairs, rollouts, sigma, &pool)?;
            println!(
                "L = {}; {} of {} pairs violate the bound ({:.2}%)",
                r.l_q_context,
                r.violations(),
                r.checks.len(),
                100.0 * r.violation_rate()
            );
        }
        Command::Pipeline => {
            let p = run::pipeline(&config, &pool)?;
            println!("selected iteration {}", p.selection.best_iteration);
            final_line("fqi", &p.fqi.summary);
            let (alpha, best) = p.fixed.best_run();
            final_line(&format!("best fixed {alpha}"), &best.summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
