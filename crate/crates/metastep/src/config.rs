//! Experiment configuration: per-family presets, TOML files and environment
//! overrides.
//!
//! Resolution order, later wins: the preset of the chosen family and
//! profile, the config file, `METASTEP_<KEY>` environment variables, then
//! explicit command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use metastep_core::env::{Context, Family};
use metastep_core::fqi::{FqiConfig, GRID_POINTS};
use metastep_core::gradient::{Baseline, GradientSettings};
use metastep_core::meta::{FamilySpec, InnerSettings, StepSizeSpace};
use metastep_core::mdp::MdpDescriptor;
use metastep_core::optim::{MetagradSign, OptimizerKind};
use metastep_core::trees::{FeatureSubset, TreeParams};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "METASTEP_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Scaled-down counts that finish in minutes.
    #[default]
    Desk,
    /// The published experiment sizes.
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    /// Chained updates along `K` learning runs of `T` steps.
    Trajectory,
    /// `K` independent single updates.
    Generative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    pub profile: Profile,
    #[serde(rename = "K")]
    pub k: usize,
    /// Learning horizon: updates per dataset episode and per evaluation run.
    #[serde(rename = "T")]
    pub t: usize,
    pub n: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub gamma: f64,
    pub meta_gamma: f64,
    pub sigma: f64,
    pub h_low: f64,
    pub h_high: f64,
    pub dataset_mode: DatasetMode,
    pub n_trees: usize,
    pub min_split_fraction: f64,
    /// Candidate features per split; 0 means all of them.
    pub k_features: usize,
    pub lambda: f64,
    pub fqi_iterations: usize,
    pub validation_tasks: usize,
    pub test_tasks: usize,
    pub seed: u64,
    /// Drop the context from the meta-state features.
    pub no_context: bool,
    /// Train one forest per iteration instead of a clipped pair.
    pub single_q: bool,
    /// Use the centre of the context box for every task.
    pub fixed_context: bool,
    pub out_dir: PathBuf,
    pub cg_iters: usize,
    pub damping: f64,
    pub baseline: Baseline,
    pub fixed_grid: Vec<f64>,
    pub decay_grid: Vec<f64>,
    pub exp_decay_grid: Vec<f64>,
    pub exp_decay_factor: f64,
    pub adam_grid: Vec<f64>,
    pub rmsprop_grid: Vec<f64>,
    pub metagrad_grid: Vec<f64>,
    pub metagrad_beta: f64,
    pub metagrad_mu: f64,
    pub metagrad_sign: MetagradSign,
    /// Learning runs used to fit the single-action ablation model.
    pub single_action_samples: usize,
}

/// Five rates spread by factors of two below and above `center`.
fn around(center: f64) -> Vec<f64> {
    [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|m| m * center).collect()
}

/// `high / 16, ..., high / 2, high`.
fn halvings(high: f64) -> Vec<f64> {
    (0..5).rev().map(|k| high / f64::from(1u32 << k)).collect()
}

impl ExperimentConfig {
    pub fn preset(family: Family, profile: Profile) -> Self {
        let spec = FamilySpec::for_family(family);
        let d = spec.descriptor;
        let paper = profile == Profile::Paper;
        // (K, T, n, mode, trees, min split, rmsprop, adam, metagrad h0, beta, decay)
        let (k, t, n, mode, trees, split, rms, adam, mg_h0, mg_beta, decay) = match family {
            Family::Nav2d => (
                if paper { 4000 } else { 500 },
                20,
                if paper { 200 } else { 50 },
                DatasetMode::Trajectory,
                50,
                0.01,
                0.9,
                0.8,
                3.0,
                0.001,
                5.0,
            ),
            Family::Minigolf => (
                if paper { 10000 } else { 1000 },
                50,
                if paper { 400 } else { 100 },
                DatasetMode::Generative,
                50,
                0.01,
                0.3,
                0.08,
                0.3,
                5.0,
                2.0,
            ),
            Family::Cartpole => (
                if paper { 3200 } else { 200 },
                15,
                if paper { 100 } else { 50 },
                DatasetMode::Trajectory,
                150,
                0.05,
                0.3,
                0.3,
                1.0,
                0.1,
                7.5,
            ),
            Family::Swingup => (
                if paper { 300 } else { 50 },
                25,
                if paper { 100 } else { 50 },
                DatasetMode::Trajectory,
                150,
                0.05,
                0.3,
                0.3,
                0.25,
                0.01,
                0.5,
            ),
        };
        let h_high = spec.step_sizes.high;
        Self {
            family,
            profile,
            k,
            t,
            n,
            horizon: d.horizon,
            gamma: d.gamma,
            meta_gamma: 1.0,
            sigma: spec.sigma,
            h_low: spec.step_sizes.low,
            h_high,
            dataset_mode: mode,
            n_trees: trees,
            min_split_fraction: split,
            k_features: 0,
            lambda: metastep_core::fqi::DEFAULT_LAMBDA,
            fqi_iterations: 10,
            validation_tasks: 10,
            test_tasks: 20,
            seed: 0,
            no_context: false,
            single_q: false,
            fixed_context: false,
            out_dir: PathBuf::from("runs").join(family.name()),
            cg_iters: GradientSettings::default().cg_iters,
            damping: GradientSettings::default().damping,
            baseline: Baseline::None,
            fixed_grid: halvings(h_high),
            decay_grid: around(decay),
            exp_decay_grid: around(h_high / 2.0),
            exp_decay_factor: 0.9,
            adam_grid: around(adam),
            rmsprop_grid: around(rms),
            metagrad_grid: around(mg_h0),
            metagrad_beta: mg_beta,
            metagrad_mu: 0.0,
            metagrad_sign: MetagradSign::Subtract,
            single_action_samples: if paper { 2000 } else { 200 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, ok: bool, why: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(anyhow!("invalid config field `{name}`: {why}"))
            }
        };
        for (name, v) in [
            ("K", self.k),
            ("T", self.t),
            ("n", self.n),
            ("H", self.horizon),
            ("n_trees", self.n_trees),
            ("fqi_iterations", self.fqi_iterations),
            ("validation_tasks", self.validation_tasks),
            ("test_tasks", self.test_tasks),
            ("cg_iters", self.cg_iters),
            ("single_action_samples", self.single_action_samples),
        ] {
            field(name, v >= 1, "must be >= 1")?;
        }
        field("gamma", self.gamma > 0.0 && self.gamma <= 1.0, "must lie in (0, 1]")?;
        field("meta_gamma", (0.0..=1.0).contains(&self.meta_gamma), "must lie in [0, 1]")?;
        field("sigma", self.sigma >= 0.0 && self.sigma.is_finite(), "must be finite and >= 0")?;
        field("h_low", self.h_low >= 0.0, "must be >= 0")?;
        field("h_high", self.h_high >= self.h_low && self.h_high.is_finite(), "must be finite and >= h_low")?;
        field("min_split_fraction", self.min_split_fraction > 0.0 && self.min_split_fraction <= 1.0, "must lie in (0, 1]")?;
        field("lambda", self.lambda > 0.5 && self.lambda <= 1.0, "must lie in (0.5, 1]")?;
        field("damping", self.damping >= 0.0, "must be >= 0")?;
        field("exp_decay_factor", self.exp_decay_factor > 0.0, "must be > 0")?;
        field("metagrad_mu", self.metagrad_mu >= 0.0, "must be >= 0")?;
        for (name, grid) in [
            ("fixed_grid", &self.fixed_grid),
            ("decay_grid", &self.decay_grid),
            ("exp_decay_grid", &self.exp_decay_grid),
            ("adam_grid", &self.adam_grid),
            ("rmsprop_grid", &self.rmsprop_grid),
            ("metagrad_grid", &self.metagrad_grid),
        ] {
            field(name, !grid.is_empty(), "must not be empty")?;
            field(name, grid.iter().all(|a| *a >= 0.0 && a.is_finite()), "entries must be finite and >= 0")?;
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<FamilySpec> {
        let mut spec = FamilySpec::for_family(self.family);
        spec.descriptor = MdpDescriptor::new(
            spec.descriptor.state_dim,
            spec.descriptor.action_dim,
            self.horizon,
            self.gamma,
            spec.descriptor.reward_bound,
        )?;
        spec.sigma = self.sigma;
        spec.step_sizes = StepSizeSpace::new(self.h_low, self.h_high)?;
        if self.fixed_context {
            spec.fixed_context = Some(self.family.center_context());
        }
        Ok(spec)
    }

    pub fn inner(&self) -> InnerSettings {
        InnerSettings {
            batch_size: self.n,
            gradient: GradientSettings {
                cg_iters: self.cg_iters,
                damping: self.damping,
                baseline: self.baseline,
                ..GradientSettings::default()
            },
        }
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            n_trees: self.n_trees,
            min_split_fraction: self.min_split_fraction,
            k_features: match self.k_features {
                0 => FeatureSubset::All,
                k => FeatureSubset::Count(k),
            },
            seed: 0,
        }
    }

    pub fn fqi(&self, seed: u64) -> FqiConfig {
        FqiConfig {
            iterations: self.fqi_iterations,
            meta_gamma: self.meta_gamma,
            lambda: self.lambda,
            trees: self.tree_params(),
            grid_points: GRID_POINTS,
            include_context: !self.no_context,
            double: !self.single_q,
            seed,
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        Ok(self.spec()?.step_sizes.grid(GRID_POINTS))
    }

    /// Baseline configurations of `kind`, one per grid entry.
    pub fn optimizers(&self, kind: BaselineKind) -> Vec<OptimizerKind> {
        let grid = match kind {
            BaselineKind::Fixed => &self.fixed_grid,
            BaselineKind::Decay => &self.decay_grid,
            BaselineKind::ExpDecay => &self.exp_decay_grid,
            BaselineKind::Adam => &self.adam_grid,
            BaselineKind::Rmsprop => &self.rmsprop_grid,
            BaselineKind::Metagrad => &self.metagrad_grid,
        };
        grid.iter().map(|&a| kind.optimizer(self, a)).collect()
    }

    pub fn center_context(&self) -> Context {
        self.family.center_context()
    }

    /// Canonical JSON of the configuration, used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Fixed,
    Decay,
    ExpDecay,
    Adam,
    Rmsprop,
    Metagrad,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::Fixed,
        BaselineKind::Decay,
        BaselineKind::ExpDecay,
        BaselineKind::Adam,
        BaselineKind::Rmsprop,
        BaselineKind::Metagrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Fixed => "fixed",
            BaselineKind::Decay => "decay",
            BaselineKind::ExpDecay => "exp-decay",
            BaselineKind::Adam => "adam",
            BaselineKind::Rmsprop => "rmsprop",
            BaselineKind::Metagrad => "metagrad",
        }
    }

    pub fn optimizer(self, c: &ExperimentConfig, alpha: f64) -> OptimizerKind {
        match self {
            BaselineKind::Fixed => OptimizerKind::Fixed { alpha },
            BaselineKind::Decay => OptimizerKind::Decay { alpha },
            BaselineKind::ExpDecay => OptimizerKind::ExpDecay {
                h0: alpha,
                factor: c.exp_decay_factor,
            },
            BaselineKind::Adam => OptimizerKind::Adam { alpha },
            BaselineKind::Rmsprop => OptimizerKind::RmsProp { alpha },
            BaselineKind::Metagrad => OptimizerKind::Metagrad {
                h0: alpha,
                beta: c.metagrad_beta,
                mu: c.metagrad_mu,
                sign: c.metagrad_sign,
            },
        }
    }
}

/// Inputs to [`resolve`] besides the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub family: Option<Family>,
    pub config_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        // A run manifest carries its configuration under `config`.
        let config = value.get("config").cloned().unwrap_or(value);
        let table = toml::Table::try_from(config).context("converting JSON config")?;
        return Ok(table);
    }
    text.parse::<toml::Table>()
        .with_context(|| format!("parsing {}", path.display()))
}

fn parse_env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn key_lookup(keys: &toml::Table, name: &str) -> Option<String> {
    keys.keys().find(|k| k.eq_ignore_ascii_case(name)).cloned()
}

/// Builds the configuration from presets, an optional file, environment
/// variables (`vars`) and flags.
pub fn resolve<I>(o: &Overrides, vars: I) -> Result<ExperimentConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let file = match &o.config_file {
        Some(p) => read_table(p)?,
        None => toml::Table::new(),
    };
    let env: BTreeMap<String, toml::Value> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|key| (key.to_string(), parse_env_value(&v)))
        })
        .collect();

    let pick = |name: &str| -> Option<toml::Value> {
        env.iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.clone())
            .or_else(|| file.get(name).cloned())
    };
    let family = match (o.family, pick("family")) {
        (Some(f), _) => f,
        (None, Some(v)) => v.try_into().context("invalid config field `family`")?,
        (None, None) => Family::Nav2d,
    };
    let profile = match (o.profile, pick("profile")) {
        (Some(p), _) => p,
        (None, Some(v)) => v.try_into().context("invalid config field `profile`")?,
        (None, None) => Profile::Desk,
    };

    let mut table = toml::Table::try_from(ExperimentConfig::preset(family, profile))?;
    for (k, v) in file {
        if !table.contains_key(&k) {
            bail!("unknown config field `{k}`");
        }
        table.insert(k, v);
    }
    for (k, v) in env {
        let key = key_lookup(&table, &k)
            .ok_or_else(|| anyhow!("unknown config field `{k}` in {ENV_PREFIX}{k}"))?;
        table.insert(key, v);
    }
    table.insert("family".into(), toml::Value::try_from(family)?);
    table.insert("profile".into(), toml::Value::try_from(profile)?);

    let mut config: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow!("invalid configuration: {}", e.message()))?;
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(out) = &o.out_dir {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}
