//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected.
//! `dataset.preset` (normal or small) fixes the dataset size unless
//! `dataset.n_transitions` is given explicitly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::critic::CriticConfig;
use crate::dynamics::DynamicsConfig;
use crate::env::{DatasetParams, EnvKind, EnvSpec, Region};
use crate::eval::{EvalConfig, GoalSplit};
use crate::numerics::{Activation, AdamConfig, NetConfig};
use crate::planner::PlannerConfig;
use crate::policy::{GanConfig, GeneratorLoss};
use crate::reanalysis::{ActionSource, FinetuneSchedule, ReanalysisConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("duplicate config key `{0}`")]
    Duplicate(String),
    #[error("bad value `{value}` for `{key}`")]
    Value { key: String, value: String },
    #[error("cannot read config")]
    Io(#[from] std::io::Error),
}

pub const NORMAL_TRANSITIONS: usize = 20_000;
pub const SMALL_TRANSITIONS: usize = 2_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Normal,
    Small,
}

impl Preset {
    pub fn transitions(self) -> usize {
        match self {
            Preset::Normal => NORMAL_TRANSITIONS,
            Preset::Small => SMALL_TRANSITIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppendixAConfig {
    pub transitions: usize,
    pub noise_std: f32,
    pub delta: f32,
    pub samples: usize,
    pub steps: usize,
}

impl Default for AppendixAConfig {
    fn default() -> Self {
        Self {
            transitions: 2000,
            noise_std: 0.05,
            delta: 0.1,
            samples: 1000,
            steps: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub dataset: DatasetParams,
    pub dataset_path: Option<String>,
    /// Output directory; `--out` overrides it.
    pub out_dir: Option<String>,
    pub net: NetConfig,
    pub critic: CriticConfig,
    pub gan: GanConfig,
    pub batch: usize,
    pub future_ratio: f32,
    pub pretrain_steps: usize,
    pub dynamics: DynamicsConfig,
    pub dynamics_epochs: usize,
    pub planner: PlannerConfig,
    pub reanalysis: ReanalysisConfig,
    pub schedule: FinetuneSchedule,
    pub bc_steps: usize,
    pub eval: EvalConfig,
    pub split: Option<GoalSplit>,
    pub appendix_a: AppendixAConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let planner = PlannerConfig::default();
        Self {
            env: EnvKind::TwoCorridorReach,
            seed: 0,
            dataset: DatasetParams::default(),
            dataset_path: None,
            out_dir: None,
            net: NetConfig::default(),
            critic: CriticConfig::default(),
            gan: GanConfig::default(),
            batch: 256,
            future_ratio: 0.8,
            pretrain_steps: 5000,
            dynamics: DynamicsConfig::default(),
            dynamics_epochs: 20,
            planner,
            reanalysis: ReanalysisConfig {
                planner,
                ..ReanalysisConfig::default()
            },
            schedule: FinetuneSchedule::default(),
            bc_steps: 5000,
            eval: EvalConfig::default(),
            split: None,
            appendix_a: AppendixAConfig::default(),
        }
    }
}

fn region(v: &str) -> Option<Region> {
    match v {
        "all" => Some(Region::All),
        "left" => Some(Region::Left),
        "right" => Some(Region::Right),
        _ => None,
    }
}

fn region_name(r: Region) -> &'static str {
    r.name()
}

impl RunConfig {
    pub fn spec(&self) -> EnvSpec {
        EnvSpec::for_kind(self.env)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if pairs.insert(k.clone(), v).is_some() {
                return Err(ConfigError::Duplicate(k));
            }
        }
        let mut cfg = RunConfig::default();
        if let Some(p) = pairs.remove("dataset.preset") {
            cfg.set("dataset.preset", &p)?;
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.reanalysis.planner = cfg.planner;
        Ok(cfg)
    }

    /// Applies one key. Planner keys also update the planner used during
    /// reanalysis.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
            v.parse().map_err(|_| ConfigError::Value {
                key: key.into(),
                value: v.into(),
            })
        }
        let bad = || ConfigError::Value {
            key: key.into(),
            value: value.into(),
        };
        let v = value;
        match key {
            "env" => self.env = EnvKind::parse(v).ok_or_else(bad)?,
            "seed" => self.seed = num(key, v)?,
            "dataset.preset" => {
                let p = match v {
                    "normal" => Preset::Normal,
                    "small" => Preset::Small,
                    _ => return Err(bad()),
                };
                self.dataset.n_transitions = p.transitions();
            }
            "dataset.path" => self.dataset_path = Some(v.to_string()),
            "out" => self.out_dir = Some(v.to_string()),
            "dataset.n_transitions" => self.dataset.n_transitions = num(key, v)?,
            "dataset.noise_std" => self.dataset.noise_std = num(key, v)?,
            "dataset.random_action_prob" => self.dataset.random_action_prob = num(key, v)?,
            "dataset.start_region" => self.dataset.start_region = region(v).ok_or_else(bad)?,
            "dataset.goal_region" => self.dataset.goal_region = region(v).ok_or_else(bad)?,
            "net.hidden_width" => self.net.hidden_width = num(key, v)?,
            "net.hidden_layers" => self.net.hidden_layers = num(key, v)?,
            "net.activation" => self.net.activation = Activation::parse(v).ok_or_else(bad)?,
            "net.lr" => {
                self.net.adam = AdamConfig {
                    lr: num(key, v)?,
                    ..self.net.adam
                }
            }
            "critic.gamma" => self.critic.gamma = num(key, v)?,
            "critic.beta" => self.critic.beta = num(key, v)?,
            "critic.w_max" => self.critic.w_max = num(key, v)?,
            "critic.polyak" => self.critic.polyak = num(key, v)?,
            "gan.noise_dim" => self.gan.noise_dim = num(key, v)?,
            "gan.lr" => self.gan.adam.lr = num(key, v)?,
            "gan.beta1" => self.gan.adam.beta1 = num(key, v)?,
            "gan.average_rate" => self.gan.average_rate = num(key, v)?,
            "gan.generator_loss" => self.gan.generator_loss = GeneratorLoss::parse(v).ok_or_else(bad)?,
            "train.batch" => {
                self.batch = num(key, v)?;
                self.reanalysis.batch = self.batch;
            }
            "train.future_ratio" => {
                self.future_ratio = num(key, v)?;
                self.reanalysis.future_ratio = self.future_ratio;
            }
            "pretrain.steps" => self.pretrain_steps = num(key, v)?,
            "dynamics.members" => self.dynamics.members = num(key, v)?,
            "dynamics.epochs" => self.dynamics_epochs = num(key, v)?,
            "dynamics.batch" => self.dynamics.batch = num(key, v)?,
            "dynamics.bootstrap" => self.dynamics.bootstrap = num(key, v)?,
            "dynamics.u_quantile" => self.dynamics.threshold_quantile = num(key, v)?,
            "planner.candidates" => self.planner.candidates = num(key, v)?,
            "planner.rollouts" => self.planner.rollouts = num(key, v)?,
            "planner.depth" => self.planner.depth = num(key, v)?,
            "planner.kappa" => self.planner.kappa = num(key, v)?,
            "planner.discount" => self.planner.discount = num(key, v)?,
            "reanalysis.iterations" => self.schedule.iterations = num(key, v)?,
            "reanalysis.intra" => self.schedule.intra = num(key, v)?,
            "reanalysis.inter" => self.schedule.inter = num(key, v)?,
            "reanalysis.value_steps" => self.schedule.value_steps = num(key, v)?,
            "reanalysis.disc_steps" => self.schedule.disc_steps = num(key, v)?,
            "reanalysis.gen_steps" => self.schedule.gen_steps = num(key, v)?,
            "reanalysis.segment_len" => self.reanalysis.segment_len = num(key, v)?,
            "reanalysis.horizon" => self.reanalysis.horizon = num(key, v)?,
            "reanalysis.capacity" => self.reanalysis.capacity = num(key, v)?,
            "reanalysis.strict" => self.reanalysis.strict = num(key, v)?,
            "reanalysis.action_source" => {
                self.reanalysis.action_source = match v {
                    "planner" => ActionSource::Planner,
                    "policy" => ActionSource::Policy,
                    _ => return Err(bad()),
                }
            }
            "bc.steps" => self.bc_steps = num(key, v)?,
            "eval.episodes" => self.eval.episodes = num(key, v)?,
            "eval.gamma" => self.eval.gamma = num(key, v)?,
            "eval.split" => {
                self.split = match v {
                    "none" => None,
                    "left_right" => Some(GoalSplit::left_right()),
                    _ => return Err(bad()),
                }
            }
            "appendix_a.transitions" => self.appendix_a.transitions = num(key, v)?,
            "appendix_a.noise_std" => self.appendix_a.noise_std = num(key, v)?,
            "appendix_a.delta" => self.appendix_a.delta = num(key, v)?,
            "appendix_a.samples" => self.appendix_a.samples = num(key, v)?,
            "appendix_a.steps" => self.appendix_a.steps = num(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env.name().into());
        kv("seed", self.seed.to_string());
        if let Some(p) = &self.dataset_path {
            kv("dataset.path", p.clone());
        }
        if let Some(p) = &self.out_dir {
            kv("out", p.clone());
        }
        kv("dataset.n_transitions", self.dataset.n_transitions.to_string());
        kv("dataset.noise_std", self.dataset.noise_std.to_string());
        kv("dataset.random_action_prob", self.dataset.random_action_prob.to_string());
        kv("dataset.start_region", region_name(self.dataset.start_region).into());
        kv("dataset.goal_region", region_name(self.dataset.goal_region).into());
        kv("net.hidden_width", self.net.hidden_width.to_string());
        kv("net.hidden_layers", self.net.hidden_layers.to_string());
        kv("net.activation", self.net.activation.name().into());
        kv("net.lr", self.net.adam.lr.to_string());
        kv("critic.gamma", self.critic.gamma.to_string());
        kv("critic.beta", self.critic.beta.to_string());
        kv("critic.w_max", self.critic.w_max.to_string());
        kv("critic.polyak", self.critic.polyak.to_string());
        kv("gan.noise_dim", self.gan.noise_dim.to_string());
        kv("gan.lr", self.gan.adam.lr.to_string());
        kv("gan.beta1", self.gan.adam.beta1.to_string());
        kv("gan.average_rate", self.gan.average_rate.to_string());
        kv(
            "gan.generator_loss",
            match self.gan.generator_loss {
                GeneratorLoss::NonSaturating => "non_saturating".into(),
                GeneratorLoss::Minimax => "minimax".into(),
            },
        );
        kv("train.batch", self.batch.to_string());
        kv("train.future_ratio", self.future_ratio.to_string());
        kv("pretrain.steps", self.pretrain_steps.to_string());
        kv("dynamics.members", self.dynamics.members.to_string());
        kv("dynamics.epochs", self.dynamics_epochs.to_string());
        kv("dynamics.batch", self.dynamics.batch.to_string());
        kv("dynamics.bootstrap", self.dynamics.bootstrap.to_string());
        kv("dynamics.u_quantile", self.dynamics.threshold_quantile.to_string());
        kv("planner.candidates", self.planner.candidates.to_string());
        kv("planner.rollouts", self.planner.rollouts.to_string());
        kv("planner.depth", self.planner.depth.to_string());
        kv("planner.kappa", self.planner.kappa.to_string());
        kv("planner.discount", self.planner.discount.to_string());
        kv("reanalysis.iterations", self.schedule.iterations.to_string());
        kv("reanalysis.intra", self.schedule.intra.to_string());
        kv("reanalysis.inter", self.schedule.inter.to_string());
        kv("reanalysis.value_steps", self.schedule.value_steps.to_string());
        kv("reanalysis.disc_steps", self.schedule.disc_steps.to_string());
        kv("reanalysis.gen_steps", self.schedule.gen_steps.to_string());
        kv("reanalysis.segment_len", self.reanalysis.segment_len.to_string());
        kv("reanalysis.horizon", self.reanalysis.horizon.to_string());
        kv("reanalysis.capacity", self.reanalysis.capacity.to_string());
        kv("reanalysis.strict", self.reanalysis.strict.to_string());
        kv(
            "reanalysis.action_source",
            match self.reanalysis.action_source {
                ActionSource::Planner => "planner".into(),
                ActionSource::Policy => "policy".into(),
            },
        );
        kv("bc.steps", self.bc_steps.to_string());
        kv("eval.episodes", self.eval.episodes.to_string());
        kv("eval.gamma", self.eval.gamma.to_string());
        kv(
            "eval.split",
            if self.split.is_some() { "left_right" } else { "none" }.into(),
        );
        kv("appendix_a.transitions", self.appendix_a.transitions.to_string());
        kv("appendix_a.noise_std", self.appendix_a.noise_std.to_string());
        kv("appendix_a.delta", self.appendix_a.delta.to_string());
        kv("appendix_a.samples", self.appendix_a.samples.to_string());
        kv("appendix_a.steps", self.appendix_a.steps.to_string());
        s
    }
}
