//! Rollouts of a policy in the true environment, optionally with test-time
//! planning, and the left/right goal-split protocol.

use rand_core::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::env::{scripted_action, EnvSpec, Passage, Region, WALL_Y};
use crate::numerics::{Matrix, NumericsError, RngStream};
use crate::planner::{plan, ModelDynamics, PlannerConfig, PlannerError};
use crate::policy::Policy;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    PolicyOnly,
    WithPlanning,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::PolicyOnly => "policy_only",
            EvalMode::WithPlanning => "with_planning",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bucket {
    /// Start and goal on the same side of the wall line.
    SameSide,
    CrossWall,
}

impl Bucket {
    pub fn name(self) -> &'static str {
        match self {
            Bucket::SameSide => "same_side",
            Bucket::CrossWall => "cross_wall",
        }
    }

    fn of(start: &[f32], goal: &[f32]) -> Self {
        if start.len() < 2 || (start[1] < WALL_Y) == (goal[1] < WALL_Y) {
            Bucket::SameSide
        } else {
            Bucket::CrossWall
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub success: bool,
    pub discounted_return: f64,
    pub bucket: Bucket,
    pub goal: Vec<f32>,
    pub states: Vec<Vec<f32>>,
    pub actions: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketStats {
    pub bucket: Bucket,
    pub episodes: usize,
    pub successes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub buckets: Vec<BucketStats>,
    pub records: Vec<EpisodeRecord>,
}

impl EvalReport {
    fn from_records(mode: EvalMode, records: Vec<EpisodeRecord>) -> Self {
        let n = records.len().max(1) as f64;
        let successes = records.iter().filter(|r| r.success).count();
        let mean = records.iter().map(|r| r.discounted_return).sum::<f64>() / n;
        let var = records
            .iter()
            .map(|r| (r.discounted_return - mean).powi(2))
            .sum::<f64>()
            / n;
        let buckets = [Bucket::SameSide, Bucket::CrossWall]
            .into_iter()
            .map(|b| BucketStats {
                bucket: b,
                episodes: records.iter().filter(|r| r.bucket == b).count(),
                successes: records.iter().filter(|r| r.bucket == b && r.success).count(),
            })
            .collect();
        Self {
            mode,
            episodes: records.len(),
            success_rate: successes as f64 / n,
            mean_return: mean,
            std_return: var.sqrt(),
            buckets,
            records,
        }
    }

    pub const CSV_HEADER: &'static str =
        "run_id,regime,mode,episodes,success_rate,mean_return,std_return";

    pub fn csv_row(&self, run_id: &str, regime: &str) -> String {
        format!(
            "{run_id},{regime},{},{},{:.6},{:.6},{:.6}",
            self.mode.name(),
            self.episodes,
            self.success_rate,
            self.mean_return,
            self.std_return
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub episodes: usize,
    pub gamma: f32,
    pub start_region: Region,
    pub goal_region: Region,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            gamma: 0.98,
            start_region: Region::All,
            goal_region: Region::All,
        }
    }
}

/// Model and planner settings for test-time planning.
pub struct Planning<'a> {
    pub model: &'a dyn ModelDynamics,
    pub config: PlannerConfig,
}

/// Rolls `config.episodes` episodes in the true environment. Episode `e`
/// draws its task and its action noise from separate children of one base
/// stream, so two calls with equal `rng` state face identical tasks.
pub fn evaluate(
    spec: &EnvSpec,
    policy: &dyn Policy,
    planning: Option<&Planning>,
    config: &EvalConfig,
    rng: &mut RngStream,
) -> Result<EvalReport, EvalError> {
    if policy.action_dim() != spec.action_dim {
        return Err(EvalError::Config(format!(
            "policy action dim {} does not match env action dim {}",
            policy.action_dim(),
            spec.action_dim
        )));
    }
    let base = RngStream::new(rng.next_u64());
    let mode = if planning.is_some() {
        EvalMode::WithPlanning
    } else {
        EvalMode::PolicyOnly
    };
    let records = (0..config.episodes)
        .into_par_iter()
        .map(|e| {
            let stream = base.split(e as u64);
            run_episode(spec, policy, planning, config, &mut stream.split(0), &mut stream.split(1))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_records(mode, records))
}

fn run_episode(
    spec: &EnvSpec,
    policy: &dyn Policy,
    planning: Option<&Planning>,
    config: &EvalConfig,
    task_rng: &mut RngStream,
    act_rng: &mut RngStream,
) -> Result<EpisodeRecord, EvalError> {
    let (start, goal) = spec.sample_task(config.start_region, config.goal_region, task_rng);
    let bucket = Bucket::of(&start, &goal);
    let mut states = vec![start];
    let mut actions = Vec::new();
    let mut success = false;
    let mut ret = 0.0f64;
    let mut discount = 1.0f64;
    for _ in 0..spec.horizon {
        let s = states.last().unwrap();
        let a = match planning {
            Some(p) => plan(p.model, policy, spec, s, &goal, &p.config, act_rng)?.action,
            None => policy.act(s, &goal, act_rng)?,
        };
        let a = spec.clamp_action(&a);
        let next = spec.step(s, &a);
        let r = spec.reward(&next, &goal);
        ret += discount * r as f64;
        discount *= config.gamma as f64;
        actions.push(a);
        states.push(next);
        if r > 0.0 {
            success = true;
            break;
        }
    }
    Ok(EpisodeRecord {
        success,
        discounted_return: ret,
        bucket,
        goal,
        states,
        actions,
    })
}

/// Train-region predicate for goals and the four (start, goal) test
/// regimes over it and its complement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GoalSplit {
    pub train: Region,
}

impl GoalSplit {
    pub fn left_right() -> Self {
        Self { train: Region::Left }
    }

    /// `(name, start region, goal region)`.
    pub fn regimes(&self) -> [(&'static str, Region, Region); 4] {
        let (i, o) = (self.train, self.train.complement());
        [
            ("in-in", i, i),
            ("in-out", i, o),
            ("out-in", o, i),
            ("out-out", o, o),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OodReport {
    pub regimes: Vec<(String, EvalReport)>,
    pub mean_success: f64,
    pub min_success: f64,
    pub max_success: f64,
}

/// One report per regime. Every regime reuses the same base stream, so a
/// degenerate split yields identical reports.
pub fn ood_evaluate(
    spec: &EnvSpec,
    split: &GoalSplit,
    policy: &dyn Policy,
    planning: Option<&Planning>,
    config: &EvalConfig,
    rng: &mut RngStream,
) -> Result<OodReport, EvalError> {
    let seed = rng.next_u64();
    let mut regimes = Vec::new();
    for (name, start, goal) in split.regimes() {
        let cfg = EvalConfig {
            start_region: start,
            goal_region: goal,
            ..*config
        };
        let report = evaluate(spec, policy, planning, &cfg, &mut RngStream::new(seed))?;
        regimes.push((name.to_string(), report));
    }
    let rates: Vec<f64> = regimes.iter().map(|(_, r)| r.success_rate).collect();
    Ok(OodReport {
        mean_success: rates.iter().sum::<f64>() / rates.len() as f64,
        min_success: rates.iter().cloned().fold(f64::INFINITY, f64::min),
        max_success: rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        regimes,
    })
}

/// Waypoint controller through the passage with the shorter detour.
#[derive(Clone, Debug)]
pub struct ScriptedPolicy {
    pub spec: EnvSpec,
}

impl ScriptedPolicy {
    fn passage(&self, pos: &[f32], goal: &[f32]) -> Passage {
        let len = |p: Passage| {
            let w = if p == Passage::Left { 0.125 } else { 0.875 };
            let d = |a: &[f32], b: [f32; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            d(pos, [w, WALL_Y]) + d(goal, [w, WALL_Y])
        };
        if len(Passage::Left) <= len(Passage::Right) {
            Passage::Left
        } else {
            Passage::Right
        }
    }
}

impl Policy for ScriptedPolicy {
    fn action_dim(&self) -> usize {
        self.spec.action_dim
    }

    fn sample_actions(
        &self,
        states: &Matrix,
        goals: &Matrix,
        _rng: &mut RngStream,
    ) -> Result<Matrix, NumericsError> {
        let rows: Vec<Vec<f32>> = (0..states.rows())
            .map(|i| {
                let (s, g) = (states.row(i), goals.row(i));
                let passage = self.passage(s, g);
                scripted_action(&self.spec, s, g, passage)
                    .into_iter()
                    .map(|u| u * self.spec.action_bound)
                    .collect()
            })
            .collect();
        Ok(Matrix::from_rows(&rows))
    }
}

/// Actions uniform in the action box.
#[derive(Clone, Debug)]
pub struct UniformPolicy {
    pub action_dim: usize,
    pub bound: f32,
}

impl Policy for UniformPolicy {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn sample_actions(
        &self,
        states: &Matrix,
        _goals: &Matrix,
        rng: &mut RngStream,
    ) -> Result<Matrix, NumericsError> {
        let n = states.rows() * self.action_dim;
        Ok(Matrix::from_vec(
            states.rows(),
            self.action_dim,
            (0..n).map(|_| rng.uniform(-self.bound, self.bound)).collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_oracle_always_succeeds() {
        let spec = EnvSpec::two_corridor_reach();
        let policy = ScriptedPolicy { spec: spec.clone() };
        let report = evaluate(&spec, &policy, None, &EvalConfig::default(), &mut RngStream::new(3)).unwrap();
        assert_eq!(report.episodes, 100);
        assert_eq!(report.success_rate, 1.0);
        let total: usize = report.buckets.iter().map(|b| b.episodes).sum();
        assert_eq!(total, 100);
        assert!(report.buckets.iter().all(|b| b.episodes > 0));
    }

    #[test]
    fn reports_are_reproducible() {
        let spec = EnvSpec::two_corridor_reach();
        let policy = UniformPolicy {
            action_dim: 2,
            bound: spec.action_bound,
        };
        let cfg = EvalConfig {
            episodes: 20,
            ..EvalConfig::default()
        };
        let a = evaluate(&spec, &policy, None, &cfg, &mut RngStream::new(9)).unwrap();
        let b = evaluate(&spec, &policy, None, &cfg, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.csv_row("r", "all"), b.csv_row("r", "all"));
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let spec = EnvSpec::two_corridor_reach();
        let policy = UniformPolicy {
            action_dim: 3,
            bound: 0.05,
        };
        assert!(matches!(
            evaluate(&spec, &policy, None, &EvalConfig::default(), &mut RngStream::new(0)),
            Err(EvalError::Config(_))
        ));
    }

    #[test]
    fn degenerate_split_gives_identical_regimes() {
        let spec = EnvSpec::two_corridor_reach();
        let policy = UniformPolicy {
            action_dim: 2,
            bound: spec.action_bound,
        };
        let cfg = EvalConfig {
            episodes: 10,
            ..EvalConfig::default()
        };
        let r = ood_evaluate(&spec, &GoalSplit { train: Region::All }, &policy, None, &cfg, &mut RngStream::new(1))
            .unwrap();
        assert_eq!(r.min_success, r.max_success);
    }
}
