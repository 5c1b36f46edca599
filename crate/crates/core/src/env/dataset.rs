//! Scripted-behavior dataset generation.
//!
//! The behavior policy is a saturating proportional controller working in
//! normalized action units `u ∈ [-1, 1]`; the environment action is
//! `u · action_bound`. Noise and random actions are applied in normalized
//! units, so `noise_std = 0.2` means 20% of the action range per unit of
//! bound, the same relative scale a `[-1, 1]` robotics action space has.

use super::{EnvError, EnvKind, EnvSpec, Region, WALL_Y};
use crate::buffer::Trajectory;
use crate::numerics::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetParams {
    pub n_transitions: usize,
    pub noise_std: f32,
    pub random_action_prob: f32,
    /// Region for episode starts (two_corridor_reach only).
    pub start_region: Region,
    /// Region for episode goals (two_corridor_reach only).
    pub goal_region: Region,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            n_transitions: 20_000,
            noise_std: 0.2,
            random_action_prob: 0.0,
            start_region: Region::All,
            goal_region: Region::All,
        }
    }
}

impl DatasetParams {
    pub fn validate(&self, spec: &EnvSpec) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&self.random_action_prob) {
            return Err(EnvError::Config(format!(
                "random_action_prob {} outside [0, 1]",
                self.random_action_prob
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(EnvError::Config(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        if self.n_transitions < spec.horizon {
            return Err(EnvError::Config(format!(
                "n_transitions {} is below the horizon {}",
                self.n_transitions, spec.horizon
            )));
        }
        Ok(())
    }
}

/// Which side of the wall the scripted controller detours through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Passage {
    Left,
    Right,
}

impl Passage {
    fn waypoint(self) -> [f32; 2] {
        match self {
            Passage::Left => [0.125, WALL_Y],
            Passage::Right => [0.875, WALL_Y],
        }
    }
}

/// Per-episode metadata of the behavior policy.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeInfo {
    pub passage: Passage,
    /// For line_bandit, the mode the action was drawn from.
    pub bandit_mode: Option<usize>,
}

/// Normalized action of the proportional-to-goal controller. When the
/// straight path is blocked it heads for the committed passage first.
pub fn scripted_action(spec: &EnvSpec, state: &[f32], goal: &[f32], passage: Passage) -> Vec<f32> {
    let pos = &state[..spec.goal_dim];
    let target: Vec<f32> = if spec.path_blocked(pos, goal) {
        passage.waypoint().to_vec()
    } else {
        goal.to_vec()
    };
    let reach = spec.action_bound * spec.dt;
    pos.iter()
        .zip(&target)
        .map(|(p, t)| ((t - p) / reach).clamp(-1.0, 1.0))
        .collect()
}

fn perturb(u: &mut [f32], params: &DatasetParams, rng: &mut RngStream) {
    for v in u.iter_mut() {
        *v += params.noise_std * rng.gaussian();
    }
    if params.random_action_prob > 0.0 && rng.bernoulli(params.random_action_prob as f64) {
        for v in u.iter_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
    }
    for v in u.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
}

/// Generates trajectories together with the behavior-policy metadata.
/// Corridor episodes end once the goal is reached or the horizon runs out;
/// the last one is cut short so the total transition count is exactly
/// `n_transitions`.
pub fn generate_episodes(
    spec: &EnvSpec,
    params: &DatasetParams,
    seed: u64,
) -> Result<Vec<(Trajectory, EpisodeInfo)>, EnvError> {
    spec.validate()?;
    params.validate(spec)?;
    let root = RngStream::new(seed);
    let mut out = Vec::new();
    let mut remaining = params.n_transitions;
    let mut episode = 0u64;
    while remaining > 0 {
        let len = remaining.min(spec.horizon);
        let mut rng = root.split(episode);
        let (traj, info) = match spec.kind {
            EnvKind::TwoCorridorReach => corridor_episode(spec, params, len, &mut rng),
            EnvKind::LineBandit => bandit_episode(spec, params, &mut rng),
        };
        remaining -= traj.len();
        out.push((traj, info));
        episode += 1;
    }
    Ok(out)
}

pub fn generate_dataset(
    spec: &EnvSpec,
    params: &DatasetParams,
    seed: u64,
) -> Result<Vec<Trajectory>, EnvError> {
    Ok(generate_episodes(spec, params, seed)?
        .into_iter()
        .map(|(t, _)| t)
        .collect())
}

fn corridor_episode(
    spec: &EnvSpec,
    params: &DatasetParams,
    len: usize,
    rng: &mut RngStream,
) -> (Trajectory, EpisodeInfo) {
    let passage = if rng.bernoulli(0.5) {
        Passage::Left
    } else {
        Passage::Right
    };
    let (start, goal) = spec.sample_task(params.start_region, params.goal_region, rng);
    let mut states = vec![start];
    let mut actions = Vec::with_capacity(len);
    for _ in 0..len {
        let s = states.last().unwrap();
        let mut u = scripted_action(spec, s, &goal, passage);
        perturb(&mut u, params, rng);
        let a: Vec<f32> = u.iter().map(|v| v * spec.action_bound).collect();
        let next = spec.step(s, &a);
        let done = spec.achieves(&next, &goal);
        actions.push(a);
        states.push(next);
        if done {
            break;
        }
    }
    (
        Trajectory {
            states,
            actions,
            goal,
        },
        EpisodeInfo {
            passage,
            bandit_mode: None,
        },
    )
}

fn bandit_episode(
    spec: &EnvSpec,
    params: &DatasetParams,
    rng: &mut RngStream,
) -> (Trajectory, EpisodeInfo) {
    let modes = &spec.bandit;
    let x = rng.uniform(0.0, 1.0);
    let pick = rng.uniform_open() as f32;
    let mut acc = 0.0;
    let mut mode = modes.centers.len() - 1;
    for (k, &f) in modes.frequencies.iter().enumerate() {
        acc += f;
        if pick < acc {
            mode = k;
            break;
        }
    }
    let mut u = vec![modes.centers[mode] / spec.action_bound];
    perturb(&mut u, params, rng);
    let a = vec![u[0] * spec.action_bound];
    (
        Trajectory {
            states: vec![vec![x], spec.step(&[x], &a)],
            actions: vec![a],
            goal: vec![x],
        },
        EpisodeInfo {
            passage: Passage::Left,
            bandit_mode: Some(mode),
        },
    )
}
