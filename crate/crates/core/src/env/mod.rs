//! Synthetic goal-conditioned environments.
//!
//! * `two_corridor_reach`: a point mass in the unit square with a horizontal
//!   wall from (0.25, 0.5) to (0.75, 0.5). Reaching across the wall requires
//!   a detour through either the left or the right passage, so the same
//!   (state, goal) pair has two valid action modes. State is
//!   `[x, y, vx, vy]` where the velocity is the displacement realized on the
//!   last step divided by `dt`.
//! * `line_bandit`: one-step episodes on `x ∈ [0, 1]` whose action labels
//!   come from several modes with imbalanced rewards.

mod dataset;
mod io;

pub use dataset::{
    generate_dataset, generate_episodes, scripted_action, DatasetParams, EpisodeInfo, Passage,
};
pub use io::{read_dataset, write_dataset, DatasetFile, DatasetHeader, DATASET_VERSION};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("dataset file error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    TwoCorridorReach,
    LineBandit,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::TwoCorridorReach => "two_corridor_reach",
            EnvKind::LineBandit => "line_bandit",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "two_corridor_reach" => Some(EnvKind::TwoCorridorReach),
            "line_bandit" => Some(EnvKind::LineBandit),
            _ => None,
        }
    }
}

/// Action modes of `line_bandit`. Mode `k` is centered at `centers[k]`, is
/// drawn with probability `frequencies[k]` and pays `rewards[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditModes {
    pub centers: Vec<f32>,
    pub frequencies: Vec<f32>,
    pub rewards: Vec<f32>,
    /// Actions farther than this from every center earn nothing.
    pub reward_radius: f32,
}

impl Default for BanditModes {
    /// Two dense low-reward modes and one rare high-reward mode.
    fn default() -> Self {
        Self {
            centers: vec![-0.6, 0.0, 0.6],
            frequencies: vec![0.45, 0.45, 0.10],
            rewards: vec![0.1, 0.1, 1.0],
            reward_radius: 0.15,
        }
    }
}

impl BanditModes {
    pub fn validate(&self) -> Result<(), EnvError> {
        let n = self.centers.len();
        if n == 0 || self.frequencies.len() != n || self.rewards.len() != n {
            return Err(EnvError::Config(
                "bandit modes need equally many centers, frequencies and rewards".into(),
            ));
        }
        let total: f32 = self.frequencies.iter().sum();
        if self.frequencies.iter().any(|&f| f < 0.0) || (total - 1.0).abs() > 1e-4 {
            return Err(EnvError::Config("bandit mode frequencies must sum to 1".into()));
        }
        Ok(())
    }

    /// Index of the mode with the largest reward.
    pub fn best_mode(&self) -> usize {
        self.rewards
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Reward of the nearest mode, or 0 beyond `reward_radius`.
    pub fn reward(&self, action: f32) -> f32 {
        let (k, dist) = self
            .centers
            .iter()
            .enumerate()
            .map(|(k, &c)| (k, (action - c).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("validated non-empty");
        if dist <= self.reward_radius {
            self.rewards[k]
        } else {
            0.0
        }
    }
}

/// Which half of the arena (split at x = 0.5) a point may occupy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    All,
    Left,
    Right,
}

impl Region {
    pub fn contains(self, x: f32) -> bool {
        match self {
            Region::All => true,
            Region::Left => x < 0.5,
            Region::Right => x >= 0.5,
        }
    }

    /// Complement within the arena; the complement of everything is taken
    /// to be everything so a degenerate split still has four regimes.
    pub fn complement(self) -> Region {
        match self {
            Region::All => Region::All,
            Region::Left => Region::Right,
            Region::Right => Region::Left,
        }
    }

    fn x_range(self) -> (f32, f32) {
        match self {
            Region::All => (ARENA_MARGIN, 1.0 - ARENA_MARGIN),
            Region::Left => (ARENA_MARGIN, 0.5 - ARENA_MARGIN),
            Region::Right => (0.5, 1.0 - ARENA_MARGIN),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::All => "all",
            Region::Left => "left",
            Region::Right => "right",
        }
    }
}

/// Network input for goal-conditioned models: `[s, g, g − φ(s)]`, where φ
/// takes the leading `goal_dim` state entries.
pub fn goal_features(states: &Matrix, goals: &Matrix) -> Matrix {
    let gd = goals.cols();
    let mut rel = goals.clone();
    for r in 0..rel.rows() {
        let s = states.row(r);
        for (v, p) in rel.row_mut(r).iter_mut().zip(&s[..gd]) {
            *v -= p;
        }
    }
    Matrix::hstack(&[states, goals, &rel])
}

pub fn goal_feature_dim(state_dim: usize, goal_dim: usize) -> usize {
    state_dim + 2 * goal_dim
}

pub const WALL_Y: f32 = 0.5;
pub const WALL_X0: f32 = 0.25;
pub const WALL_X1: f32 = 0.75;
const ARENA_MARGIN: f32 = 0.02;
/// Sampled starts and goals keep this clearance from the wall line.
const WALL_CLEARANCE: f32 = 0.03;
/// Minimum start-goal distance for sampled tasks.
const MIN_TASK_DISTANCE: f32 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub horizon: usize,
    pub success_radius: f32,
    pub action_bound: f32,
    pub dt: f32,
    pub bandit: BanditModes,
}

impl EnvSpec {
    pub fn two_corridor_reach() -> Self {
        Self {
            kind: EnvKind::TwoCorridorReach,
            state_dim: 4,
            action_dim: 2,
            goal_dim: 2,
            horizon: 50,
            success_radius: 0.05,
            action_bound: 0.05,
            dt: 1.0,
            bandit: BanditModes::default(),
        }
    }

    pub fn line_bandit() -> Self {
        Self {
            kind: EnvKind::LineBandit,
            state_dim: 1,
            action_dim: 1,
            goal_dim: 1,
            horizon: 1,
            success_radius: 0.05,
            action_bound: 1.0,
            dt: 1.0,
            bandit: BanditModes::default(),
        }
    }

    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::TwoCorridorReach => Self::two_corridor_reach(),
            EnvKind::LineBandit => Self::line_bandit(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.success_radius > 0.0) {
            return Err(EnvError::Config("success radius must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(EnvError::Config("horizon must be at least 1".into()));
        }
        if !(self.action_bound > 0.0) || !(self.dt > 0.0) {
            return Err(EnvError::Config("action bound and dt must be positive".into()));
        }
        let dims = match self.kind {
            EnvKind::TwoCorridorReach => (4, 2, 2),
            EnvKind::LineBandit => (1, 1, 1),
        };
        if (self.state_dim, self.action_dim, self.goal_dim) != dims {
            return Err(EnvError::Config(format!(
                "{} requires (state, action, goal) dims {dims:?}",
                self.kind.name()
            )));
        }
        if self.kind == EnvKind::LineBandit {
            self.bandit.validate()?;
        }
        Ok(())
    }

    /// Short content hash of the spec, recorded in dataset headers and
    /// run manifests.
    pub fn spec_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
    }

    /// State-to-goal mapping: the position sub-vector.
    pub fn phi(&self, state: &[f32]) -> Vec<f32> {
        state[..self.goal_dim].to_vec()
    }

    pub fn goal_distance(&self, state: &[f32], goal: &[f32]) -> f32 {
        self.phi(state)
            .iter()
            .zip(goal)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            .sqrt()
    }

    /// True when `state` lies in the closed ε-ball around `goal`.
    pub fn achieves(&self, state: &[f32], goal: &[f32]) -> bool {
        self.goal_distance(state, goal) <= self.success_radius
    }

    /// Sparse reward in {0, 1}.
    pub fn reward(&self, next_state: &[f32], goal: &[f32]) -> f32 {
        if self.achieves(next_state, goal) {
            1.0
        } else {
            0.0
        }
    }

    pub fn clamp_action(&self, action: &[f32]) -> Vec<f32> {
        action
            .iter()
            .map(|&a| a.clamp(-self.action_bound, self.action_bound))
            .collect()
    }

    /// Ground-truth transition.
    pub fn step(&self, state: &[f32], action: &[f32]) -> Vec<f32> {
        debug_assert_eq!(action.len(), self.action_dim);
        match self.kind {
            EnvKind::LineBandit => state.to_vec(),
            EnvKind::TwoCorridorReach => {
                let a = self.clamp_action(action);
                let (x, y) = (state[0], state[1]);
                let mut nx = (x + a[0] * self.dt).clamp(0.0, 1.0);
                let mut ny = (y + a[1] * self.dt).clamp(0.0, 1.0);
                if segment_hits_wall((x, y), (nx, ny)) {
                    // slide: drop the component normal to the wall
                    ny = y;
                    if segment_hits_wall((x, y), (nx, ny)) {
                        nx = x;
                    }
                }
                vec![nx, ny, (nx - x) / self.dt, (ny - y) / self.dt]
            }
        }
    }

    /// A state at rest at `position`.
    pub fn state_at(&self, position: &[f32]) -> Vec<f32> {
        let mut s = vec![0.0; self.state_dim];
        s[..self.goal_dim].copy_from_slice(position);
        s
    }

    /// Samples a (start state, goal) task with the start in `start_region`
    /// and the goal in `goal_region`.
    pub fn sample_task(
        &self,
        start_region: Region,
        goal_region: Region,
        rng: &mut RngStream,
    ) -> (Vec<f32>, Vec<f32>) {
        match self.kind {
            EnvKind::LineBandit => {
                let x = rng.uniform(0.0, 1.0);
                (vec![x], vec![x])
            }
            EnvKind::TwoCorridorReach => loop {
                let start = sample_point(start_region, rng);
                let goal = sample_point(goal_region, rng);
                let d = ((start[0] - goal[0]).powi(2) + (start[1] - goal[1]).powi(2)).sqrt();
                if d >= MIN_TASK_DISTANCE {
                    return (self.state_at(&start), goal);
                }
            },
        }
    }

    /// True when the straight segment between two positions hits the wall.
    pub fn path_blocked(&self, from: &[f32], to: &[f32]) -> bool {
        self.kind == EnvKind::TwoCorridorReach
            && segment_hits_wall((from[0], from[1]), (to[0], to[1]))
    }

    /// Arena and wall check for a single state.
    pub fn state_is_valid(&self, state: &[f32]) -> bool {
        if state.len() != self.state_dim || state.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self.kind {
            EnvKind::LineBandit => true,
            EnvKind::TwoCorridorReach => {
                let (x, y) = (state[0], state[1]);
                (0.0..=1.0).contains(&x)
                    && (0.0..=1.0).contains(&y)
                    && !(y == WALL_Y && (WALL_X0..=WALL_X1).contains(&x))
            }
        }
    }
}

fn sample_point(region: Region, rng: &mut RngStream) -> Vec<f32> {
    let (lo, hi) = region.x_range();
    loop {
        let x = rng.uniform(lo, hi);
        let y = rng.uniform(ARENA_MARGIN, 1.0 - ARENA_MARGIN);
        if (y - WALL_Y).abs() >= WALL_CLEARANCE {
            return vec![x, y];
        }
    }
}

/// Zero-thickness wall test for the motion segment `p → q`.
pub fn segment_hits_wall(p: (f32, f32), q: (f32, f32)) -> bool {
    let dp = p.1 - WALL_Y;
    let dq = q.1 - WALL_Y;
    let in_span = |x: f32| (WALL_X0..=WALL_X1).contains(&x);
    if dp == 0.0 && dq == 0.0 {
        // moving along the wall line
        let (lo, hi) = if p.0 <= q.0 { (p.0, q.0) } else { (q.0, p.0) };
        return hi >= WALL_X0 && lo <= WALL_X1;
    }
    if dp == 0.0 {
        return in_span(p.0);
    }
    if dq == 0.0 {
        return in_span(q.0);
    }
    if (dp > 0.0) == (dq > 0.0) {
        return false;
    }
    let t = dp / (dp - dq);
    in_span(p.0 + t * (q.0 - p.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_projects_position() {
        let spec = EnvSpec::two_corridor_reach();
        assert_eq!(spec.phi(&[0.3, 0.5, 0.0, 0.0]), vec![0.3, 0.5]);
        let bandit = EnvSpec::line_bandit();
        assert_eq!(bandit.phi(&[0.42]), vec![0.42]);
    }

    #[test]
    fn self_achievement() {
        let spec = EnvSpec::two_corridor_reach();
        let s = [0.81, 0.12, 0.01, -0.03];
        assert_eq!(spec.reward(&s, &spec.phi(&s)), 1.0);
    }

    #[test]
    fn reward_boundary_is_inclusive() {
        let spec = EnvSpec::line_bandit();
        let eps = spec.success_radius;
        assert_eq!(spec.reward(&[0.5], &[0.5]), 1.0);
        assert_eq!(spec.reward(&[0.5 + 2.0 * eps], &[0.5]), 0.0);
        // distance exactly ε, with values chosen to be exact in binary
        let spec2 = EnvSpec {
            success_radius: 0.0625,
            ..EnvSpec::line_bandit()
        };
        assert_eq!(spec2.reward(&[0.5625], &[0.5]), 1.0);
    }

    #[test]
    fn zero_action_keeps_resting_state() {
        let spec = EnvSpec::two_corridor_reach();
        let s = spec.state_at(&[0.3, 0.7]);
        assert_eq!(spec.step(&s, &[0.0, 0.0]), s);
    }

    #[test]
    fn wall_collision_slides() {
        let spec = EnvSpec::two_corridor_reach();
        let s = spec.state_at(&[0.5, 0.48]);
        let next = spec.step(&s, &[0.03, 0.05]);
        assert_eq!(next[1], 0.48);
        assert!((next[0] - 0.53).abs() < 1e-7);
        assert_eq!(next[3], 0.0);
        // from above
        let s = spec.state_at(&[0.3, 0.52]);
        let next = spec.step(&s, &[-0.01, -0.05]);
        assert_eq!(next[1], 0.52);
        assert!((next[0] - 0.29).abs() < 1e-7);
    }

    #[test]
    fn passages_are_open() {
        let spec = EnvSpec::two_corridor_reach();
        let s = spec.state_at(&[0.1, 0.48]);
        let next = spec.step(&s, &[0.0, 0.05]);
        assert!((next[1] - 0.53).abs() < 1e-6);
    }

    #[test]
    fn free_space_integrates_exactly() {
        let spec = EnvSpec {
            action_bound: 0.1,
            ..EnvSpec::two_corridor_reach()
        };
        let s = spec.state_at(&[0.3, 0.2]);
        let next = spec.step(&s, &[0.1, 0.0]);
        assert_eq!(next[0], 0.3f32 + 0.1f32);
        assert_eq!(next[1], 0.2);
    }

    #[test]
    fn actions_are_clamped() {
        let spec = EnvSpec::two_corridor_reach();
        let s = spec.state_at(&[0.3, 0.2]);
        let next = spec.step(&s, &[1.0, -1.0]);
        assert!((next[0] - 0.35).abs() < 1e-6 && (next[1] - 0.15).abs() < 1e-6);
    }

    #[test]
    fn arena_is_a_box() {
        let spec = EnvSpec::two_corridor_reach();
        let s = spec.state_at(&[0.99, 0.01]);
        let next = spec.step(&s, &[0.05, -0.05]);
        assert_eq!(&next[..2], &[1.0, 0.0]);
    }

    #[test]
    fn bandit_reward_uses_nearest_mode() {
        let modes = BanditModes::default();
        assert_eq!(modes.reward(0.62), 1.0);
        assert_eq!(modes.reward(-0.55), 0.1);
        assert_eq!(modes.reward(0.3), 0.0);
        assert_eq!(modes.best_mode(), 2);
    }

    #[test]
    fn spec_hash_is_stable_and_sensitive() {
        let a = EnvSpec::two_corridor_reach();
        assert_eq!(a.spec_hash(), EnvSpec::two_corridor_reach().spec_hash());
        let b = EnvSpec {
            horizon: 40,
            ..a.clone()
        };
        assert_ne!(a.spec_hash(), b.spec_hash());
    }

    #[test]
    fn sampled_tasks_respect_regions() {
        let spec = EnvSpec::two_corridor_reach();
        let mut rng = RngStream::new(1);
        for _ in 0..200 {
            let (s, g) = spec.sample_task(Region::Left, Region::Right, &mut rng);
            assert!(s[0] < 0.5 && g[0] >= 0.5);
            assert!(spec.state_is_valid(&s));
        }
    }
}
