//! Trajectory storage, hindsight relabeling and (state, goal) sampling for
//! reanalysis.

use std::collections::VecDeque;

use thiserror::Error;

use crate::env::EnvSpec;
use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Error, PartialEq)]
pub enum BufferError {
    #[error("malformed trajectory: {0}")]
    Malformed(String),
    #[error("buffer is empty")]
    Empty,
    #[error("no trajectory has at least {0} transitions")]
    SegmentTooLong(usize),
    #[error("inter-trajectory sampling needs at least two trajectories")]
    TooFewTrajectories,
    #[error("future ratio {0} outside [0, 1]")]
    InvalidRatio(f32),
}

/// `states` has one more entry than `actions`; `goal` is the desired goal.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f32>>,
    pub actions: Vec<Vec<f32>>,
    pub goal: Vec<f32>,
}

impl Trajectory {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn final_state(&self) -> &[f32] {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn validate(
        &self,
        state_dim: usize,
        action_dim: usize,
        goal_dim: usize,
    ) -> Result<(), BufferError> {
        if self.states.len() != self.actions.len() + 1 {
            return Err(BufferError::Malformed(format!(
                "{} states for {} actions",
                self.states.len(),
                self.actions.len()
            )));
        }
        let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
        if self.states.iter().any(|s| s.len() != state_dim || !finite(s)) {
            return Err(BufferError::Malformed("state width or non-finite state".into()));
        }
        if self.actions.iter().any(|a| a.len() != action_dim || !finite(a)) {
            return Err(BufferError::Malformed("action width or non-finite action".into()));
        }
        if self.goal.len() != goal_dim || !finite(&self.goal) {
            return Err(BufferError::Malformed("goal width or non-finite goal".into()));
        }
        Ok(())
    }
}

/// One transition with a (possibly relabeled) goal and recomputed reward.
/// `done` is set exactly when the goal is achieved.
#[derive(Clone, Debug, PartialEq)]
pub struct RelabeledSample {
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    pub g: Vec<f32>,
    pub r: f32,
    pub s_next: Vec<f32>,
    pub done: bool,
    pub relabeled: bool,
}

/// Column-stacked samples, ready for the networks.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub goals: Matrix,
    pub next_states: Matrix,
    pub rewards: Vec<f32>,
    pub dones: Vec<f32>,
}

impl SampleBatch {
    pub fn from_samples(samples: &[RelabeledSample]) -> Self {
        let rows = |f: fn(&RelabeledSample) -> &Vec<f32>| {
            Matrix::from_rows(&samples.iter().map(f).collect::<Vec<_>>())
        };
        Self {
            states: rows(|x| &x.s),
            actions: rows(|x| &x.a),
            goals: rows(|x| &x.g),
            next_states: rows(|x| &x.s_next),
            rewards: samples.iter().map(|x| x.r).collect(),
            dones: samples.iter().map(|x| if x.done { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Row-wise concatenation.
    pub fn concat(&self, other: &SampleBatch) -> SampleBatch {
        let stack = |a: &Matrix, b: &Matrix| {
            let mut data = a.as_slice().to_vec();
            data.extend_from_slice(b.as_slice());
            Matrix::from_vec(a.rows() + b.rows(), a.cols(), data)
        };
        SampleBatch {
            states: stack(&self.states, &other.states),
            actions: stack(&self.actions, &other.actions),
            goals: stack(&self.goals, &other.goals),
            next_states: stack(&self.next_states, &other.next_states),
            rewards: [self.rewards.as_slice(), &other.rewards].concat(),
            dones: [self.dones.as_slice(), &other.dones].concat(),
        }
    }
}

/// Contiguous slice `s_t … s_{t+K}` of a stored trajectory plus its goal.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub trajectory: Trajectory,
    pub source_index: usize,
    pub start: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterPair {
    pub start: Vec<f32>,
    pub target: Vec<f32>,
    pub start_trajectory: usize,
    pub target_trajectory: usize,
}

/// Trajectory store. Unbounded by default; with a transition cap it evicts
/// the oldest trajectories first.
#[derive(Clone, Debug)]
pub struct TrajectoryBuffer {
    dims: (usize, usize, usize),
    items: VecDeque<Trajectory>,
    max_transitions: Option<usize>,
    transitions: usize,
    /// Cumulative transition counts, rebuilt on mutation.
    transition_ends: Vec<usize>,
    /// Cumulative state counts.
    state_ends: Vec<usize>,
}

impl TrajectoryBuffer {
    pub fn new(spec: &EnvSpec) -> Self {
        Self::with_dims(spec.state_dim, spec.action_dim, spec.goal_dim, None)
    }

    pub fn with_capacity(spec: &EnvSpec, max_transitions: usize) -> Self {
        Self::with_dims(spec.state_dim, spec.action_dim, spec.goal_dim, Some(max_transitions))
    }

    pub fn with_dims(
        state_dim: usize,
        action_dim: usize,
        goal_dim: usize,
        max_transitions: Option<usize>,
    ) -> Self {
        Self {
            dims: (state_dim, action_dim, goal_dim),
            items: VecDeque::new(),
            max_transitions,
            transitions: 0,
            transition_ends: Vec::new(),
            state_ends: Vec::new(),
        }
    }

    pub fn from_trajectories(
        spec: &EnvSpec,
        trajectories: impl IntoIterator<Item = Trajectory>,
    ) -> Result<Self, BufferError> {
        let mut b = Self::new(spec);
        for t in trajectories {
            b.push_unindexed(t)?;
        }
        b.reindex();
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn transitions(&self) -> usize {
        self.transitions
    }

    pub fn get(&self, index: usize) -> Option<&Trajectory> {
        self.items.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.items.iter()
    }

    pub fn insert(&mut self, traj: Trajectory) -> Result<(), BufferError> {
        self.push_unindexed(traj)?;
        self.reindex();
        Ok(())
    }

    fn push_unindexed(&mut self, traj: Trajectory) -> Result<(), BufferError> {
        let (sd, ad, gd) = self.dims;
        traj.validate(sd, ad, gd)?;
        if traj.is_empty() {
            return Err(BufferError::Malformed("trajectory without transitions".into()));
        }
        self.transitions += traj.len();
        self.items.push_back(traj);
        if let Some(cap) = self.max_transitions {
            while self.transitions > cap && self.items.len() > 1 {
                let old = self.items.pop_front().unwrap();
                self.transitions -= old.len();
            }
        }
        Ok(())
    }

    fn reindex(&mut self) {
        self.transition_ends.clear();
        self.state_ends.clear();
        let (mut t, mut s) = (0, 0);
        for traj in &self.items {
            t += traj.len();
            s += traj.states.len();
            self.transition_ends.push(t);
            self.state_ends.push(s);
        }
    }

    /// Maps a global index to (trajectory, local offset).
    fn locate(ends: &[usize], global: usize) -> (usize, usize) {
        let i = ends.partition_point(|&e| e <= global);
        let begin = if i == 0 { 0 } else { ends[i - 1] };
        (i, global - begin)
    }

    /// Uniform transition sample with "future" hindsight relabeling: with
    /// probability `future_ratio` the goal becomes φ(s_k) for `k` uniform in
    /// `t+1 ..= L` of the same trajectory.
    pub fn sample_relabeled(
        &self,
        spec: &EnvSpec,
        batch: usize,
        future_ratio: f32,
        rng: &mut RngStream,
    ) -> Result<Vec<RelabeledSample>, BufferError> {
        if !(0.0..=1.0).contains(&future_ratio) {
            return Err(BufferError::InvalidRatio(future_ratio));
        }
        if self.transitions == 0 {
            return Err(BufferError::Empty);
        }
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let (i, t) = Self::locate(&self.transition_ends, rng.below(self.transitions));
            let traj = &self.items[i];
            let relabel = future_ratio > 0.0 && rng.bernoulli(future_ratio as f64);
            let g = if relabel {
                let k = t + 1 + rng.below(traj.len() - t);
                spec.phi(&traj.states[k])
            } else {
                traj.goal.clone()
            };
            let s_next = traj.states[t + 1].clone();
            let r = spec.reward(&s_next, &g);
            out.push(RelabeledSample {
                s: traj.states[t].clone(),
                a: traj.actions[t].clone(),
                g,
                r,
                s_next,
                done: r == 1.0,
                relabeled: relabel,
            });
        }
        Ok(out)
    }

    pub fn sample_batch(
        &self,
        spec: &EnvSpec,
        batch: usize,
        future_ratio: f32,
        rng: &mut RngStream,
    ) -> Result<SampleBatch, BufferError> {
        Ok(SampleBatch::from_samples(&self.sample_relabeled(
            spec,
            batch,
            future_ratio,
            rng,
        )?))
    }

    /// Segment of `k` transitions, uniform over all valid start positions.
    pub fn sample_intra_segment(&self, k: usize, rng: &mut RngStream) -> Result<Segment, BufferError> {
        let valid: Vec<usize> = self
            .items
            .iter()
            .map(|t| if t.len() >= k { t.len() - k + 1 } else { 0 })
            .collect();
        let total: usize = valid.iter().sum();
        if total == 0 {
            return Err(if self.is_empty() {
                BufferError::Empty
            } else {
                BufferError::SegmentTooLong(k)
            });
        }
        let mut pick = rng.below(total);
        let mut index = 0;
        while pick >= valid[index] {
            pick -= valid[index];
            index += 1;
        }
        let src = &self.items[index];
        Ok(Segment {
            trajectory: Trajectory {
                states: src.states[pick..=pick + k].to_vec(),
                actions: src.actions[pick..pick + k].to_vec(),
                goal: src.goal.clone(),
            },
            source_index: index,
            start: pick,
        })
    }

    /// Two states from different trajectories, each uniform over the states
    /// it may come from.
    pub fn sample_inter_pair(&self, rng: &mut RngStream) -> Result<InterPair, BufferError> {
        if self.items.len() < 2 {
            return Err(BufferError::TooFewTrajectories);
        }
        let total = *self.state_ends.last().unwrap();
        let (a, a_off) = Self::locate(&self.state_ends, rng.below(total));
        let a_len = self.items[a].states.len();
        let a_begin = self.state_ends[a] - a_len;
        let mut j = rng.below(total - a_len);
        if j >= a_begin {
            j += a_len;
        }
        let (b, b_off) = Self::locate(&self.state_ends, j);
        Ok(InterPair {
            start: self.items[a].states[a_off].clone(),
            target: self.items[b].states[b_off].clone(),
            start_trajectory: a,
            target_trajectory: b,
        })
    }
}
