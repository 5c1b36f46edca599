//! Model-based action refinement: sample candidate first actions from the
//! policy, roll each one out through randomly chosen ensemble members, and
//! return the softmax-weighted average of the candidates.

use rand_core::RngCore;
use thiserror::Error;

use crate::dynamics::{DynamicsEnsemble, DynamicsError};
use crate::env::EnvSpec;
use crate::numerics::{Matrix, NumericsError, RngStream};
use crate::policy::Policy;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A set of one-step models that can be sampled uniformly.
pub trait ModelDynamics: Sync {
    fn n_members(&self) -> usize;

    fn predict_batch(
        &self,
        member: usize,
        states: &Matrix,
        actions: &Matrix,
    ) -> Result<Matrix, DynamicsError>;
}

impl ModelDynamics for DynamicsEnsemble {
    fn n_members(&self) -> usize {
        DynamicsEnsemble::n_members(self)
    }

    fn predict_batch(
        &self,
        member: usize,
        states: &Matrix,
        actions: &Matrix,
    ) -> Result<Matrix, DynamicsError> {
        DynamicsEnsemble::predict_batch(self, member, states, actions)
    }
}

/// Stand-in ensemble whose every member is the true environment step.
#[derive(Clone, Debug)]
pub struct GroundTruthModel {
    pub spec: EnvSpec,
    pub members: usize,
}

impl ModelDynamics for GroundTruthModel {
    fn n_members(&self) -> usize {
        self.members
    }

    fn predict_batch(
        &self,
        member: usize,
        states: &Matrix,
        actions: &Matrix,
    ) -> Result<Matrix, DynamicsError> {
        if member >= self.members {
            return Err(DynamicsError::MemberIndex {
                index: member,
                members: self.members,
            });
        }
        let rows: Vec<Vec<f32>> = (0..states.rows())
            .map(|i| self.spec.step(states.row(i), actions.row(i)))
            .collect();
        Ok(Matrix::from_rows(&rows))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannerConfig {
    /// Candidate first actions.
    pub candidates: usize,
    /// Rollouts per candidate.
    pub rollouts: usize,
    /// Rollout depth after the first predicted state.
    pub depth: usize,
    pub kappa: f32,
    pub discount: f32,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            candidates: 64,
            rollouts: 4,
            depth: 10,
            kappa: 5.0,
            discount: 1.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.candidates == 0 || self.rollouts == 0 || self.depth == 0 {
            return Err(PlannerError::Config("C, H and K must be at least 1".into()));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(PlannerError::Config(format!("kappa {} must be finite and >= 0", self.kappa)));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(PlannerError::Config(format!("discount {} outside (0, 1]", self.discount)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PlanOutput {
    pub action: Vec<f32>,
    /// Candidate first actions, one per row.
    pub candidates: Matrix,
    /// Mean rollout return per candidate, before normalization.
    pub returns: Vec<f64>,
    pub weights: Vec<f64>,
    /// Rollouts that produced a non-finite state and were scored 0.
    pub nonfinite_rollouts: usize,
}

/// Advances each row through the member chosen for it.
fn step_members<M: ModelDynamics + ?Sized>(
    model: &M,
    states: &Matrix,
    actions: &Matrix,
    choice: &[usize],
) -> Result<Matrix, DynamicsError> {
    let mut next = Matrix::zeros(states.rows(), states.cols());
    for m in 0..model.n_members() {
        let rows: Vec<usize> = (0..choice.len()).filter(|&r| choice[r] == m).collect();
        if rows.is_empty() {
            continue;
        }
        let pred = model.predict_batch(m, &states.select_rows(&rows), &actions.select_rows(&rows))?;
        for (k, &r) in rows.iter().enumerate() {
            next.row_mut(r).copy_from_slice(pred.row(k));
        }
    }
    Ok(next)
}

/// Combines candidate actions with weights `softmax(κ · R̃)`, where `R̃` is
/// the returns divided by their sum. If the sum is zero or all returns are
/// equal the weights are uniform.
pub fn aggregate(candidates: &Matrix, returns: &[f64], kappa: f32) -> (Vec<f32>, Vec<f64>) {
    let c = returns.len();
    let total: f64 = returns.iter().sum();
    let all_equal = returns.iter().all(|&r| r == returns[0]);
    let weights = if total == 0.0 || all_equal || !total.is_finite() {
        vec![1.0 / c as f64; c]
    } else {
        let logits: Vec<f64> = returns.iter().map(|&r| kappa as f64 * r / total).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    };
    let mut action = vec![0.0f64; candidates.cols()];
    for (i, w) in weights.iter().enumerate() {
        for (a, &v) in action.iter_mut().zip(candidates.row(i)) {
            *a += w * v as f64;
        }
    }
    (action.into_iter().map(|a| a as f32).collect(), weights)
}

/// Plans one action for `(state, goal)`.
pub fn plan<M: ModelDynamics + ?Sized, P: Policy + ?Sized>(
    model: &M,
    policy: &P,
    spec: &EnvSpec,
    state: &[f32],
    goal: &[f32],
    config: &PlannerConfig,
    rng: &mut RngStream,
) -> Result<PlanOutput, PlannerError> {
    config.validate()?;
    let n_members = model.n_members();
    if n_members == 0 {
        return Err(PlannerError::Config("model has no members".into()));
    }
    let mut stream = RngStream::new(rng.next_u64());
    let c = config.candidates;
    let h = config.rollouts;

    let s0 = Matrix::row_vector(state).repeat_rows(c);
    let g_c = Matrix::row_vector(goal).repeat_rows(c);
    let candidates = policy.sample_actions(&s0, &g_c, &mut stream)?;
    let choice: Vec<usize> = (0..c).map(|_| stream.below(n_members)).collect();
    let first = step_members(model, &s0, &candidates, &choice)?;

    // Rows c*h .. (c+1)*h belong to candidate c.
    let mut states = first.repeat_rows(h);
    let goals = Matrix::row_vector(goal).repeat_rows(c * h);
    let mut returns = vec![0.0f64; c * h];
    let mut dead = vec![false; c * h];
    let score = |states: &Matrix, returns: &mut [f64], dead: &mut [bool], scale: f64| {
        for (r, ret) in returns.iter_mut().enumerate() {
            let row = states.row(r);
            if dead[r] || row.iter().any(|v| !v.is_finite()) {
                dead[r] = true;
                continue;
            }
            *ret += scale * spec.reward(row, goal) as f64;
        }
    };
    score(&states, &mut returns, &mut dead, 1.0);
    let mut scale = 1.0f64;
    for _ in 0..config.depth {
        scale *= config.discount as f64;
        let actions = policy.sample_actions(&states, &goals, &mut stream)?;
        let choice: Vec<usize> = (0..c * h).map(|_| stream.below(n_members)).collect();
        states = step_members(model, &states, &actions, &choice)?;
        score(&states, &mut returns, &mut dead, scale);
    }

    let nonfinite_rollouts = dead.iter().filter(|&&d| d).count();
    if nonfinite_rollouts > 0 {
        log::debug!("planner: {nonfinite_rollouts} rollouts hit non-finite states");
    }
    let mean_returns: Vec<f64> = (0..c)
        .map(|i| {
            (0..h)
                .map(|j| if dead[i * h + j] { 0.0 } else { returns[i * h + j] })
                .sum::<f64>()
                / h as f64
        })
        .collect();
    let (action, weights) = aggregate(&candidates, &mean_returns, config.kappa);
    Ok(PlanOutput {
        action,
        candidates,
        returns: mean_returns,
        weights,
        nonfinite_rollouts,
    })
}

/// Acts through [`plan`]; a drop-in [`Policy`] for evaluation.
pub struct Planned<'a, M: ?Sized, P: ?Sized> {
    pub model: &'a M,
    pub policy: &'a P,
    pub spec: &'a EnvSpec,
    pub config: PlannerConfig,
}

impl<M: ModelDynamics + ?Sized, P: Policy + ?Sized> Policy for Planned<'_, M, P> {
    fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }

    fn sample_actions(
        &self,
        states: &Matrix,
        goals: &Matrix,
        rng: &mut RngStream,
    ) -> Result<Matrix, NumericsError> {
        let mut out = Vec::with_capacity(states.rows());
        for i in 0..states.rows() {
            let p = plan(
                self.model,
                self.policy,
                self.spec,
                states.row(i),
                goals.row(i),
                &self.config,
                rng,
            )
            .map_err(|e| NumericsError::Shape(e.to_string()))?;
            out.push(p.action);
        }
        Ok(Matrix::from_rows(&out))
    }
}
