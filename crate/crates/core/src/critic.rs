//! Goal-conditioned state value function trained by TD-learning, and the
//! clipped exponential advantage weight used in the discriminator's real
//! term.

use thiserror::Error;

use crate::buffer::{RelabeledSample, SampleBatch};
use crate::env::{goal_feature_dim, goal_features};
use crate::numerics::{
    Activation, Adam, Checkpoint, Matrix, Mlp, NetConfig, NumericsError, RngStream, StepOutcome,
    UpdateOutcome,
};

#[derive(Debug, Error)]
pub enum CriticError {
    #[error("TD update on an empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticConfig {
    pub gamma: f32,
    /// Temperature of the advantage weight `exp(A / beta)`.
    pub beta: f32,
    pub w_max: f32,
    /// Target network trailing rate: `target ← polyak·target + (1−polyak)·online`.
    pub polyak: f32,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            beta: 1.0,
            w_max: 10.0,
            polyak: 0.995,
        }
    }
}

/// `clip(exp(A / beta), 0, w_max)`.
pub fn weight_from_advantage(advantage: f32, beta: f32, w_max: f32) -> f32 {
    let w = (advantage / beta).exp();
    if w.is_nan() {
        return 0.0;
    }
    w.clamp(0.0, w_max)
}

#[derive(Clone, Debug)]
pub struct ValueFunction {
    net: Mlp,
    target: Mlp,
    opt: Adam,
    pub config: CriticConfig,
    skipped: usize,
}

impl ValueFunction {
    pub fn new(
        state_dim: usize,
        goal_dim: usize,
        net_config: &NetConfig,
        config: CriticConfig,
        rng: &mut RngStream,
    ) -> Result<Self, NumericsError> {
        let net = net_config.build(goal_feature_dim(state_dim, goal_dim), 1, Activation::Identity, rng)?;
        Ok(Self {
            target: net.clone(),
            net,
            opt: Adam::new(net_config.adam),
            config,
            skipped: 0,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn target_net(&self) -> &Mlp {
        &self.target
    }

    pub fn skipped_updates(&self) -> usize {
        self.skipped
    }

    pub fn values(&self, states: &Matrix, goals: &Matrix) -> Result<Vec<f32>, NumericsError> {
        Ok(self.net.infer(&goal_features(states, goals))?.into_vec())
    }

    pub fn value(&self, state: &[f32], goal: &[f32]) -> Result<f32, NumericsError> {
        Ok(self.values(&Matrix::row_vector(state), &Matrix::row_vector(goal))?[0])
    }

    /// `r + γ·(1−done)·V_target(s', g)` for each row.
    pub fn td_targets(&self, batch: &SampleBatch) -> Result<Vec<f32>, NumericsError> {
        let next = self
            .target
            .infer(&goal_features(&batch.next_states, &batch.goals))?;
        Ok((0..batch.len())
            .map(|i| batch.rewards[i] + self.config.gamma * (1.0 - batch.dones[i]) * next.get(i, 0))
            .collect())
    }

    /// Mean squared TD error; gradients are accumulated into the online
    /// network without stepping.
    pub fn td_loss_grads(&mut self, batch: &SampleBatch) -> Result<f32, CriticError> {
        if batch.is_empty() {
            return Err(CriticError::EmptyBatch);
        }
        let targets = self.td_targets(batch)?;
        let v = self
            .net
            .forward(&goal_features(&batch.states, &batch.goals))?;
        let n = batch.len() as f32;
        let mut loss = 0.0f64;
        let mut upstream = Matrix::zeros(batch.len(), 1);
        for i in 0..batch.len() {
            let err = v.get(i, 0) - targets[i];
            loss += (err as f64).powi(2);
            upstream.set(i, 0, 2.0 * err / n);
        }
        self.net.backward(&upstream)?;
        Ok((loss / n as f64) as f32)
    }

    /// One TD step followed by the polyak update of the target network.
    pub fn td_update(&mut self, batch: &SampleBatch) -> Result<UpdateOutcome, CriticError> {
        let loss = self.td_loss_grads(batch)?;
        let applied = loss.is_finite() && self.opt.step_mlp(&mut self.net) == StepOutcome::Applied;
        if !applied {
            self.net.zero_grad();
            self.skipped += 1;
            log::warn!("critic: non-finite TD loss, update skipped");
            return Ok(UpdateOutcome {
                loss,
                skipped: true,
            });
        }
        self.target.polyak_from(&self.net, self.config.polyak);
        Ok(UpdateOutcome {
            loss,
            skipped: false,
        })
    }

    /// One-step advantage `r + γ(1−done)V(s', g) − V(s, g)` from the online
    /// network.
    pub fn advantages(&self, batch: &SampleBatch) -> Result<Vec<f32>, NumericsError> {
        let v = self.values(&batch.states, &batch.goals)?;
        let v_next = self.values(&batch.next_states, &batch.goals)?;
        Ok((0..batch.len())
            .map(|i| {
                batch.rewards[i] + self.config.gamma * (1.0 - batch.dones[i]) * v_next[i] - v[i]
            })
            .collect())
    }

    pub fn advantage_weights(&self, batch: &SampleBatch) -> Result<Vec<f32>, NumericsError> {
        Ok(self
            .advantages(batch)?
            .into_iter()
            .map(|a| weight_from_advantage(a, self.config.beta, self.config.w_max))
            .collect())
    }

    pub fn advantage_weight(&self, sample: &RelabeledSample) -> Result<f32, NumericsError> {
        let batch = SampleBatch::from_samples(std::slice::from_ref(sample));
        Ok(self.advantage_weights(&batch)?[0])
    }

    pub fn save(&self, ck: &mut Checkpoint) {
        ck.push_mlp("value.online", &self.net);
        ck.push_mlp("value.target", &self.target);
    }

    pub fn load(&mut self, ck: &Checkpoint) -> Result<(), NumericsError> {
        ck.load_mlp("value.online", &mut self.net)?;
        ck.load_mlp("value.target", &mut self.target)
    }
}
