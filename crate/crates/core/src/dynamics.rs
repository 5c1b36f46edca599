//! Ensemble of residual dynamics models `s' = s + Δ(s, a)` and the
//! disagreement used as an uncertainty signal.

use rand_core::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::buffer::Trajectory;
use crate::numerics::{
    Activation, Adam, Checkpoint, Matrix, Mlp, NetConfig, NumericsError, RngStream, StepOutcome,
};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid ensemble configuration: {0}")]
    Config(String),
    #[error("member index {index} out of range for {members} members")]
    MemberIndex { index: usize, members: usize },
    #[error("uncertainty of an empty trajectory")]
    EmptyTrajectory,
    #[error("need at least {needed} transitions, got {got}")]
    NotEnoughData { needed: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub const STD_FLOOR: f32 = 1e-6;

/// Per-dimension affine standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics of the given rows; standard deviations below
    /// [`STD_FLOOR`] are floored.
    pub fn fit(data: &Matrix, rows: &[usize]) -> Self {
        let d = data.cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0f64; d];
        for &r in rows {
            for (m, &v) in mean.iter_mut().zip(data.row(r)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; d];
        for &r in rows {
            for ((acc, &v), m) in var.iter_mut().zip(data.row(r)).zip(&mean) {
                *acc += (v as f64 - m).powi(2);
            }
        }
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var
                .iter()
                .map(|&v| ((v / n).sqrt() as f32).max(STD_FLOOR))
                .collect(),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        let d = x.cols();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        out
    }

    pub fn invert(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        let d = x.cols();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            let j = i % d;
            *v = *v * self.std[j] + self.mean[j];
        }
        out
    }
}

/// Flat transition table used for model fitting.
#[derive(Clone, Debug)]
pub struct Transitions {
    pub states: Matrix,
    pub actions: Matrix,
    pub next_states: Matrix,
}

impl Transitions {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut s = Vec::new();
        let mut a = Vec::new();
        let mut n = Vec::new();
        for t in trajs {
            for i in 0..t.len() {
                s.push(t.states[i].as_slice());
                a.push(t.actions[i].as_slice());
                n.push(t.states[i + 1].as_slice());
            }
        }
        Self {
            states: Matrix::from_rows(&s),
            actions: Matrix::from_rows(&a),
            next_states: Matrix::from_rows(&n),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            states: self.states.select_rows(rows),
            actions: self.actions.select_rows(rows),
            next_states: self.next_states.select_rows(rows),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsConfig {
    pub members: usize,
    pub batch: usize,
    pub bootstrap: bool,
    pub validation_fraction: f32,
    /// Quantile of held-out step uncertainty used as the threshold `u`.
    pub threshold_quantile: f32,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            members: 5,
            batch: 128,
            bootstrap: true,
            validation_fraction: 0.1,
            threshold_quantile: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Final validation MSE on normalized residuals, per member.
    pub member_val_mse: Vec<f32>,
    /// Mean validation MSE over members after each epoch.
    pub epoch_val_mse: Vec<f32>,
    pub threshold: f32,
}

#[derive(Clone, Debug)]
pub struct DynamicsEnsemble {
    members: Vec<Mlp>,
    seeds: Vec<u64>,
    opts: Vec<Adam>,
    input_norm: Normalizer,
    output_norm: Normalizer,
    state_dim: usize,
    action_dim: usize,
    threshold: f32,
    pub config: DynamicsConfig,
}

impl DynamicsEnsemble {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        net: &NetConfig,
        config: DynamicsConfig,
        rng: &mut RngStream,
    ) -> Result<Self, DynamicsError> {
        let seeds: Vec<u64> = (0..config.members).map(|_| rng.next_u64()).collect();
        Self::with_member_seeds(state_dim, action_dim, net, config, &seeds)
    }

    /// One initialization seed per member; equal seeds give equal members.
    pub fn with_member_seeds(
        state_dim: usize,
        action_dim: usize,
        net: &NetConfig,
        config: DynamicsConfig,
        seeds: &[u64],
    ) -> Result<Self, DynamicsError> {
        if config.members < 2 {
            return Err(DynamicsError::Config("an ensemble needs at least 2 members".into()));
        }
        if seeds.len() != config.members {
            return Err(DynamicsError::Config(format!(
                "{} seeds for {} members",
                seeds.len(),
                config.members
            )));
        }
        if !(0.0..1.0).contains(&config.validation_fraction)
            || !(0.0..=1.0).contains(&config.threshold_quantile)
            || config.batch == 0
        {
            return Err(DynamicsError::Config("bad fraction, quantile or batch".into()));
        }
        let members = seeds
            .iter()
            .map(|&s| net.build(state_dim + action_dim, state_dim, Activation::Identity, &mut RngStream::new(s)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            opts: vec![Adam::new(net.adam); members.len()],
            members,
            seeds: seeds.to_vec(),
            input_norm: Normalizer::identity(state_dim + action_dim),
            output_norm: Normalizer::identity(state_dim),
            state_dim,
            action_dim,
            threshold: f32::INFINITY,
            config,
        })
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Mlp] {
        &mut self.members
    }

    pub fn input_normalizer(&self) -> &Normalizer {
        &self.input_norm
    }

    pub fn output_normalizer(&self) -> &Normalizer {
        &self.output_norm
    }

    pub fn set_normalizers(&mut self, input: Normalizer, output: Normalizer) {
        self.input_norm = input;
        self.output_norm = output;
    }

    /// Uncertainty threshold `u`; infinite until the ensemble is trained.
    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn set_threshold(&mut self, u: f32) {
        self.threshold = u;
    }

    fn check_index(&self, index: usize) -> Result<(), DynamicsError> {
        if index >= self.members.len() {
            return Err(DynamicsError::MemberIndex {
                index,
                members: self.members.len(),
            });
        }
        Ok(())
    }

    /// Next states predicted by member `index` (0-based) for each row.
    pub fn predict_batch(
        &self,
        index: usize,
        states: &Matrix,
        actions: &Matrix,
    ) -> Result<Matrix, DynamicsError> {
        self.check_index(index)?;
        let input = self.input_norm.apply(&Matrix::hstack(&[states, actions]));
        let residual = self.output_norm.invert(&self.members[index].infer(&input)?);
        let mut next = states.clone();
        next.add_assign(&residual);
        Ok(next)
    }

    pub fn predict(&self, index: usize, state: &[f32], action: &[f32]) -> Result<Vec<f32>, DynamicsError> {
        Ok(self
            .predict_batch(index, &Matrix::row_vector(state), &Matrix::row_vector(action))?
            .into_vec())
    }

    /// `(1/N) Σ_i ‖M_i(s, a) − s̄‖²` for each row.
    pub fn step_uncertainty_batch(
        &self,
        states: &Matrix,
        actions: &Matrix,
    ) -> Result<Vec<f32>, DynamicsError> {
        let preds = (0..self.members.len())
            .map(|i| self.predict_batch(i, states, actions))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(disagreement(&preds))
    }

    pub fn step_uncertainty(&self, state: &[f32], action: &[f32]) -> Result<f32, DynamicsError> {
        Ok(self.step_uncertainty_batch(&Matrix::row_vector(state), &Matrix::row_vector(action))?[0])
    }

    /// Maximum step uncertainty along a trajectory; `states` may carry the
    /// trailing final state, only the first `actions.len()` are used.
    pub fn trajectory_uncertainty(
        &self,
        states: &[Vec<f32>],
        actions: &[Vec<f32>],
    ) -> Result<f32, DynamicsError> {
        if actions.is_empty() {
            return Err(DynamicsError::EmptyTrajectory);
        }
        if states.len() < actions.len() {
            return Err(DynamicsError::Config("fewer states than actions".into()));
        }
        let u = self.step_uncertainty_batch(
            &Matrix::from_rows(&states[..actions.len()]),
            &Matrix::from_rows(actions),
        )?;
        Ok(u.into_iter().fold(0.0, f32::max))
    }

    /// Fits every member on its own bootstrap resample of 90% of the data and
    /// sets `u` from the held-out 10%.
    pub fn train_ensemble(
        &mut self,
        data: &Transitions,
        epochs: usize,
        rng: &mut RngStream,
    ) -> Result<TrainReport, DynamicsError> {
        let n = data.len();
        let needed = 2 * self.members.len() * self.config.batch;
        if n < needed {
            return Err(DynamicsError::NotEnoughData { needed, got: n });
        }
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, rng);
        let n_val = ((n as f32 * self.config.validation_fraction).round() as usize).max(1);
        let (val_idx, train_idx) = order.split_at(n_val);

        let inputs = Matrix::hstack(&[&data.states, &data.actions]);
        let residuals = data.next_states.sub(&data.states);
        self.input_norm = Normalizer::fit(&inputs, train_idx);
        self.output_norm = Normalizer::fit(&residuals, train_idx);
        let x = self.input_norm.apply(&inputs);
        let y = self.output_norm.apply(&residuals);
        let x_val = x.select_rows(val_idx);
        let y_val = y.select_rows(val_idx);

        let batch = self.config.batch;
        let bootstrap = self.config.bootstrap;
        // Each member's shuffling and resampling follows its own seed, so
        // members with equal seeds on equal data train identically.
        let draw = rng.next_u64();
        let streams: Vec<RngStream> = self.seeds.iter().map(|&s| RngStream::new(s).split(draw)).collect();
        let curves: Vec<Vec<f32>> = self
            .members
            .par_iter_mut()
            .zip(self.opts.par_iter_mut())
            .zip(streams)
            .map(|((net, opt), mut stream)| {
                let mut idx: Vec<usize> = if bootstrap {
                    (0..train_idx.len())
                        .map(|_| train_idx[stream.below(train_idx.len())])
                        .collect()
                } else {
                    train_idx.to_vec()
                };
                let mut curve = Vec::with_capacity(epochs);
                for _ in 0..epochs {
                    shuffle(&mut idx, &mut stream);
                    for chunk in idx.chunks(batch) {
                        fit_step(net, opt, &x.select_rows(chunk), &y.select_rows(chunk))?;
                    }
                    curve.push(mse(&net.infer(&x_val)?, &y_val));
                }
                Ok(curve)
            })
            .collect::<Result<_, NumericsError>>()?;

        let epoch_val_mse = (0..epochs)
            .map(|e| curves.iter().map(|c| c[e]).sum::<f32>() / curves.len() as f32)
            .collect();
        let member_val_mse = self
            .members
            .iter()
            .map(|m| Ok(mse(&m.infer(&x_val)?, &y_val)))
            .collect::<Result<Vec<_>, NumericsError>>()?;

        let held_out = data.select(val_idx);
        let mut u = self.step_uncertainty_batch(&held_out.states, &held_out.actions)?;
        self.threshold = quantile(&mut u, self.config.threshold_quantile);
        Ok(TrainReport {
            member_val_mse,
            epoch_val_mse,
            threshold: self.threshold,
        })
    }

    /// Training loss of member `index`: mean squared error between the
    /// normalized predicted and true residuals under the current
    /// normalizers. Gradients accumulate into the member without a step.
    pub fn loss_grads(&mut self, index: usize, data: &Transitions) -> Result<f32, DynamicsError> {
        self.check_index(index)?;
        let x = self.input_norm.apply(&Matrix::hstack(&[&data.states, &data.actions]));
        let y = self.output_norm.apply(&data.next_states.sub(&data.states));
        Ok(mse_grads(&mut self.members[index], &x, &y)?)
    }

    /// Mean squared next-state error of every member in raw units.
    pub fn prediction_mse(&self, data: &Transitions) -> Result<f32, DynamicsError> {
        let mut total = 0.0;
        for i in 0..self.members.len() {
            total += mse(&self.predict_batch(i, &data.states, &data.actions)?, &data.next_states);
        }
        Ok(total / self.members.len() as f32)
    }

    pub fn save(&self, ck: &mut Checkpoint) {
        for (i, m) in self.members.iter().enumerate() {
            ck.push_mlp(&format!("dynamics.{i}"), m);
        }
        ck.push_vector("dynamics.input_mean", &self.input_norm.mean);
        ck.push_vector("dynamics.input_std", &self.input_norm.std);
        ck.push_vector("dynamics.output_mean", &self.output_norm.mean);
        ck.push_vector("dynamics.output_std", &self.output_norm.std);
        ck.push_vector("dynamics.threshold", &[self.threshold]);
    }

    pub fn load(&mut self, ck: &Checkpoint) -> Result<(), NumericsError> {
        for (i, m) in self.members.iter_mut().enumerate() {
            ck.load_mlp(&format!("dynamics.{i}"), m)?;
        }
        let din = self.state_dim + self.action_dim;
        self.input_norm = Normalizer {
            mean: ck.vector("dynamics.input_mean", din)?,
            std: ck.vector("dynamics.input_std", din)?,
        };
        self.output_norm = Normalizer {
            mean: ck.vector("dynamics.output_mean", self.state_dim)?,
            std: ck.vector("dynamics.output_std", self.state_dim)?,
        };
        self.threshold = ck.scalar("dynamics.threshold")?;
        Ok(())
    }
}

/// Per-row mean squared deviation of member predictions from their mean.
pub fn disagreement(preds: &[Matrix]) -> Vec<f32> {
    let n = preds.len() as f64;
    let (rows, cols) = (preds[0].rows(), preds[0].cols());
    (0..rows)
        .map(|r| {
            let mut u = 0.0f64;
            for c in 0..cols {
                let mean = preds.iter().map(|p| p.get(r, c) as f64).sum::<f64>() / n;
                u += preds.iter().map(|p| (p.get(r, c) as f64 - mean).powi(2)).sum::<f64>();
            }
            (u / n) as f32
        })
        .collect()
}

/// Mean squared error over all entries; gradients accumulate into `net`.
fn mse_grads(net: &mut Mlp, x: &Matrix, y: &Matrix) -> Result<f32, NumericsError> {
    let pred = net.forward(x)?;
    let loss = mse(&pred, y);
    let scale = 2.0 / (pred.rows() * pred.cols()) as f32;
    let mut upstream = pred.sub(y);
    upstream.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
    net.backward(&upstream)?;
    Ok(loss)
}

fn fit_step(net: &mut Mlp, opt: &mut Adam, x: &Matrix, y: &Matrix) -> Result<(), NumericsError> {
    mse_grads(net, x, y)?;
    if opt.step_mlp(net) != StepOutcome::Applied {
        log::warn!("dynamics: non-finite gradient, update skipped");
    }
    Ok(())
}

fn mse(a: &Matrix, b: &Matrix) -> f32 {
    let n = a.as_slice().len().max(1) as f64;
    (a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / n) as f32
}

fn shuffle(v: &mut [usize], rng: &mut RngStream) {
    for i in (1..v.len()).rev() {
        v.swap(i, rng.below(i + 1));
    }
}

/// Linear-interpolated quantile; sorts `values` in place.
pub fn quantile(values: &mut [f32], q: f32) -> f32 {
    if values.is_empty() {
        return f32::INFINITY;
    }
    values.sort_by(f32::total_cmp);
    let pos = q as f64 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = (pos - lo as f64) as f32;
    values[lo] + (values[hi] - values[lo]) * frac
}
