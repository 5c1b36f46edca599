use super::{Policy, PolicyError};
use crate::buffer::SampleBatch;
use crate::env::{goal_feature_dim, goal_features};
use crate::numerics::{
    sigmoid, softplus, Activation, Adam, AdamConfig, Checkpoint, Matrix, Mlp, NetConfig, NumericsError,
    RngStream, StepOutcome, UpdateOutcome,
};

/// Generator objective. The minimax form minimizes `log(1 − D(s, a', g))`
/// directly; the non-saturating form maximizes `log D(s, a', g)` instead,
/// which has the same fixed point but usable gradients early in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorLoss {
    NonSaturating,
    Minimax,
}

impl GeneratorLoss {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "non_saturating" => Some(GeneratorLoss::NonSaturating),
            "minimax" => Some(GeneratorLoss::Minimax),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub generator_loss: GeneratorLoss,
    /// Optimizer for both networks; adversarial training is run with a
    /// smaller step and first-moment decay than the other components.
    pub adam: AdamConfig,
    /// Trailing rate of the averaged generator used for acting; 0 makes it
    /// an exact copy of the trained generator.
    pub average_rate: f32,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            noise_dim: 8,
            generator_loss: GeneratorLoss::NonSaturating,
            adam: AdamConfig {
                lr: 3e-4,
                beta1: 0.5,
                ..AdamConfig::default()
            },
            average_rate: 0.99,
        }
    }
}

/// Conditional GAN policy.
///
/// Both networks see the goal features `[s, g, g − φ(s)]`. The generator
/// appends the noise `z` and emits a tanh-bounded action scaled by the
/// action bound. The discriminator appends `a / bound` and emits a logit;
/// `D = sigmoid(logit)` clamped into the open unit interval.
///
/// Actions are drawn from a parameter average of the generator that trails
/// every applied generator step; fake samples for training come from the
/// generator itself.
#[derive(Clone, Debug)]
pub struct GanPolicy {
    generator: Mlp,
    average: Mlp,
    discriminator: Mlp,
    gen_opt: Adam,
    disc_opt: Adam,
    state_dim: usize,
    goal_dim: usize,
    action_dim: usize,
    action_bound: f32,
    pub config: GanConfig,
    skipped: usize,
}

const PROB_FLOOR: f32 = 1e-7;

impl GanPolicy {
    pub fn new(
        state_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        action_bound: f32,
        net: &NetConfig,
        config: GanConfig,
        rng: &mut RngStream,
    ) -> Result<Self, NumericsError> {
        let generator = net.build(
            goal_feature_dim(state_dim, goal_dim) + config.noise_dim,
            action_dim,
            Activation::Tanh,
            rng,
        )?;
        let discriminator = net.build(
            goal_feature_dim(state_dim, goal_dim) + action_dim,
            1,
            Activation::Identity,
            rng,
        )?;
        Ok(Self {
            average: generator.clone(),
            generator,
            discriminator,
            gen_opt: Adam::new(config.adam),
            disc_opt: Adam::new(config.adam),
            state_dim,
            goal_dim,
            action_dim,
            action_bound,
            config,
            skipped: 0,
        })
    }

    pub fn generator(&self) -> &Mlp {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut Mlp {
        &mut self.generator
    }

    /// The averaged generator that `act` uses.
    pub fn acting_generator(&self) -> &Mlp {
        &self.average
    }

    /// Resets the averaged generator to the trained one.
    pub fn sync_average(&mut self) {
        self.average = self.generator.clone();
    }

    pub fn discriminator(&self) -> &Mlp {
        &self.discriminator
    }

    pub fn discriminator_mut(&mut self) -> &mut Mlp {
        &mut self.discriminator
    }

    pub fn noise_dim(&self) -> usize {
        self.config.noise_dim
    }

    pub fn action_bound(&self) -> f32 {
        self.action_bound
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn goal_dim(&self) -> usize {
        self.goal_dim
    }

    pub fn skipped_updates(&self) -> usize {
        self.skipped
    }

    pub fn sample_noise(&self, rows: usize, rng: &mut RngStream) -> Matrix {
        Matrix::from_vec(rows, self.config.noise_dim, rng.gaussian_vec(rows * self.config.noise_dim))
    }

    fn generate_with(
        &self,
        net: &Mlp,
        states: &Matrix,
        goals: &Matrix,
        noise: &Matrix,
    ) -> Result<Matrix, NumericsError> {
        let out = net.infer(&Matrix::hstack(&[&goal_features(states, goals), noise]))?;
        Ok(out.map(|v| v * self.action_bound))
    }

    /// Deterministic acting output for explicit noise.
    pub fn generate(
        &self,
        states: &Matrix,
        goals: &Matrix,
        noise: &Matrix,
    ) -> Result<Matrix, NumericsError> {
        self.generate_with(&self.average, states, goals, noise)
    }

    /// Output of the trained (not averaged) generator.
    pub fn generate_training(
        &self,
        states: &Matrix,
        goals: &Matrix,
        noise: &Matrix,
    ) -> Result<Matrix, NumericsError> {
        self.generate_with(&self.generator, states, goals, noise)
    }

    pub fn act_with_noise(&self, state: &[f32], goal: &[f32], noise: &[f32]) -> Result<Vec<f32>, NumericsError> {
        Ok(self
            .generate(
                &Matrix::row_vector(state),
                &Matrix::row_vector(goal),
                &Matrix::row_vector(noise),
            )?
            .into_vec())
    }

    fn disc_input(&self, states: &Matrix, actions: &Matrix, goals: &Matrix) -> Matrix {
        let scaled = actions.map(|v| v / self.action_bound);
        Matrix::hstack(&[&goal_features(states, goals), &scaled])
    }

    pub fn discriminator_logits(
        &self,
        states: &Matrix,
        actions: &Matrix,
        goals: &Matrix,
    ) -> Result<Vec<f32>, NumericsError> {
        Ok(self
            .discriminator
            .infer(&self.disc_input(states, actions, goals))?
            .into_vec())
    }

    /// `D(s, a, g)` for each row, strictly inside (0, 1).
    pub fn discriminate(
        &self,
        states: &Matrix,
        actions: &Matrix,
        goals: &Matrix,
    ) -> Result<Vec<f32>, NumericsError> {
        Ok(self
            .discriminator_logits(states, actions, goals)?
            .into_iter()
            .map(|l| sigmoid(l).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
            .collect())
    }

    /// Batch value of the weighted adversarial objective
    /// `mean(w · log D(s, a, g)) + mean(log(1 − D(s, a', g)))`.
    pub fn objective(
        &self,
        states: &Matrix,
        real_actions: &Matrix,
        goals: &Matrix,
        fake_actions: &Matrix,
        weights: &[f32],
    ) -> Result<f64, NumericsError> {
        let real = self.discriminator_logits(states, real_actions, goals)?;
        let fake = self.discriminator_logits(states, fake_actions, goals)?;
        let n = real.len() as f64;
        let real_term: f64 = real
            .iter()
            .zip(weights)
            .map(|(&l, &w)| -(w as f64) * softplus(-l) as f64)
            .sum();
        let fake_term: f64 = fake.iter().map(|&l| -(softplus(l) as f64)).sum();
        Ok(real_term / n + fake_term / n)
    }

    /// Discriminator loss (the negated objective) with gradients accumulated
    /// into the discriminator. `fake_actions` are generator samples.
    pub fn discriminator_loss_grads(
        &mut self,
        states: &Matrix,
        real_actions: &Matrix,
        goals: &Matrix,
        fake_actions: &Matrix,
        weights: &[f32],
    ) -> Result<f32, NumericsError> {
        let n = states.rows();
        if weights.len() != n || real_actions.rows() != n || fake_actions.rows() != n {
            return Err(NumericsError::Shape("discriminator batch sizes disagree".into()));
        }
        let real = self.disc_input(states, real_actions, goals);
        let fake = self.disc_input(states, fake_actions, goals);
        let mut data = real.into_vec();
        data.extend_from_slice(fake.as_slice());
        let stacked = Matrix::from_vec(2 * n, goal_feature_dim(self.state_dim, self.goal_dim) + self.action_dim, data);
        let logits = self.discriminator.forward(&stacked)?;
        let inv = 1.0 / n as f32;
        let mut upstream = Matrix::zeros(2 * n, 1);
        let mut loss = 0.0f64;
        for i in 0..n {
            let l = logits.get(i, 0);
            loss += (weights[i] * softplus(-l)) as f64;
            upstream.set(i, 0, -weights[i] * (1.0 - sigmoid(l)) * inv);
            let lf = logits.get(n + i, 0);
            loss += softplus(lf) as f64;
            upstream.set(n + i, 0, sigmoid(lf) * inv);
        }
        self.discriminator.backward(&upstream)?;
        Ok((loss / n as f64) as f32)
    }

    /// One ascent step of the discriminator on the weighted objective. The
    /// generator only produces the fake actions and is not updated.
    pub fn discriminator_update(
        &mut self,
        batch: &SampleBatch,
        weights: &[f32],
        rng: &mut RngStream,
    ) -> Result<UpdateOutcome, PolicyError> {
        let noise = self.sample_noise(batch.len(), rng);
        let fake = self.generate_training(&batch.states, &batch.goals, &noise)?;
        let loss = self.discriminator_loss_grads(
            &batch.states,
            &batch.actions,
            &batch.goals,
            &fake,
            weights,
        )?;
        Ok(self.finish(loss, true))
    }

    /// Generator loss for explicit noise, with gradients accumulated into
    /// the generator. Discriminator gradients produced on the way are
    /// discarded.
    pub fn generator_loss_grads(
        &mut self,
        states: &Matrix,
        goals: &Matrix,
        noise: &Matrix,
    ) -> Result<f32, NumericsError> {
        let n = states.rows();
        let unit_actions = self
            .generator
            .forward(&Matrix::hstack(&[&goal_features(states, goals), noise]))?;
        let input = Matrix::hstack(&[&goal_features(states, goals), &unit_actions]);
        let logits = self.discriminator.forward(&input)?;
        let inv = 1.0 / n as f32;
        let mut upstream = Matrix::zeros(n, 1);
        let mut loss = 0.0f64;
        for i in 0..n {
            let l = logits.get(i, 0);
            match self.config.generator_loss {
                GeneratorLoss::NonSaturating => {
                    loss += softplus(-l) as f64;
                    upstream.set(i, 0, -(1.0 - sigmoid(l)) * inv);
                }
                GeneratorLoss::Minimax => {
                    loss -= softplus(l) as f64;
                    upstream.set(i, 0, -sigmoid(l) * inv);
                }
            }
        }
        let d_input = self.discriminator.backward(&upstream)?;
        self.discriminator.zero_grad();
        let d_actions = d_input.columns(goal_feature_dim(self.state_dim, self.goal_dim), self.action_dim);
        self.generator.backward(&d_actions)?;
        Ok((loss / n as f64) as f32)
    }

    /// Generator loss value for explicit noise, without gradients.
    pub fn generator_loss(
        &self,
        states: &Matrix,
        goals: &Matrix,
        noise: &Matrix,
    ) -> Result<f32, NumericsError> {
        let actions = self.generate_training(states, goals, noise)?;
        let logits = self.discriminator_logits(states, &actions, goals)?;
        let total: f64 = logits
            .iter()
            .map(|&l| match self.config.generator_loss {
                GeneratorLoss::NonSaturating => softplus(-l) as f64,
                GeneratorLoss::Minimax => -(softplus(l) as f64),
            })
            .sum();
        Ok((total / logits.len() as f64) as f32)
    }

    pub fn generator_update(
        &mut self,
        states: &Matrix,
        goals: &Matrix,
        rng: &mut RngStream,
    ) -> Result<UpdateOutcome, PolicyError> {
        let noise = self.sample_noise(states.rows(), rng);
        let loss = self.generator_loss_grads(states, goals, &noise)?;
        let out = self.finish(loss, false);
        if !out.skipped {
            self.average.polyak_from(&self.generator, self.config.average_rate);
        }
        Ok(out)
    }

    fn finish(&mut self, loss: f32, discriminator: bool) -> UpdateOutcome {
        let (net, opt) = if discriminator {
            (&mut self.discriminator, &mut self.disc_opt)
        } else {
            (&mut self.generator, &mut self.gen_opt)
        };
        let applied = loss.is_finite() && opt.step_mlp(net) == StepOutcome::Applied;
        if !applied {
            net.zero_grad();
            self.skipped += 1;
            log::warn!("gan: non-finite loss, update skipped");
        }
        UpdateOutcome {
            loss,
            skipped: !applied,
        }
    }

    pub fn save(&self, ck: &mut Checkpoint) {
        ck.push_mlp("policy.generator", &self.generator);
        ck.push_mlp("policy.generator_average", &self.average);
        ck.push_mlp("policy.discriminator", &self.discriminator);
    }

    pub fn load(&mut self, ck: &Checkpoint) -> Result<(), NumericsError> {
        ck.load_mlp("policy.generator", &mut self.generator)?;
        ck.load_mlp("policy.generator_average", &mut self.average)?;
        ck.load_mlp("policy.discriminator", &mut self.discriminator)
    }
}

impl Policy for GanPolicy {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn sample_actions(
        &self,
        states: &Matrix,
        goals: &Matrix,
        rng: &mut RngStream,
    ) -> Result<Matrix, NumericsError> {
        let noise = self.sample_noise(states.rows(), rng);
        self.generate(states, goals, &noise)
    }
}
