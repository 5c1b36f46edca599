use super::{GanConfig, GanPolicy, Policy, PolicyError};
use crate::buffer::SampleBatch;
use crate::env::{goal_feature_dim, goal_features};
use crate::numerics::{
    Activation, Adam, Matrix, Mlp, NetConfig, NumericsError, RngStream, StepOutcome, UpdateOutcome,
};

pub const LOG_STD_MIN: f32 = -5.0;
pub const LOG_STD_MAX: f32 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Gaussian,
    WeightedGaussian,
    CganUnweighted,
    Cvae,
    WeightedCvae,
}

impl BaselineKind {
    pub fn parse(name: &str) -> Result<Self, PolicyError> {
        Ok(match name {
            "gaussian" => BaselineKind::Gaussian,
            "weighted_gaussian" => BaselineKind::WeightedGaussian,
            "cgan_unweighted" => BaselineKind::CganUnweighted,
            "cvae" => BaselineKind::Cvae,
            "weighted_cvae" => BaselineKind::WeightedCvae,
            other => return Err(PolicyError::UnknownKind(other.into())),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Gaussian => "gaussian",
            BaselineKind::WeightedGaussian => "weighted_gaussian",
            BaselineKind::CganUnweighted => "cgan_unweighted",
            BaselineKind::Cvae => "cvae",
            BaselineKind::WeightedCvae => "weighted_cvae",
        }
    }
}

/// Diagonal Gaussian policy. The network emits `[mean_raw, log_std_raw]`;
/// the mean is `bound · tanh(mean_raw)` and the log-std is clamped to
/// `[LOG_STD_MIN, LOG_STD_MAX]`.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    net: Mlp,
    opt: Adam,
    action_dim: usize,
    action_bound: f32,
}

impl GaussianPolicy {
    pub fn new(
        state_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        action_bound: f32,
        net: &NetConfig,
        rng: &mut RngStream,
    ) -> Result<Self, NumericsError> {
        Ok(Self {
            net: net.build(goal_feature_dim(state_dim, goal_dim), 2 * action_dim, Activation::Identity, rng)?,
            opt: Adam::new(net.adam),
            action_dim,
            action_bound,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn split_heads(&self, out: &Matrix) -> (Matrix, Matrix) {
        let mean = out
            .columns(0, self.action_dim)
            .map(|v| self.action_bound * v.tanh());
        let log_std = out
            .columns(self.action_dim, self.action_dim)
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        (mean, log_std)
    }

    pub fn mean_and_log_std(
        &self,
        states: &Matrix,
        goals: &Matrix,
    ) -> Result<(Matrix, Matrix), NumericsError> {
        let out = self.net.infer(&goal_features(states, goals))?;
        Ok(self.split_heads(&out))
    }

    /// Weighted negative log-likelihood `−Σ w·log N(a; μ, σ) / Σ w`, with
    /// gradients accumulated into the network.
    pub fn loss_grads(
        &mut self,
        states: &Matrix,
        actions: &Matrix,
        goals: &Matrix,
        weights: &[f32],
    ) -> Result<f32, NumericsError> {
        let n = states.rows();
        let d = self.action_dim;
        let out = self.net.forward(&goal_features(states, goals))?;
        let total_w: f64 = weights.iter().map(|&w| w as f64).sum();
        let mut upstream = Matrix::zeros(n, 2 * d);
        if total_w <= 0.0 {
            self.net.backward(&upstream)?;
            return Ok(0.0);
        }
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut loss = 0.0f64;
        for i in 0..n {
            let scale = (weights[i] as f64 / total_w) as f32;
            for j in 0..d {
                let raw_mean = out.get(i, j);
                let t = raw_mean.tanh();
                let mu = self.action_bound * t;
                let raw_ls = out.get(i, d + j);
                let ls = raw_ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let inv_var = (-2.0 * ls).exp();
                let diff = actions.get(i, j) - mu;
                let z2 = diff * diff * inv_var;
                loss += weights[i] as f64 * (0.5 * z2 as f64 + ls as f64 + half_log_2pi);
                let d_mu = -diff * inv_var;
                upstream.set(i, j, scale * d_mu * self.action_bound * (1.0 - t * t));
                if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_ls) {
                    upstream.set(i, d + j, scale * (1.0 - z2));
                }
            }
        }
        self.net.backward(&upstream)?;
        Ok((loss / total_w) as f32)
    }

    pub fn update(
        &mut self,
        states: &Matrix,
        actions: &Matrix,
        goals: &Matrix,
        weights: &[f32],
    ) -> Result<UpdateOutcome, NumericsError> {
        let loss = self.loss_grads(states, actions, goals, weights)?;
        let applied = loss.is_finite() && self.opt.step_mlp(&mut self.net) == StepOutcome::Applied;
        if !applied {
            self.net.zero_grad();
        }
        Ok(UpdateOutcome {
            loss,
            skipped: !applied,
        })
    }
}

impl Policy for GaussianPolicy {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn sample_actions(
        &self,
        states: &Matrix,
        goals: &Matrix,
        rng: &mut RngStream,
    ) -> Result<Matrix, NumericsError> {
        let (mut mean, log_std) = self.mean_and_log_std(states, goals)?;
        let b = self.action_bound;
        for (m, ls) in mean.as_mut_slice().iter_mut().zip(log_std.as_slice()) {
            *m = (*m + ls.exp() * rng.gaussian() as f32).clamp(-b, b);
        }
        Ok(mean)
    }
}

/// Acts with the mean of a Gaussian policy.
#[derive(Clone, Copy, Debug)]
pub struct MeanAction<'a>(pub &'a GaussianPolicy);

impl Policy for MeanAction<'_> {
    fn action_dim(&self) -> usize {
        self.0.action_dim
    }

    fn sample_actions(
        &self,
        states: &Matrix,
        goals: &Matrix,
        _rng: &mut RngStream,
    ) -> Result<Matrix, NumericsError> {
        Ok(self.0.mean_and_log_std(states, goals)?.0)
    }
}

#[derive(Clone, Debug)]
pub enum BaselineGenerator {
    Gaussian {
        kind: BaselineKind,
        policy: GaussianPolicy,
    },
    Cgan(GanPolicy),
}

impl BaselineGenerator {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineGenerator::Gaussian { kind, .. } => *kind,
            BaselineGenerator::Cgan(_) => BaselineKind::CganUnweighted,
        }
    }
}

impl Policy for BaselineGenerator {
    fn action_dim(&self) -> usize {
        match self {
            BaselineGenerator::Gaussian { policy, .. } => policy.action_dim(),
            BaselineGenerator::Cgan(p) => p.action_dim(),
        }
    }

    fn sample_actions(
        &self,
        states: &Matrix,
        goals: &Matrix,
        rng: &mut RngStream,
    ) -> Result<Matrix, NumericsError> {
        match self {
            BaselineGenerator::Gaussian { policy, .. } => policy.sample_actions(states, goals, rng),
            BaselineGenerator::Cgan(p) => p.sample_actions(states, goals, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub batch: usize,
    pub net: NetConfig,
    pub gan: GanConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 256,
            net: NetConfig::default(),
            gan: GanConfig::default(),
        }
    }
}

fn subset(data: &SampleBatch, idx: &[usize]) -> SampleBatch {
    SampleBatch {
        states: data.states.select_rows(idx),
        actions: data.actions.select_rows(idx),
        goals: data.goals.select_rows(idx),
        next_states: data.next_states.select_rows(idx),
        rewards: idx.iter().map(|&i| data.rewards[i]).collect(),
        dones: idx.iter().map(|&i| data.dones[i]).collect(),
    }
}

fn draw_indices(n: usize, batch: usize, rng: &mut RngStream) -> Vec<usize> {
    (0..batch).map(|_| rng.below(n)).collect()
}

/// Alternating discriminator / generator steps on a fixed dataset.
/// `weights` defaults to all ones. Returns the last (disc, gen) losses.
pub fn fit_gan(
    policy: &mut GanPolicy,
    data: &SampleBatch,
    weights: Option<&[f32]>,
    steps: usize,
    batch: usize,
    rng: &mut RngStream,
) -> Result<(f32, f32), PolicyError> {
    if data.is_empty() {
        return Err(PolicyError::Empty("dataset"));
    }
    let mut last = (f32::NAN, f32::NAN);
    for _ in 0..steps {
        let idx = draw_indices(data.len(), batch, rng);
        let sub = subset(data, &idx);
        let w: Vec<f32> = match weights {
            Some(w) => idx.iter().map(|&i| w[i]).collect(),
            None => vec![1.0; idx.len()],
        };
        let d = policy.discriminator_update(&sub, &w, rng)?;
        let g = policy.generator_update(&sub.states, &sub.goals, rng)?;
        last = (d.loss, g.loss);
    }
    Ok(last)
}

/// Fits one of the comparison generators. Gaussian kinds maximize the
/// (weighted) log-likelihood; `cgan_unweighted` trains the adversarial
/// objective with unit weights. `weights` is only read by the weighted
/// kinds.
pub fn fit_baseline(
    kind: BaselineKind,
    data: &SampleBatch,
    weights: Option<&[f32]>,
    action_bound: f32,
    config: &FitConfig,
    rng: &mut RngStream,
) -> Result<BaselineGenerator, PolicyError> {
    if data.is_empty() {
        return Err(PolicyError::Empty("dataset"));
    }
    let (sd, ad, gd) = (data.states.cols(), data.actions.cols(), data.goals.cols());
    match kind {
        BaselineKind::Cvae | BaselineKind::WeightedCvae => {
            Err(PolicyError::NotImplemented(kind.name().into()))
        }
        BaselineKind::CganUnweighted => {
            let mut init = rng.split(0);
            let mut policy = GanPolicy::new(sd, gd, ad, action_bound, &config.net, config.gan, &mut init)?;
            fit_gan(&mut policy, data, None, config.steps, config.batch, rng)?;
            Ok(BaselineGenerator::Cgan(policy))
        }
        BaselineKind::Gaussian | BaselineKind::WeightedGaussian => {
            let mut init = rng.split(0);
            let mut policy = GaussianPolicy::new(sd, gd, ad, action_bound, &config.net, &mut init)?;
            let use_weights = if kind == BaselineKind::WeightedGaussian {
                weights
            } else {
                None
            };
            for _ in 0..config.steps {
                let idx = draw_indices(data.len(), config.batch, rng);
                let w: Vec<f32> = match use_weights {
                    Some(w) => idx.iter().map(|&i| w[i]).collect(),
                    None => vec![1.0; idx.len()],
                };
                policy.update(
                    &data.states.select_rows(&idx),
                    &data.actions.select_rows(&idx),
                    &data.goals.select_rows(&idx),
                    &w,
                )?;
            }
            Ok(BaselineGenerator::Gaussian { kind, policy })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeSeparation {
    /// Share of samples farther than δ from every mode center.
    pub ood_fraction: f64,
    /// Share of samples within δ of the highest-reward mode.
    pub high_reward_mass: f64,
}

pub fn mode_separation_metrics(
    samples: &[Vec<f32>],
    modes: &[Vec<f32>],
    high_mode: usize,
    delta: f32,
) -> Result<ModeSeparation, PolicyError> {
    if samples.is_empty() {
        return Err(PolicyError::Empty("samples"));
    }
    if modes.is_empty() || high_mode >= modes.len() {
        return Err(PolicyError::Empty("modes"));
    }
    let dist = |a: &[f32], b: &[f32]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let delta = delta as f64;
    let mut ood = 0usize;
    let mut high = 0usize;
    for s in samples {
        if modes.iter().all(|m| dist(s, m) > delta) {
            ood += 1;
        }
        if dist(s, &modes[high_mode]) <= delta {
            high += 1;
        }
    }
    let n = samples.len() as f64;
    Ok(ModeSeparation {
        ood_fraction: ood as f64 / n,
        high_reward_mass: high as f64 / n,
    })
}
