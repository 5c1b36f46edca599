//! End-to-end stages shared by the CLI and the acceptance runs.

use thiserror::Error;

use crate::buffer::{BufferError, SampleBatch, Trajectory, TrajectoryBuffer};
use crate::config::RunConfig;
use crate::critic::{CriticError, ValueFunction};
use crate::dynamics::{DynamicsEnsemble, DynamicsError, Transitions};
use crate::env::{generate_dataset, generate_episodes, DatasetParams, EnvError, EnvSpec, Region};
use crate::numerics::{Checkpoint, Matrix, NumericsError, RngStream};
use crate::policy::{
    fit_baseline, fit_gan, mode_separation_metrics, BaselineKind, FitConfig, GanPolicy,
    GaussianPolicy, ModeSeparation, Policy, PolicyError,
};
use crate::reanalysis::{
    finetune_iteration, gradient_phase, IterationMetrics, ReanalysisBuffer, ReanalysisError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reanalysis(#[from] ReanalysisError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Value function, CGAN policy and dynamics ensemble.
#[derive(Clone, Debug)]
pub struct Agent {
    pub critic: ValueFunction,
    pub policy: GanPolicy,
    pub ensemble: DynamicsEnsemble,
}

impl Agent {
    /// Freshly initialized components; each draws from its own child stream.
    pub fn new(config: &RunConfig, spec: &EnvSpec, seed: u64) -> Result<Self, PipelineError> {
        let root = RngStream::new(seed);
        let critic = ValueFunction::new(
            spec.state_dim,
            spec.goal_dim,
            &config.net,
            config.critic,
            &mut root.split(1),
        )?;
        let policy = GanPolicy::new(
            spec.state_dim,
            spec.goal_dim,
            spec.action_dim,
            spec.action_bound,
            &config.net,
            config.gan,
            &mut root.split(2),
        )?;
        let ensemble = DynamicsEnsemble::new(
            spec.state_dim,
            spec.action_dim,
            &config.net,
            config.dynamics.clone(),
            &mut root.split(3),
        )?;
        Ok(Self {
            critic,
            policy,
            ensemble,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.critic.save(&mut ck);
        self.policy.save(&mut ck);
        self.ensemble.save(&mut ck);
        ck
    }

    pub fn from_checkpoint(
        config: &RunConfig,
        spec: &EnvSpec,
        ck: &Checkpoint,
    ) -> Result<Self, PipelineError> {
        let mut agent = Self::new(config, spec, 0)?;
        agent.critic.load(ck)?;
        agent.policy.load(ck)?;
        agent.ensemble.load(ck)?;
        Ok(agent)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub component: &'static str,
    pub loss: f32,
}

pub const LOSS_CSV_HEADER: &str = "step,component,loss";

impl LossRow {
    pub fn csv_row(&self) -> String {
        format!("{},{},{:.6}", self.step, self.component, self.loss)
    }
}

/// Under a goal split, both start positions and commanded goals are drawn
/// from its train region.
pub fn generate(config: &RunConfig, seed: u64) -> Result<Vec<Trajectory>, PipelineError> {
    let mut params = config.dataset.clone();
    if let Some(split) = config.split {
        for (key, region) in [
            ("dataset.start_region", &mut params.start_region),
            ("dataset.goal_region", &mut params.goal_region),
        ] {
            if *region != Region::All && *region != split.train {
                return Err(PipelineError::Config(format!(
                    "{key} = {} conflicts with the split's train region {}",
                    region.name(),
                    split.train.name()
                )));
            }
            *region = split.train;
        }
    }
    Ok(generate_dataset(&config.spec(), &params, seed)?)
}

/// Dynamics fitting followed by the joint value / discriminator / generator
/// steps on hindsight-relabeled batches.
pub fn pretrain(
    config: &RunConfig,
    spec: &EnvSpec,
    offline: &TrajectoryBuffer,
    seed: u64,
) -> Result<(Agent, Vec<LossRow>), PipelineError> {
    let mut agent = Agent::new(config, spec, seed)?;
    let root = RngStream::new(seed);
    let mut rows = Vec::new();
    if config.dynamics_epochs > 0 {
        let data = Transitions::from_trajectories(offline.iter());
        let report = agent
            .ensemble
            .train_ensemble(&data, config.dynamics_epochs, &mut root.split(4))?;
        for (e, &mse) in report.epoch_val_mse.iter().enumerate() {
            rows.push(LossRow {
                step: e,
                component: "dynamics",
                loss: mse,
            });
        }
    }
    let steps = config.pretrain_steps;
    if steps > 0 {
        let (batch, ratio) = (config.batch, config.future_ratio);
        gradient_phase(
            &mut agent.critic,
            &mut agent.policy,
            (steps, steps, steps),
            |r| offline.sample_batch(spec, batch, ratio, r),
            &mut root.split(5),
            |step, component, loss| {
                rows.push(LossRow {
                    step,
                    component,
                    loss,
                })
            },
        )?;
    }
    Ok((agent, rows))
}

/// Gaussian behavior cloning on the stored desired goals, for comparison.
pub fn train_bc(
    config: &RunConfig,
    spec: &EnvSpec,
    offline: &TrajectoryBuffer,
    seed: u64,
) -> Result<GaussianPolicy, PipelineError> {
    let root = RngStream::new(seed);
    let mut policy = GaussianPolicy::new(
        spec.state_dim,
        spec.goal_dim,
        spec.action_dim,
        spec.action_bound,
        &config.net,
        &mut root.split(6),
    )?;
    let mut rng = root.split(7);
    for _ in 0..config.bc_steps {
        let b = offline.sample_batch(spec, config.batch, 0.0, &mut rng)?;
        let w = vec![1.0; b.len()];
        policy.update(&b.states, &b.actions, &b.goals, &w)?;
    }
    Ok(policy)
}

pub struct ReanalysisOutcome {
    pub metrics: Vec<IterationMetrics>,
    pub buffer: ReanalysisBuffer,
}

/// The finetuning loop; the ensemble and its threshold stay frozen.
pub fn reanalyze(
    config: &RunConfig,
    spec: &EnvSpec,
    agent: &mut Agent,
    offline: &TrajectoryBuffer,
    seed: u64,
) -> Result<ReanalysisOutcome, PipelineError> {
    let mut rng = RngStream::new(seed).split(8);
    let mut buffer = ReanalysisBuffer::new(spec, config.reanalysis.capacity);
    let mut metrics = Vec::new();
    for i in 0..config.schedule.iterations {
        let m = finetune_iteration(
            i,
            spec,
            &agent.ensemble,
            agent.ensemble.threshold(),
            &mut agent.critic,
            &mut agent.policy,
            offline,
            &mut buffer,
            &config.reanalysis,
            &config.schedule,
            &mut rng,
        )?;
        log::info!(
            "iteration {i}: improved {} original {} reached {} frontier {} rejected {}",
            m.intra_improved,
            m.intra_original,
            m.inter_reached,
            m.inter_frontier,
            m.inter_rejected
        );
        metrics.push(m);
    }
    Ok(ReanalysisOutcome { metrics, buffer })
}

#[derive(Clone, Debug)]
pub struct AppendixARow {
    pub model: &'static str,
    pub metrics: Result<ModeSeparation, String>,
    /// `(x, action)` pairs drawn from the fitted model.
    pub samples: Vec<(f32, f32)>,
}

pub const APPENDIX_A_MODELS: [&str; 4] = ["gaussian", "weighted_gaussian", "cgan", "weighted_cgan"];

/// Fits the four generators on a line_bandit dataset and scores their
/// samples against the known modes. Weighted models use the bandit reward
/// of each dataset action as its weight.
pub fn appendix_a(config: &RunConfig, seed: u64) -> Result<Vec<AppendixARow>, PipelineError> {
    let spec = EnvSpec::line_bandit();
    let a = &config.appendix_a;
    let params = DatasetParams {
        n_transitions: a.transitions,
        noise_std: a.noise_std,
        ..DatasetParams::default()
    };
    let episodes = generate_episodes(&spec, &params, seed)?;
    let trajs: Vec<Trajectory> = episodes.into_iter().map(|(t, _)| t).collect();
    // One-step episodes: each contributes exactly one (x, action) pair.
    let states: Vec<&[f32]> = trajs.iter().map(|t| t.states[0].as_slice()).collect();
    let actions: Vec<&[f32]> = trajs.iter().map(|t| t.actions[0].as_slice()).collect();
    let data = SampleBatch {
        states: Matrix::from_rows(&states),
        actions: Matrix::from_rows(&actions),
        goals: Matrix::from_rows(&states),
        next_states: Matrix::from_rows(&states),
        rewards: vec![0.0; states.len()],
        dones: vec![0.0; states.len()],
    };
    let weights: Vec<f32> = data
        .actions
        .as_slice()
        .iter()
        .map(|&act| spec.bandit.reward(act))
        .collect();
    let fit = FitConfig {
        steps: a.steps,
        batch: config.batch,
        net: config.net.clone(),
        gan: config.gan,
    };
    let root = RngStream::new(seed);
    let modes: Vec<Vec<f32>> = spec.bandit.centers.iter().map(|&c| vec![c]).collect();
    let high = spec.bandit.best_mode();

    let mut rows = Vec::new();
    for (i, &model) in APPENDIX_A_MODELS.iter().enumerate() {
        let mut rng = root.split(100 + i as u64);
        let fitted: Result<Box<dyn Policy>, PipelineError> = match model {
            "gaussian" => fit_baseline(BaselineKind::Gaussian, &data, None, spec.action_bound, &fit, &mut rng)
                .map(|p| Box::new(p) as Box<dyn Policy>)
                .map_err(Into::into),
            "weighted_gaussian" => fit_baseline(
                BaselineKind::WeightedGaussian,
                &data,
                Some(&weights),
                spec.action_bound,
                &fit,
                &mut rng,
            )
            .map(|p| Box::new(p) as Box<dyn Policy>)
            .map_err(Into::into),
            "cgan" => fit_baseline(BaselineKind::CganUnweighted, &data, None, spec.action_bound, &fit, &mut rng)
                .map(|p| Box::new(p) as Box<dyn Policy>)
                .map_err(Into::into),
            _ => weighted_cgan(&spec, &data, &weights, &fit, &mut rng)
                .map(|p| Box::new(p) as Box<dyn Policy>),
        };
        let row = match fitted {
            Ok(policy) => {
                let mut srng = root.split(200 + i as u64);
                let xs: Vec<f32> = (0..a.samples).map(|_| srng.uniform(0.0, 1.0)).collect();
                let s = Matrix::from_vec(xs.len(), 1, xs.clone());
                let acts = policy.sample_actions(&s, &s, &mut srng)?;
                let samples: Vec<Vec<f32>> = acts.row_iter().map(|r| r.to_vec()).collect();
                AppendixARow {
                    model,
                    metrics: mode_separation_metrics(&samples, &modes, high, a.delta)
                        .map_err(|e| e.to_string()),
                    samples: xs.into_iter().zip(acts.into_vec()).collect(),
                }
            }
            Err(e) => {
                log::error!("appendix-a: fitting {model} failed: {e}");
                AppendixARow {
                    model,
                    metrics: Err(e.to_string()),
                    samples: Vec::new(),
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

fn weighted_cgan(
    spec: &EnvSpec,
    data: &SampleBatch,
    weights: &[f32],
    fit: &FitConfig,
    rng: &mut RngStream,
) -> Result<GanPolicy, PipelineError> {
    let mut policy = GanPolicy::new(
        spec.state_dim,
        spec.goal_dim,
        spec.action_dim,
        spec.action_bound,
        &fit.net,
        fit.gan,
        &mut rng.split(0),
    )?;
    fit_gan(&mut policy, data, Some(weights), fit.steps, fit.batch, rng)?;
    Ok(policy)
}
