//! Finetuning by reanalysis: imagine trajectories toward intra- and
//! inter-trajectory goals with the learned models, keep the ones the
//! ensemble is confident about, and finetune on them.

use std::collections::VecDeque;

use rand_core::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::buffer::{BufferError, SampleBatch, Trajectory, TrajectoryBuffer};
use crate::critic::{CriticError, ValueFunction};
use crate::dynamics::{disagreement, DynamicsError};
use crate::env::EnvSpec;
use crate::numerics::{Matrix, NumericsError, RngStream};
use crate::planner::{plan, ModelDynamics, PlannerConfig, PlannerError};
use crate::policy::{GanPolicy, Policy, PolicyError};

#[derive(Debug, Error)]
pub enum ReanalysisError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Which branch produced a stored trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// Imagined trajectory that reaches the segment's end goal.
    IntraImproved,
    /// Dataset segment kept because imagination failed or was uncertain.
    IntraOriginal,
    /// Imagined trajectory that reaches a goal from another trajectory.
    InterReached,
    /// Confident imagined trajectory relabeled with its own final goal.
    InterFrontier,
}

impl Provenance {
    pub const ALL: [Provenance; 4] = [
        Provenance::IntraImproved,
        Provenance::IntraOriginal,
        Provenance::InterReached,
        Provenance::InterFrontier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Provenance::IntraImproved => "intra_improved",
            Provenance::IntraOriginal => "intra_original",
            Provenance::InterReached => "inter_reached",
            Provenance::InterFrontier => "inter_frontier",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Produced by imagination rather than copied from the dataset.
    pub fn is_imagined(self) -> bool {
        self != Provenance::IntraOriginal
    }
}

/// Capped FIFO trajectory store with a provenance tag per trajectory.
#[derive(Clone, Debug)]
pub struct ReanalysisBuffer {
    store: TrajectoryBuffer,
    tags: VecDeque<Provenance>,
}

pub const DEFAULT_CAPACITY: usize = 50_000;

impl ReanalysisBuffer {
    pub fn new(spec: &EnvSpec, max_transitions: usize) -> Self {
        Self {
            store: TrajectoryBuffer::with_capacity(spec, max_transitions),
            tags: VecDeque::new(),
        }
    }

    pub fn insert(&mut self, traj: Trajectory, tag: Provenance) -> Result<(), BufferError> {
        let before = self.store.len();
        self.store.insert(traj)?;
        self.tags.push_back(tag);
        for _ in self.store.len()..before + 1 {
            self.tags.pop_front();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn transitions(&self) -> usize {
        self.store.transitions()
    }

    pub fn store(&self) -> &TrajectoryBuffer {
        &self.store
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Trajectory, Provenance)> {
        self.store.iter().zip(self.tags.iter().copied())
    }

    pub fn count(&self, tag: Provenance) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionSource {
    Planner,
    Policy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReanalysisConfig {
    /// Intra-trajectory segment length K.
    pub segment_len: usize,
    /// Inter-trajectory imagination horizon T.
    pub horizon: usize,
    pub action_source: ActionSource,
    pub planner: PlannerConfig,
    pub capacity: usize,
    pub batch: usize,
    pub future_ratio: f32,
    /// Train on B_re only instead of a 50/50 mix with the offline data.
    pub strict: bool,
}

impl Default for ReanalysisConfig {
    fn default() -> Self {
        Self {
            segment_len: 10,
            horizon: 50,
            action_source: ActionSource::Planner,
            planner: PlannerConfig::default(),
            capacity: DEFAULT_CAPACITY,
            batch: 256,
            future_ratio: 0.8,
            strict: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FinetuneSchedule {
    pub iterations: usize,
    pub intra: usize,
    pub inter: usize,
    pub value_steps: usize,
    pub disc_steps: usize,
    pub gen_steps: usize,
}

impl Default for FinetuneSchedule {
    fn default() -> Self {
        Self {
            iterations: 10,
            intra: 200,
            inter: 200,
            value_steps: 500,
            disc_steps: 500,
            gen_steps: 500,
        }
    }
}

impl FinetuneSchedule {
    pub fn validate(&self) -> Result<(), ReanalysisError> {
        if self.intra == 0 && self.inter == 0 {
            return Err(ReanalysisError::Schedule(
                "at least one of the intra and inter counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Frozen models used during generation.
pub struct Imagination<'a, M: ?Sized, P: ?Sized> {
    pub spec: &'a EnvSpec,
    pub model: &'a M,
    pub policy: &'a P,
    /// Uncertainty threshold `u`.
    pub threshold: f32,
    pub config: &'a ReanalysisConfig,
}

impl<M: ModelDynamics + ?Sized, P: Policy + ?Sized> Imagination<'_, M, P> {
    fn choose_action(
        &self,
        state: &[f32],
        goal: &[f32],
        rng: &mut RngStream,
    ) -> Result<Vec<f32>, ReanalysisError> {
        Ok(match self.config.action_source {
            ActionSource::Planner => {
                plan(self.model, self.policy, self.spec, state, goal, &self.config.planner, rng)?.action
            }
            ActionSource::Policy => self.policy.act(state, goal, rng)?,
        })
    }

    /// Step uncertainty and the next state from a uniformly drawn member.
    fn imagine_step(
        &self,
        state: &[f32],
        action: &[f32],
        rng: &mut RngStream,
    ) -> Result<(f32, Vec<f32>), ReanalysisError> {
        let s = Matrix::row_vector(state);
        let a = Matrix::row_vector(action);
        let preds = (0..self.model.n_members())
            .map(|i| self.model.predict_batch(i, &s, &a))
            .collect::<Result<Vec<_>, _>>()?;
        let u = disagreement(&preds)[0];
        let pick = rng.below(preds.len());
        Ok((u, preds[pick].row(0).to_vec()))
    }

    fn admissible(&self, u: f32, next: &[f32]) -> bool {
        u.is_finite() && u <= self.threshold && next.iter().all(|v| v.is_finite())
    }

    /// Tries to reach the end of a dataset segment faster. Returns the
    /// imagined trajectory when it reaches `φ(s_{t+K})` within K steps and
    /// stays under the threshold, otherwise the original segment.
    pub fn intra_traj(
        &self,
        offline: &TrajectoryBuffer,
        rng: &mut RngStream,
    ) -> Result<(Trajectory, Provenance), ReanalysisError> {
        let segment = offline
            .sample_intra_segment(self.config.segment_len, rng)?
            .trajectory;
        let goal = self.spec.phi(segment.final_state());
        let mut states = vec![segment.states[0].clone()];
        let mut actions = Vec::new();
        for _ in 0..self.config.segment_len {
            let s = states.last().unwrap().clone();
            let a = self.choose_action(&s, &goal, rng)?;
            let (u, next) = self.imagine_step(&s, &a, rng)?;
            if !self.admissible(u, &next) {
                return Ok((segment, Provenance::IntraOriginal));
            }
            let reached = self.spec.achieves(&next, &goal);
            actions.push(a);
            states.push(next);
            if reached {
                return Ok((
                    Trajectory {
                        states,
                        actions,
                        goal,
                    },
                    Provenance::IntraImproved,
                ));
            }
        }
        Ok((segment, Provenance::IntraOriginal))
    }

    /// Imagines from a dataset state toward a state of another trajectory.
    /// `None` when the ensemble becomes too uncertain.
    pub fn inter_traj(
        &self,
        offline: &TrajectoryBuffer,
        rng: &mut RngStream,
    ) -> Result<Option<(Trajectory, Provenance)>, ReanalysisError> {
        let pair = offline.sample_inter_pair(rng)?;
        let goal = self.spec.phi(&pair.target);
        Ok(self.imagine_from(pair.start, goal, rng)?)
    }

    /// The inter-trajectory rollout from an explicit start and goal.
    pub fn imagine_from(
        &self,
        start: Vec<f32>,
        goal: Vec<f32>,
        rng: &mut RngStream,
    ) -> Result<Option<(Trajectory, Provenance)>, ReanalysisError> {
        let mut states = vec![start];
        let mut actions = Vec::new();
        for _ in 0..self.config.horizon {
            let s = states.last().unwrap().clone();
            let a = self.choose_action(&s, &goal, rng)?;
            let (u, next) = self.imagine_step(&s, &a, rng)?;
            if !self.admissible(u, &next) {
                return Ok(None);
            }
            let reached = self.spec.achieves(&next, &goal);
            actions.push(a);
            states.push(next);
            if reached {
                return Ok(Some((
                    Trajectory {
                        states,
                        actions,
                        goal,
                    },
                    Provenance::InterReached,
                )));
            }
        }
        if actions.is_empty() {
            return Ok(None);
        }
        let goal = self.spec.phi(states.last().unwrap());
        Ok(Some((
            Trajectory {
                states,
                actions,
                goal,
            },
            Provenance::InterFrontier,
        )))
    }
}

/// Losses from one gradient phase; `None` where no step ran.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseLosses {
    pub value: Option<f32>,
    pub disc: Option<f32>,
    pub gen: Option<f32>,
    pub skipped: usize,
}

/// Runs `max(value, disc, gen)` steps; each component stops after its own
/// count. Every step draws a fresh batch from `sample`, and advantage
/// weights come from the critic as it is at that step.
pub fn gradient_phase(
    critic: &mut ValueFunction,
    policy: &mut GanPolicy,
    steps: (usize, usize, usize),
    mut sample: impl FnMut(&mut RngStream) -> Result<SampleBatch, BufferError>,
    rng: &mut RngStream,
    mut log_loss: impl FnMut(usize, &'static str, f32),
) -> Result<PhaseLosses, ReanalysisError> {
    let (value_steps, disc_steps, gen_steps) = steps;
    let mut out = PhaseLosses::default();
    for step in 0..value_steps.max(disc_steps).max(gen_steps) {
        let batch = sample(rng)?;
        if step < value_steps {
            let o = critic.td_update(&batch)?;
            out.skipped += o.skipped as usize;
            out.value = Some(o.loss);
            log_loss(step, "value", o.loss);
        }
        if step < disc_steps {
            let w = critic.advantage_weights(&batch)?;
            let o = policy.discriminator_update(&batch, &w, rng)?;
            out.skipped += o.skipped as usize;
            out.disc = Some(o.loss);
            log_loss(step, "discriminator", o.loss);
        }
        if step < gen_steps {
            let o = policy.generator_update(&batch.states, &batch.goals, rng)?;
            out.skipped += o.skipped as usize;
            out.gen = Some(o.loss);
            log_loss(step, "generator", o.loss);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub intra_improved: usize,
    pub intra_original: usize,
    pub inter_reached: usize,
    pub inter_frontier: usize,
    pub inter_rejected: usize,
    pub buffer_trajectories: usize,
    pub buffer_transitions: usize,
    pub losses: PhaseLosses,
    /// Gradient phase skipped because B_re was empty.
    pub skipped: bool,
}

impl IterationMetrics {
    pub const CSV_HEADER: &'static str = "iteration,intra_improved,intra_original,inter_reached,inter_frontier,inter_rejected,buffer_trajectories,buffer_transitions,value_loss,disc_loss,gen_loss,skipped";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f32>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.intra_improved,
            self.intra_original,
            self.inter_reached,
            self.inter_frontier,
            self.inter_rejected,
            self.buffer_trajectories,
            self.buffer_transitions,
            f(self.losses.value),
            f(self.losses.disc),
            f(self.losses.gen),
            self.skipped as u8
        )
    }
}

/// One outer finetuning iteration: generate into `reanalysis`, then run the
/// scheduled gradient steps.
#[allow(clippy::too_many_arguments)]
pub fn finetune_iteration<M: ModelDynamics + ?Sized>(
    iteration: usize,
    spec: &EnvSpec,
    model: &M,
    threshold: f32,
    critic: &mut ValueFunction,
    policy: &mut GanPolicy,
    offline: &TrajectoryBuffer,
    reanalysis: &mut ReanalysisBuffer,
    config: &ReanalysisConfig,
    schedule: &FinetuneSchedule,
    rng: &mut RngStream,
) -> Result<IterationMetrics, ReanalysisError> {
    schedule.validate()?;
    let mut metrics = IterationMetrics {
        iteration,
        ..IterationMetrics::default()
    };
    let frozen = policy.clone();
    let imagination = Imagination {
        spec,
        model,
        policy: &frozen,
        threshold,
        config,
    };
    let base = RngStream::new(rng.next_u64());
    let intra: Vec<(Trajectory, Provenance)> = (0..schedule.intra)
        .into_par_iter()
        .map(|j| imagination.intra_traj(offline, &mut base.split(j as u64)))
        .collect::<Result<_, _>>()?;
    let offset = schedule.intra as u64;
    let inter: Vec<Option<(Trajectory, Provenance)>> = (0..schedule.inter)
        .into_par_iter()
        .map(|j| imagination.inter_traj(offline, &mut base.split(offset + j as u64)))
        .collect::<Result<_, _>>()?;

    for (traj, tag) in intra.into_iter().chain(inter.iter().flatten().cloned()) {
        match tag {
            Provenance::IntraImproved => metrics.intra_improved += 1,
            Provenance::IntraOriginal => metrics.intra_original += 1,
            Provenance::InterReached => metrics.inter_reached += 1,
            Provenance::InterFrontier => metrics.inter_frontier += 1,
        }
        reanalysis.insert(traj, tag)?;
    }
    metrics.inter_rejected = inter.iter().filter(|o| o.is_none()).count();
    metrics.buffer_trajectories = reanalysis.len();
    metrics.buffer_transitions = reanalysis.transitions();

    if reanalysis.is_empty() {
        log::warn!("reanalysis: iteration {iteration} produced an empty buffer, finetuning skipped");
        metrics.skipped = true;
        return Ok(metrics);
    }
    let store = reanalysis.store();
    let (batch, ratio, strict) = (config.batch, config.future_ratio, config.strict);
    let sample = |r: &mut RngStream| {
        if strict {
            store.sample_batch(spec, batch, ratio, r)
        } else {
            let half = batch / 2;
            let a = store.sample_batch(spec, half, ratio, r)?;
            let b = offline.sample_batch(spec, batch - half, ratio, r)?;
            Ok(a.concat(&b))
        }
    };
    metrics.losses = gradient_phase(
        critic,
        policy,
        (schedule.value_steps, schedule.disc_steps, schedule.gen_steps),
        sample,
        rng,
        |_, _, _| {},
    )?;
    Ok(metrics)
}
