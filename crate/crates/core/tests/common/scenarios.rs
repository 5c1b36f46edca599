//! Scenarios shared by the integration tests and the acceptance run.
//! Gradient checks use the f64 reference networks in the parent module.

use goplan::buffer::{SampleBatch, TrajectoryBuffer};
use goplan::config::RunConfig;
use goplan::critic::{CriticConfig, ValueFunction};
use goplan::dynamics::{DynamicsConfig, DynamicsEnsemble, Normalizer, Transitions};
use goplan::env::{generate_dataset, DatasetParams, EnvSpec};
use goplan::eval::{ScriptedPolicy, UniformPolicy};
use goplan::numerics::{Matrix, Mlp, NetConfig, RngStream};
use goplan::pipeline::{generate, pretrain, reanalyze};
use goplan::planner::{aggregate, plan, GroundTruthModel, ModelDynamics, PlannerConfig};
use goplan::policy::{GanConfig, GanPolicy, GeneratorLoss};
use goplan::reanalysis::{ActionSource, Imagination, Provenance, ReanalysisBuffer, ReanalysisConfig};

use super::{cat, goal_features, probe_gradients, softplus, to64, Net64, ProbeReport};

const STATE_DIM: usize = 4;
const GOAL_DIM: usize = 2;
const ACTION_DIM: usize = 2;
const BOUND: f32 = 0.05;
const BATCH: usize = 6;

fn net_config() -> NetConfig {
    NetConfig {
        hidden_width: 12,
        hidden_layers: 2,
        ..NetConfig::default()
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f32, rng: &mut RngStream) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect())
}

fn rows64(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(to64).collect()
}

fn grads(m: &Mlp) -> Vec<Vec<f32>> {
    m.params().iter().map(|t| t.grad.clone()).collect()
}

pub fn value_td_loss(probes: usize, seed: u64) -> ProbeReport {
    let mut rng = RngStream::new(seed);
    let config = CriticConfig {
        gamma: 0.9,
        ..CriticConfig::default()
    };
    let mut vf = ValueFunction::new(STATE_DIM, GOAL_DIM, &net_config(), config, &mut rng.split(0)).unwrap();
    // Move the target away from the online net so targets are non-trivial.
    for t in vf.net_mut().params_mut() {
        t.values.iter_mut().for_each(|v| *v += 0.05 * rng.gaussian());
    }
    let batch = SampleBatch {
        states: random_matrix(BATCH, STATE_DIM, 1.0, &mut rng),
        actions: random_matrix(BATCH, ACTION_DIM, BOUND, &mut rng),
        goals: random_matrix(BATCH, GOAL_DIM, 1.0, &mut rng),
        next_states: random_matrix(BATCH, STATE_DIM, 1.0, &mut rng),
        rewards: (0..BATCH).map(|i| (i % 2) as f32).collect(),
        dones: (0..BATCH).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect(),
    };
    vf.net_mut().zero_grad();
    vf.td_loss_grads(&batch).unwrap();
    let analytic = grads(vf.net());

    let target = Net64::from_mlp(vf.target_net());
    let (s, g, s2) = (rows64(&batch.states), rows64(&batch.goals), rows64(&batch.next_states));
    let y: Vec<f64> = (0..BATCH)
        .map(|i| {
            let next = target.forward(&goal_features(&s2[i], &g[i]))[0];
            batch.rewards[i] as f64 + 0.9 * (1.0 - batch.dones[i] as f64) * next
        })
        .collect();
    probe_gradients(&Net64::from_mlp(vf.net()), &analytic, probes, seed ^ 0xa5, |net| {
        (0..BATCH)
            .map(|i| (net.forward(&goal_features(&s[i], &g[i]))[0] - y[i]).powi(2))
            .sum::<f64>()
            / BATCH as f64
    })
}

fn gan(seed: u64, loss: GeneratorLoss) -> GanPolicy {
    let config = GanConfig {
        noise_dim: 3,
        generator_loss: loss,
        ..GanConfig::default()
    };
    GanPolicy::new(
        STATE_DIM,
        GOAL_DIM,
        ACTION_DIM,
        BOUND,
        &net_config(),
        config,
        &mut RngStream::new(seed),
    )
    .unwrap()
}

pub fn discriminator_loss(probes: usize, seed: u64) -> ProbeReport {
    let mut rng = RngStream::new(seed);
    let mut policy = gan(seed, GeneratorLoss::NonSaturating);
    let states = random_matrix(BATCH, STATE_DIM, 1.0, &mut rng);
    let goals = random_matrix(BATCH, GOAL_DIM, 1.0, &mut rng);
    let real = random_matrix(BATCH, ACTION_DIM, BOUND, &mut rng);
    let fake = random_matrix(BATCH, ACTION_DIM, BOUND, &mut rng);
    let weights: Vec<f32> = (0..BATCH).map(|_| rng.uniform(0.0, 3.0)).collect();
    policy.discriminator_mut().zero_grad();
    policy
        .discriminator_loss_grads(&states, &real, &goals, &fake, &weights)
        .unwrap();
    let analytic = grads(policy.discriminator());

    let (s, g) = (rows64(&states), rows64(&goals));
    let scale = |m: &Matrix| -> Vec<Vec<f64>> {
        m.row_iter()
            .map(|r| r.iter().map(|&a| a as f64 / BOUND as f64).collect())
            .collect()
    };
    let (real, fake) = (scale(&real), scale(&fake));
    probe_gradients(&Net64::from_mlp(policy.discriminator()), &analytic, probes, seed ^ 0x5a, |net| {
        let mut total = 0.0;
        for i in 0..BATCH {
            let f = goal_features(&s[i], &g[i]);
            let l_real = net.forward(&cat(&[&f, &real[i]]))[0];
            let l_fake = net.forward(&cat(&[&f, &fake[i]]))[0];
            total += weights[i] as f64 * softplus(-l_real) + softplus(l_fake);
        }
        total / BATCH as f64
    })
}

pub fn generator_loss(probes: usize, seed: u64, loss: GeneratorLoss) -> ProbeReport {
    let mut rng = RngStream::new(seed);
    let mut policy = gan(seed, loss);
    let states = random_matrix(BATCH, STATE_DIM, 1.0, &mut rng);
    let goals = random_matrix(BATCH, GOAL_DIM, 1.0, &mut rng);
    let noise = random_matrix(BATCH, 3, 1.0, &mut rng);
    policy.generator_mut().zero_grad();
    policy.generator_loss_grads(&states, &goals, &noise).unwrap();
    let analytic = grads(policy.generator());

    let disc = Net64::from_mlp(policy.discriminator());
    let (s, g, z) = (rows64(&states), rows64(&goals), rows64(&noise));
    probe_gradients(&Net64::from_mlp(policy.generator()), &analytic, probes, seed ^ 0x3c, |net| {
        let mut total = 0.0;
        for i in 0..BATCH {
            let f = goal_features(&s[i], &g[i]);
            // Generator output is the action divided by the bound, which is
            // exactly what the discriminator consumes.
            let u = net.forward(&cat(&[&f, &z[i]]));
            let l = disc.forward(&cat(&[&f, &u]))[0];
            total += match loss {
                GeneratorLoss::NonSaturating => softplus(-l),
                GeneratorLoss::Minimax => -softplus(l),
            };
        }
        total / BATCH as f64
    })
}

pub fn dynamics_loss(probes: usize, seed: u64) -> ProbeReport {
    let mut rng = RngStream::new(seed);
    let config = DynamicsConfig {
        members: 2,
        ..DynamicsConfig::default()
    };
    let mut ens = DynamicsEnsemble::new(STATE_DIM, ACTION_DIM, &net_config(), config, &mut rng.split(0)).unwrap();
    let input = Normalizer {
        mean: (0..STATE_DIM + ACTION_DIM).map(|_| rng.uniform(-0.2, 0.2)).collect(),
        std: (0..STATE_DIM + ACTION_DIM).map(|_| rng.uniform(0.5, 2.0)).collect(),
    };
    let output = Normalizer {
        mean: (0..STATE_DIM).map(|_| rng.uniform(-0.01, 0.01)).collect(),
        std: (0..STATE_DIM).map(|_| rng.uniform(0.01, 0.1)).collect(),
    };
    ens.set_normalizers(input.clone(), output.clone());
    let data = Transitions {
        states: random_matrix(BATCH, STATE_DIM, 1.0, &mut rng),
        actions: random_matrix(BATCH, ACTION_DIM, BOUND, &mut rng),
        next_states: random_matrix(BATCH, STATE_DIM, 1.0, &mut rng),
    };
    let member = 1;
    ens.members_mut()[member].zero_grad();
    ens.loss_grads(member, &data).unwrap();
    let analytic = grads(&ens.members()[member]);

    let norm = |v: &[f64], n: &Normalizer| -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(j, &x)| (x - n.mean[j] as f64) / n.std[j] as f64)
            .collect()
    };
    let (s, a) = (rows64(&data.states), rows64(&data.actions));
    let x: Vec<Vec<f64>> = (0..BATCH).map(|i| norm(&cat(&[&s[i], &a[i]]), &input)).collect();
    let y: Vec<Vec<f64>> = (0..BATCH)
        .map(|i| {
            // The library forms the residual in f32 before normalizing.
            let r: Vec<f64> = (0..STATE_DIM)
                .map(|j| (data.next_states.get(i, j) - data.states.get(i, j)) as f64)
                .collect();
            norm(&r, &output)
        })
        .collect();
    probe_gradients(&Net64::from_mlp(&ens.members()[member]), &analytic, probes, seed ^ 0xc3, |net| {
        let mut total = 0.0;
        for i in 0..BATCH {
            let p = net.forward(&x[i]);
            total += p.iter().zip(&y[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        total / (BATCH * STATE_DIM) as f64
    })
}

/// Max |V − V*| over the non-terminal states of a 5-state chain 0→1→2→3→4
/// with reward 1 on entering 4, after `steps` full-batch TD updates.
pub fn chain_value_error(steps: usize, seed: u64) -> f64 {
    let gamma = 0.9;
    let reference = super::chain_values(
        &[1, 2, 3, 4, 4],
        &[0.0, 0.0, 0.0, 1.0, 0.0],
        &[false, false, false, true, true],
        gamma,
    );
    let config = CriticConfig {
        gamma: gamma as f32,
        polyak: 0.9,
        ..CriticConfig::default()
    };
    let net = NetConfig {
        hidden_width: 32,
        hidden_layers: 2,
        ..NetConfig::default()
    };
    let mut vf = ValueFunction::new(1, 1, &net, config, &mut RngStream::new(seed)).unwrap();
    let x = |i: usize| i as f32 / 4.0;
    let batch = SampleBatch {
        states: Matrix::from_vec(4, 1, (0..4).map(x).collect()),
        actions: Matrix::zeros(4, 1),
        goals: Matrix::filled(4, 1, 1.0),
        next_states: Matrix::from_vec(4, 1, (1..5).map(x).collect()),
        rewards: vec![0.0, 0.0, 0.0, 1.0],
        dones: vec![0.0, 0.0, 0.0, 1.0],
    };
    for _ in 0..steps {
        vf.td_update(&batch).unwrap();
    }
    let v = vf.values(&batch.states, &batch.goals).unwrap();
    (0..4)
        .map(|i| (v[i] as f64 - reference[i]).abs())
        .fold(0.0, f64::max)
}

/// Mean step uncertainty on held-out corridor transitions shifted by three
/// standard deviations per input dimension, divided by the mean on the same
/// transitions unshifted.
pub fn ood_uncertainty_ratio(seed: u64) -> f64 {

    let spec = EnvSpec::two_corridor_reach();
    let params = DatasetParams {
        n_transitions: 4000,
        ..DatasetParams::default()
    };
    let trajs = generate_dataset(&spec, &params, seed).unwrap();
    let buffer = TrajectoryBuffer::from_trajectories(&spec, trajs).unwrap();
    let data = Transitions::from_trajectories(buffer.iter());
    let n = data.len();
    let held: Vec<usize> = (0..n).filter(|i| i % 10 == 0).collect();
    let train: Vec<usize> = (0..n).filter(|i| i % 10 != 0).collect();
    let net = NetConfig {
        hidden_width: 64,
        hidden_layers: 2,
        ..NetConfig::default()
    };
    let mut rng = RngStream::new(seed);
    let mut ens = DynamicsEnsemble::new(spec.state_dim, spec.action_dim, &net, DynamicsConfig::default(), &mut rng)
        .unwrap();
    ens.train_ensemble(&data.select(&train), 20, &mut rng).unwrap();

    let test = data.select(&held);
    // Adds three per-column standard deviations of `reference` to `m`.
    let shift = |m: &Matrix, reference: &Matrix| -> Matrix {
        let rows = reference.rows() as f64;
        let mut out = m.clone();
        for j in 0..m.cols() {
            let mean = (0..reference.rows()).map(|r| reference.get(r, j) as f64).sum::<f64>() / rows;
            let var = (0..reference.rows())
                .map(|r| (reference.get(r, j) as f64 - mean).powi(2))
                .sum::<f64>()
                / rows;
            for r in 0..out.rows() {
                out.set(r, j, out.get(r, j) + 3.0 * var.sqrt() as f32);
            }
        }
        out
    };
    let u_in = ens.step_uncertainty_batch(&test.states, &test.actions).unwrap();
    let u_out = ens
        .step_uncertainty_batch(&shift(&test.states, &data.states), &shift(&test.actions, &data.actions))
        .unwrap();
    let mean = |u: &[f32]| u.iter().map(|&v| v as f64).sum::<f64>() / u.len() as f64;
    mean(&u_out) / mean(&u_in)
}

/// Largest step uncertainty over random inputs for an ensemble whose
/// members share one seed and see the same data.
pub fn identical_member_uncertainty(seed: u64) -> f32 {
    let mut rng = RngStream::new(seed);
    let data = Transitions {
        states: random_matrix(400, 3, 1.0, &mut rng),
        actions: random_matrix(400, 2, 1.0, &mut rng),
        next_states: random_matrix(400, 3, 1.0, &mut rng),
    };
    let config = DynamicsConfig {
        members: 4,
        batch: 32,
        bootstrap: false,
        ..DynamicsConfig::default()
    };
    let net = NetConfig {
        hidden_width: 16,
        hidden_layers: 2,
        ..NetConfig::default()
    };
    let mut ens = DynamicsEnsemble::with_member_seeds(3, 2, &net, config, &[seed; 4]).unwrap();
    ens.train_ensemble(&data, 2, &mut rng).unwrap();
    let s = random_matrix(100, 3, 3.0, &mut rng);
    let a = random_matrix(100, 2, 3.0, &mut rng);
    ens.step_uncertainty_batch(&s, &a).unwrap().into_iter().fold(0.0, f32::max)
}

/// Largest gaps between library predictions and uncertainty and an f64
/// recomputation through the normalizers and member networks.
pub fn uncertainty_brute_force_gap(seed: u64) -> (f64, f64) {
    let mut rng = RngStream::new(seed);
    let config = DynamicsConfig {
        members: 3,
        ..DynamicsConfig::default()
    };
    let net = NetConfig {
        hidden_width: 10,
        hidden_layers: 2,
        ..NetConfig::default()
    };
    let mut ens = DynamicsEnsemble::new(3, 2, &net, config, &mut rng).unwrap();
    let input = Normalizer {
        mean: vec![0.1, -0.2, 0.3, 0.0, 0.05],
        std: vec![0.5, 2.0, 1.5, 0.1, 0.3],
    };
    let output = Normalizer {
        mean: vec![0.01, -0.02, 0.0],
        std: vec![0.2, 0.05, 0.1],
    };
    ens.set_normalizers(input.clone(), output.clone());
    let nets: Vec<Net64> = ens.members().iter().map(Net64::from_mlp).collect();
    let (mut pred_gap, mut u_gap) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let s: Vec<f32> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let a: Vec<f32> = (0..2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x: Vec<f64> = to64(&s)
            .into_iter()
            .chain(to64(&a))
            .enumerate()
            .map(|(j, v)| (v - input.mean[j] as f64) / input.std[j] as f64)
            .collect();
        let preds: Vec<Vec<f64>> = nets
            .iter()
            .map(|n| {
                n.forward(&x)
                    .iter()
                    .enumerate()
                    .map(|(j, r)| s[j] as f64 + r * output.std[j] as f64 + output.mean[j] as f64)
                    .collect()
            })
            .collect();
        for (i, p) in preds.iter().enumerate() {
            let lib = ens.predict(i, &s, &a).unwrap();
            for (l, o) in lib.iter().zip(p) {
                pred_gap = pred_gap.max((*l as f64 - o).abs());
            }
        }
        let mean: Vec<f64> = (0..3).map(|j| preds.iter().map(|p| p[j]).sum::<f64>() / 3.0).collect();
        let u: f64 = preds
            .iter()
            .map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / 3.0;
        let lib = ens.step_uncertainty(&s, &a).unwrap() as f64;
        u_gap = u_gap.max((lib - u).abs());
    }
    (pred_gap, u_gap)
}

/// Worst errors of the planner's limiting cases: κ = 0 against the
/// candidate mean, C = 1 against its candidate, and κ = 10³ against the
/// unique best candidate.
#[derive(Debug)]
pub struct PlannerLimits {
    pub zero_kappa: f64,
    pub single_candidate: f64,
    pub large_kappa: f64,
}

pub fn planner_limit_errors(probes: usize, seed: u64) -> PlannerLimits {
    let spec = EnvSpec::two_corridor_reach();
    let model = GroundTruthModel {
        spec: spec.clone(),
        members: 3,
    };
    let policy = UniformPolicy {
        action_dim: 2,
        bound: spec.action_bound,
    };
    let mut rng = RngStream::new(seed);
    let mut limits = PlannerLimits {
        zero_kappa: 0.0,
        single_candidate: 0.0,
        large_kappa: 0.0,
    };
    for _ in 0..probes {
        let (state, _) = spec.sample_task(goplan::env::Region::All, goplan::env::Region::All, &mut rng);
        let angle = rng.uniform(0.0, std::f32::consts::TAU);
        let goal = [
            (state[0] + 0.1 * angle.cos()).clamp(0.0, 1.0),
            (state[1] + 0.1 * angle.sin()).clamp(0.0, 1.0),
        ];
        let flat = PlannerConfig {
            kappa: 0.0,
            ..PlannerConfig::default()
        };
        let out = plan(&model, &policy, &spec, &state, &goal, &flat, &mut rng).unwrap();
        for j in 0..2 {
            let c = out.candidates.rows();
            let mean = (0..c).map(|i| out.candidates.get(i, j) as f64).sum::<f64>() / c as f64;
            limits.zero_kappa = limits.zero_kappa.max((out.action[j] as f64 - mean).abs());
        }
        let one = PlannerConfig {
            candidates: 1,
            ..PlannerConfig::default()
        };
        let out = plan(&model, &policy, &spec, &state, &goal, &one, &mut rng).unwrap();
        for (a, c) in out.action.iter().zip(out.candidates.row(0)) {
            limits.single_candidate = limits.single_candidate.max((a - c).abs() as f64);
        }
        // Distinct returns in (0, 1] so the maximizer is unique.
        let c = 16;
        let cands = random_matrix(c, 2, spec.action_bound, &mut rng);
        let returns: Vec<f64> = (0..c).map(|i| (i + 1) as f64 / c as f64).collect();
        let mut order: Vec<usize> = (0..c).collect();
        for i in (1..c).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let shuffled: Vec<f64> = order.iter().map(|&i| returns[i]).collect();
        let best = (0..c).find(|&i| order[i] == c - 1).unwrap();
        let (action, _) = aggregate(&cands, &shuffled, 1e3);
        for (a, b) in action.iter().zip(cands.row(best)) {
            limits.large_kappa = limits.large_kappa.max((a - b).abs() as f64);
        }
    }
    limits
}

/// Share of random (s, g) probes on which the planner, run on exact
/// dynamics with uniform candidates, ends its first step closer to the
/// goal than the mean candidate does. Goals lie 0.08 to 0.15 away on the
/// same side of the wall, within reach of the default rollout depth.
pub fn planner_improvement_rate(probes: usize, seed: u64) -> f64 {
    let spec = EnvSpec::two_corridor_reach();
    let model = GroundTruthModel {
        spec: spec.clone(),
        members: 5,
    };
    let policy = UniformPolicy {
        action_dim: 2,
        bound: spec.action_bound,
    };
    let config = PlannerConfig::default();
    let mut rng = RngStream::new(seed);
    let mut wins = 0;
    for _ in 0..probes {
        let upper = rng.bernoulli(0.5);
        let pos = [
            rng.uniform(0.2, 0.8),
            if upper { rng.uniform(0.7, 0.8) } else { rng.uniform(0.2, 0.3) },
        ];
        let angle = rng.uniform(0.0, std::f32::consts::TAU);
        let r = rng.uniform(0.08, 0.15);
        let goal = [pos[0] + r * angle.cos(), pos[1] + r * angle.sin()];
        let state = spec.state_at(&pos);
        let out = plan(&model, &policy, &spec, &state, &goal, &config, &mut rng).unwrap();
        let mean: Vec<f32> = (0..2)
            .map(|j| (0..out.candidates.rows()).map(|i| out.candidates.get(i, j)).sum::<f32>() / out.candidates.rows() as f32)
            .collect();
        let planned = spec.goal_distance(&spec.step(&state, &out.action), &goal);
        let averaged = spec.goal_distance(&spec.step(&state, &mean), &goal);
        if planned < averaged {
            wins += 1;
        }
    }
    wins as f64 / probes as f64
}

/// Violations found by replaying a reanalysis buffer against the frozen
/// ensemble and the offline data it was generated from.
#[derive(Debug, Default)]
pub struct BufferAudit {
    pub imagined: usize,
    pub intra_improved: usize,
    pub inter_reached: usize,
    pub inter_frontier: usize,
    pub violations: Vec<String>,
}

/// Step uncertainty from the member predictions, accumulated in f64.
fn replay_uncertainty(model: &dyn ModelDynamics, s: &[f32], a: &[f32]) -> f64 {
    let (s, a) = (Matrix::row_vector(s), Matrix::row_vector(a));
    let preds: Vec<Vec<f64>> = (0..model.n_members())
        .map(|i| to64(model.predict_batch(i, &s, &a).unwrap().row(0)))
        .collect();
    let n = preds.len() as f64;
    (0..preds[0].len())
        .map(|c| {
            let mean = preds.iter().map(|p| p[c]).sum::<f64>() / n;
            preds.iter().map(|p| (p[c] - mean).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        / n
}

fn within_radius(spec: &EnvSpec, state: &[f32], goal: &[f32]) -> bool {
    let d2: f64 = goal
        .iter()
        .zip(state)
        .map(|(&g, &s)| (g as f64 - s as f64).powi(2))
        .sum();
    d2.sqrt() <= spec.success_radius as f64 + 1e-6
}

fn audit_entries(
    spec: &EnvSpec,
    model: &dyn ModelDynamics,
    threshold: f32,
    segment_len: usize,
    buffer: &ReanalysisBuffer,
    audit: &mut BufferAudit,
) {
    let u = threshold as f64;
    for (n, (traj, tag)) in buffer.iter().enumerate() {
        let last = traj.final_state();
        match tag {
            Provenance::IntraImproved => {
                audit.intra_improved += 1;
                if traj.len() > segment_len || !within_radius(spec, last, &traj.goal) {
                    audit.violations.push(format!(
                        "entry {n}: intra_improved of length {} misses its goal or exceeds {segment_len}",
                        traj.len()
                    ));
                }
            }
            Provenance::InterReached => {
                audit.inter_reached += 1;
                if !within_radius(spec, last, &traj.goal) {
                    audit.violations.push(format!("entry {n}: inter_reached misses its goal"));
                }
            }
            Provenance::InterFrontier => {
                audit.inter_frontier += 1;
                if traj.goal[..] != last[..spec.goal_dim] {
                    audit.violations.push(format!(
                        "entry {n}: frontier goal {:?} is not the final position",
                        traj.goal
                    ));
                }
            }
            Provenance::IntraOriginal => {}
        }
        if tag.is_imagined() {
            audit.imagined += 1;
            let worst = traj
                .states
                .iter()
                .zip(&traj.actions)
                .map(|(s, a)| replay_uncertainty(model, s, a))
                .fold(0.0, f64::max);
            // Float32 rounding of the library's own sum is the only slack.
            if worst > u * (1.0 + 1e-5) {
                audit.violations.push(format!("entry {n}: U = {worst:e} above u = {u:e}"));
            }
        }
    }
}

fn audit_config() -> RunConfig {
    RunConfig::parse(
        "dataset.n_transitions = 3000
net.hidden_width = 32
pretrain.steps = 300
dynamics.epochs = 5
reanalysis.iterations = 2
reanalysis.intra = 40
reanalysis.inter = 40
reanalysis.value_steps = 20
reanalysis.disc_steps = 20
reanalysis.gen_steps = 20
planner.candidates = 8
planner.rollouts = 2
planner.depth = 3
",
    )
    .unwrap()
}

/// Pretrains a small agent, runs reanalysis with the learned ensemble and
/// audits every stored entry.
pub fn reanalysis_buffer_audit(seed: u64) -> BufferAudit {
    let config = audit_config();
    let spec = config.spec();
    let data = generate(&config, seed).unwrap();
    let offline = TrajectoryBuffer::from_trajectories(&spec, data.clone()).unwrap();
    let (mut agent, _) = pretrain(&config, &spec, &offline, seed).unwrap();
    let ensemble = agent.ensemble.clone();
    let outcome = reanalyze(&config, &spec, &mut agent, &offline, seed).unwrap();

    let mut audit = BufferAudit::default();
    if offline.iter().cloned().collect::<Vec<_>>() != data {
        audit.violations.push("offline buffer changed".into());
    }
    if agent.ensemble.members() != ensemble.members() || agent.ensemble.threshold() != ensemble.threshold() {
        audit.violations.push("ensemble changed during reanalysis".into());
    }
    audit_entries(
        &spec,
        &ensemble,
        ensemble.threshold(),
        config.reanalysis.segment_len,
        &outcome.buffer,
        &mut audit,
    );
    audit
}

/// Generation with exact dynamics and the scripted controller, which
/// shortcuts noisy dataset segments, so every provenance occurs.
pub fn scripted_buffer_audit(seed: u64) -> BufferAudit {
    let config = audit_config();
    let spec = config.spec();
    let data = generate(&config, seed).unwrap();
    let offline = TrajectoryBuffer::from_trajectories(&spec, data.clone()).unwrap();
    let model = GroundTruthModel {
        spec: spec.clone(),
        members: 3,
    };
    let policy = ScriptedPolicy { spec: spec.clone() };
    let reanalysis = ReanalysisConfig {
        action_source: ActionSource::Policy,
        horizon: 8,
        ..config.reanalysis.clone()
    };
    let imagination = Imagination {
        spec: &spec,
        model: &model,
        policy: &policy,
        threshold: 0.0,
        config: &reanalysis,
    };
    let mut buffer = ReanalysisBuffer::new(&spec, reanalysis.capacity);
    let mut rng = RngStream::new(seed);
    for _ in 0..200 {
        let (traj, tag) = imagination.intra_traj(&offline, &mut rng).unwrap();
        buffer.insert(traj, tag).unwrap();
        if let Some((traj, tag)) = imagination.inter_traj(&offline, &mut rng).unwrap() {
            buffer.insert(traj, tag).unwrap();
        }
    }
    let mut audit = BufferAudit::default();
    if offline.iter().cloned().collect::<Vec<_>>() != data {
        audit.violations.push("offline buffer changed".into());
    }
    audit_entries(&spec, &model, 0.0, reanalysis.segment_len, &buffer, &mut audit);
    audit
}
