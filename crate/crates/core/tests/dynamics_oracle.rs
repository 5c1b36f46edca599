mod common;

use common::scenarios;
use goplan::dynamics::{DynamicsConfig, DynamicsEnsemble, Normalizer, Transitions};
use goplan::numerics::{Matrix, NetConfig, RngStream};

fn net(width: usize) -> NetConfig {
    NetConfig {
        hidden_width: width,
        hidden_layers: 2,
        ..NetConfig::default()
    }
}

/// `s' = s + 0.5 a` with states and actions uniform in [-1, 1]².
fn linear_data(n: usize, rng: &mut RngStream) -> Transitions {
    let mut u = |n| Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.uniform(-1.0, 1.0)).collect());
    let states = u(n);
    let actions = u(n);
    let next_states = Matrix::from_vec(
        n,
        2,
        (0..2 * n)
            .map(|i| states.as_slice()[i] + 0.5 * actions.as_slice()[i])
            .collect(),
    );
    Transitions {
        states,
        actions,
        next_states,
    }
}

#[test]
fn learns_a_linear_system() {
    let mut rng = RngStream::new(3);
    let train = linear_data(6000, &mut rng);
    let test = linear_data(1000, &mut rng);
    let mut ens = DynamicsEnsemble::new(2, 2, &net(32), DynamicsConfig::default(), &mut rng).unwrap();
    let report = ens.train_ensemble(&train, 40, &mut rng).unwrap();
    assert!(report.epoch_val_mse.last() < report.epoch_val_mse.first());
    let mse = ens.prediction_mse(&test).unwrap();
    assert!(mse < 1e-4, "held-out residual MSE {mse}");
}

#[test]
fn equal_seeds_on_equal_data_give_equal_members() {
    let mut rng = RngStream::new(4);
    let data = linear_data(600, &mut rng);
    let config = DynamicsConfig {
        members: 2,
        batch: 32,
        bootstrap: false,
        ..DynamicsConfig::default()
    };
    let mut ens = DynamicsEnsemble::with_member_seeds(2, 2, &net(8), config, &[9, 9]).unwrap();
    ens.train_ensemble(&data, 3, &mut rng).unwrap();
    assert_eq!(ens.members()[0], ens.members()[1]);
}

#[test]
fn bootstrap_members_differ() {
    let mut rng = RngStream::new(5);
    let data = linear_data(600, &mut rng);
    let config = DynamicsConfig {
        members: 3,
        batch: 32,
        ..DynamicsConfig::default()
    };
    let mut ens = DynamicsEnsemble::new(2, 2, &net(8), config, &mut rng).unwrap();
    ens.train_ensemble(&data, 2, &mut rng).unwrap();
    assert!(ens.members()[0].parameter_distance(&ens.members()[1]) > 0.0);
    assert!(ens.members()[1].parameter_distance(&ens.members()[2]) > 0.0);
}

#[test]
fn identical_members_have_zero_uncertainty() {
    for seed in 0..3 {
        assert_eq!(scenarios::identical_member_uncertainty(seed), 0.0);
    }
}

#[test]
fn predictions_and_uncertainty_match_a_hand_built_pipeline() {
    let (pred_gap, u_gap) = scenarios::uncertainty_brute_force_gap(6);
    assert!(pred_gap < 1e-5, "prediction gap {pred_gap}");
    assert!(u_gap < 1e-6, "uncertainty gap {u_gap}");
}

#[test]
fn zero_member_predicts_the_mean_residual() {
    let config = DynamicsConfig {
        members: 2,
        ..DynamicsConfig::default()
    };
    let mut ens = DynamicsEnsemble::new(2, 1, &net(4), config, &mut RngStream::new(0)).unwrap();
    for t in ens.members_mut()[0].params_mut() {
        t.values.iter_mut().for_each(|v| *v = 0.0);
    }
    ens.set_normalizers(
        Normalizer::identity(3),
        Normalizer {
            mean: vec![0.25, -0.5],
            std: vec![3.0, 3.0],
        },
    );
    assert_eq!(ens.predict(0, &[1.0, 1.0], &[0.3]).unwrap(), vec![1.25, 0.5]);
}

#[test]
fn trajectory_uncertainty_is_the_step_maximum() {
    let mut rng = RngStream::new(8);
    let ens = DynamicsEnsemble::new(2, 1, &net(6), DynamicsConfig::default(), &mut rng).unwrap();
    let states: Vec<Vec<f32>> = (0..6).map(|i| vec![i as f32 * 0.3, -0.1 * i as f32]).collect();
    let actions: Vec<Vec<f32>> = (0..5).map(|i| vec![(i as f32 - 2.0) * 0.4]).collect();
    let per_step: Vec<f32> = (0..5)
        .map(|t| ens.step_uncertainty(&states[t], &actions[t]).unwrap())
        .collect();
    let u = ens.trajectory_uncertainty(&states, &actions).unwrap();
    assert_eq!(u, per_step.iter().cloned().fold(0.0, f32::max));
    assert!(ens.trajectory_uncertainty(&states, &[]).is_err());
}

#[test]
fn shifted_inputs_are_more_uncertain() {
    let ratio = scenarios::ood_uncertainty_ratio(0);
    assert!(ratio >= 2.0, "ratio {ratio}");
}
