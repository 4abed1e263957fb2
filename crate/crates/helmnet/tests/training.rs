mod common;

use common::{problem, samples, small_config, trained_network};
use helmnet::training::{
    residual_misfit, retrain, schedule, schedule_anchors, split_indices, train, RetrainConfig, TrainConfig,
};
use helmnet::{Network, NetworkKind};
use helmnet_core::VCycleConfig;
use helmnet_nn::UNetConfig;
use proptest::prelude::*;

#[test]
fn schedule_matches_the_anchor_sequence() {
    assert_eq!(schedule_anchors(48), vec![48, 72, 84, 90, 93, 94]);
    let cfg = TrainConfig::default();
    assert_eq!(schedule(1, &cfg), (1e-4, 20));
    assert_eq!(schedule(48, &cfg), (1e-4, 20));
    let (lr, b) = schedule(49, &cfg);
    assert!((lr - 1e-5).abs() < 1e-12 && b == 40);
    let (lr, b) = schedule(73, &cfg);
    assert!((lr - 1e-6).abs() < 1e-13 && b == 80);
    assert_eq!(schedule(85, &cfg).1, 160);
}

proptest! {
    #[test]
    fn schedule_is_monotone(t0 in 1usize..200, e in 1usize..400) {
        let cfg = TrainConfig { t0, ..TrainConfig::default() };
        let (lr0, b0) = schedule(e, &cfg);
        let (lr1, b1) = schedule(e + 1, &cfg);
        prop_assert!(lr1 <= lr0 && b1 >= b0);
        prop_assert!(b1 == b0 || b1 == 2 * b0);
    }

    #[test]
    fn split_partitions_indices(n in 1usize..200, f in 0.0f64..0.9, seed in any::<u64>()) {
        let (tr, va) = split_indices(n, f, seed);
        prop_assert!(!tr.is_empty());
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

fn one_epoch_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        lr0: 1e-3,
        batch0: 4,
        val_fraction: 0.25,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn a_single_sample_is_memorized() {
    let p = problem(1);
    let data = samples(&p, 0, 1, 1);
    let mut net = Network::new(NetworkKind::Standalone, UNetConfig::default(), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        lr0: 1e-3,
        batch0: 1,
        t0: 1000,
        val_fraction: 0.0,
        seed: 1,
        residual_loss_weight: 0.0,
    };
    let rep = train(&mut net, std::slice::from_ref(&p), &data, &cfg).unwrap();
    assert!(rep.aborted.is_none());
    let first = rep.history[0].train_rel_error;
    let last = rep.history.last().unwrap().train_rel_error;
    assert!((last / first).powi(2) < 0.1, "{first} -> {last}");
}

#[test]
fn fixed_seed_reproduces_history_and_weights() {
    let problems = vec![problem(2), problem(3)];
    let data: Vec<_> = problems
        .iter()
        .enumerate()
        .flat_map(|(m, p)| samples(p, m, 6, m as u64))
        .collect();
    for kind in [NetworkKind::Standalone, NetworkKind::EncoderSolver] {
        let run = || {
            let mut net = Network::new(kind, small_config(), 4).unwrap();
            let rep = train(&mut net, &problems, &data, &one_epoch_cfg(7)).unwrap();
            (rep, net.weights())
        };
        let (a, wa) = run();
        let (b, wb) = run();
        assert_eq!(a, b);
        assert_eq!(wa, wb);
        assert_eq!(a.history.len(), 3);
        assert!(a.history.iter().all(|r| r.train_rel_error.is_finite() && r.val_rel_error.is_some()));
    }
}

#[test]
fn residual_term_matches_the_stencil_operator() {
    let problems = vec![problem(8), problem(9)];
    let mut data: Vec<_> = problems
        .iter()
        .enumerate()
        .flat_map(|(m, p)| samples(p, m, 3, m as u64))
        .collect();
    let misfit = residual_misfit(&problems, &data).unwrap();
    let worst = misfit.iter().cloned().fold(0.0, f64::max);
    println!("worst misfit {worst:.2e}");
    assert!(worst < 1e-4, "{misfit:?}");
    for s in &mut data {
        s.e_true = s.e_true.map(|z| z * 2.0);
    }
    for m in residual_misfit(&problems, &data).unwrap() {
        assert!((m - 1.0).abs() < 1e-3, "{m}");
    }
    data[0].model = 2;
    assert!(residual_misfit(&problems, &data).is_err());
}

#[test]
fn residual_weight_changes_training_and_is_validated() {
    let p = problem(10);
    let data = samples(&p, 0, 6, 10);
    let run = |w: f32| {
        let mut net = Network::new(NetworkKind::EncoderSolver, small_config(), 10).unwrap();
        let cfg = TrainConfig {
            residual_loss_weight: w,
            ..one_epoch_cfg(10)
        };
        let rep = train(&mut net, std::slice::from_ref(&p), &data, &cfg).unwrap();
        (rep, net.weights())
    };
    let (a, wa) = run(0.0);
    let (b, wb) = run(1.0);
    assert!(b.aborted.is_none());
    assert_ne!(wa, wb);
    assert_ne!(a.history[2].train_rel_error, b.history[2].train_rel_error);
    for w in [-1.0, f32::NAN, f32::INFINITY] {
        let cfg = TrainConfig {
            residual_loss_weight: w,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}

#[test]
fn history_csv_has_the_documented_header() {
    let p = problem(5);
    let data = samples(&p, 0, 4, 5);
    let mut net = Network::new(NetworkKind::Standalone, small_config(), 5).unwrap();
    let rep = train(&mut net, std::slice::from_ref(&p), &data, &one_epoch_cfg(5)).unwrap();
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,mean_rel_error_train,mean_rel_error_val,lr,batch"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn diverging_training_stops_with_last_good_weights() {
    let p = problem(6);
    let data = samples(&p, 0, 8, 6);
    let mut net = Network::new(NetworkKind::Standalone, small_config(), 6).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        lr0: 1e30,
        batch0: 2,
        val_fraction: 0.0,
        ..TrainConfig::default()
    };
    let rep = train(&mut net, std::slice::from_ref(&p), &data, &cfg).unwrap();
    assert!(rep.aborted.is_some());
    assert!(rep.history.len() < cfg.epochs);
    assert!(net.weights().params().iter().all(|w| w.value.is_finite()));
}

#[test]
fn bad_training_input_is_rejected() {
    let p = problem(7);
    let mut net = Network::new(NetworkKind::Standalone, small_config(), 7).unwrap();
    assert!(train(&mut net, std::slice::from_ref(&p), &[], &TrainConfig::default()).is_err());
    let mut data = samples(&p, 0, 2, 7);
    data[1].model = 3;
    assert!(train(&mut net, std::slice::from_ref(&p), &data, &TrainConfig::default()).is_err());
    let cfg = TrainConfig {
        lr0: 0.0,
        ..TrainConfig::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn retrain_with_zero_epochs_is_a_no_op() {
    let p = problem(8);
    let mut net = trained_network(NetworkKind::EncoderSolver, std::slice::from_ref(&p), 8);
    let before = net.weights();
    let cfg = RetrainConfig {
        epochs: 0,
        ..RetrainConfig::default()
    };
    let rep = retrain(&mut net, &p, &VCycleConfig::default(), &cfg, &TrainConfig::default(), 1).unwrap();
    assert!(rep.history.is_empty());
    assert_eq!(net.weights(), before);
}

#[test]
fn retrain_updates_the_solver_and_freezes_the_encoder() {
    let p = problem(9);
    let mut net = trained_network(NetworkKind::EncoderSolver, std::slice::from_ref(&p), 9);
    let enc_before = net.encoder().unwrap().weights().clone();
    let sol_before = net.solver().weights().clone();
    let cfg = RetrainConfig {
        pairs: 6,
        epochs: 2,
        lr_divisor: 10.0,
        batch: 3,
    };
    let rep = retrain(&mut net, &p, &VCycleConfig::default(), &cfg, &TrainConfig::default(), 2).unwrap();
    assert_eq!(rep.history.len(), 2);
    assert!(rep.history.iter().all(|r| r.batch == 3 && (r.lr - 1e-5).abs() < 1e-12));
    assert_eq!(net.encoder().unwrap().weights(), &enc_before);
    assert_ne!(net.solver().weights(), &sol_before);
}
