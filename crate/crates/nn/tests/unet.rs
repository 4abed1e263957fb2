use helmnet_nn::{
    gradient_check, Encoder, FeatureStack, Mode, Tape, Tensor4, UNet, UNetConfig, Var, BN_MOMENTUM,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

/// Runs one train-mode pass so eval mode has running statistics.
fn warm_up(net: &mut UNet, x: &Tensor4, features: Option<&FeatureStack>) {
    let mut t = Tape::new();
    let xv = t.leaf(x.clone(), false);
    let fv: Option<Vec<Var>> = features.map(|f| f.levels.iter().map(|l| t.leaf(l.clone(), false)).collect());
    net.forward(&mut t, xv, fv.as_deref(), Mode::Train, false).unwrap();
    let stats = t.bn_stats().clone();
    net.weights_mut().update_running_stats(&stats, BN_MOMENTUM).unwrap();
}

fn warm_up_encoder(enc: &mut Encoder, k: &Tensor4) {
    let mut t = Tape::new();
    let kv = t.leaf(k.clone(), false);
    enc.forward(&mut t, kv, Mode::Train, false).unwrap();
    let stats = t.bn_stats().clone();
    enc.weights_mut().update_running_stats(&stats, BN_MOMENTUM).unwrap();
}

#[test]
fn default_channel_ledger() {
    let net = UNet::new(UNetConfig::default(), 0).unwrap();
    let got: Vec<(&str, usize, usize, usize)> = net
        .ledger()
        .iter()
        .map(|e| (e.layer.as_str(), e.in_channels, e.out_channels, e.coarsening))
        .collect();
    let want = vec![
        ("down0", 4, 16, 2),
        ("res1.0", 16, 16, 2),
        ("down1", 16, 32, 4),
        ("res2.0", 32, 32, 4),
        ("down2", 32, 64, 8),
        ("res3.0", 64, 64, 8),
        ("bottleneck.0", 64, 64, 8),
        ("bottleneck.1", 64, 64, 8),
        ("bottleneck.2", 64, 64, 8),
        ("up3", 64, 32, 4),
        ("skip2", 32, 64, 4),
        ("up2", 64, 16, 2),
        ("skip1", 16, 32, 2),
        ("up1", 32, 8, 1),
        ("skip0", 8, 12, 1),
        ("head", 12, 2, 1),
    ];
    assert_eq!(got, want);
    let n = net.weights().num_trainable();
    assert!((400_000..550_000).contains(&n), "{n} parameters");
}

#[test]
fn shape_contract_and_eval_determinism() {
    let mut net = UNet::new(UNetConfig::default(), 1).unwrap();
    let x = random([2, 4, 128, 128], 2);
    assert!(net.infer(&x, None).is_err(), "eval before running statistics");
    warm_up(&mut net, &x, None);
    let a = net.infer(&x, None).unwrap();
    assert_eq!(a.shape(), [2, 2, 128, 128]);
    let b = net.infer(&x, None).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
    assert!(net.infer(&random([1, 4, 36, 36], 3), None).is_err());
    assert!(net.infer(&random([1, 3, 32, 32], 3), None).is_err());
}

#[test]
fn train_and_eval_agree_with_frozen_batch_statistics() {
    let mut net = UNet::new(UNetConfig::default(), 4).unwrap();
    let x = random([3, 4, 32, 32], 5);
    let mut t = Tape::new();
    let xv = t.leaf(x.clone(), false);
    let (out, _) = net.forward(&mut t, xv, None, Mode::Train, false).unwrap();
    let stats = t.bn_stats().clone();
    net.weights_mut().update_running_stats(&stats, 0.0).unwrap();
    let eval = net.infer(&x, None).unwrap();
    let train = t.value(out);
    let diff = train
        .as_slice()
        .iter()
        .zip(eval.as_slice())
        .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
    let scale = train.as_slice().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    assert!(diff <= 1e-5 * scale.max(1.0), "{diff}");
}

/// Smaller networks keep the finite-difference checks fast; the graph is
/// the same as the default one.
fn small() -> UNetConfig {
    UNetConfig {
        base_channels: 4,
        ..UNetConfig::default()
    }
}

#[test]
fn full_unet_gradient_check() {
    let net = UNet::new(small(), 6).unwrap();
    let np = net.weights().trainable().count();
    let mut inputs: Vec<Tensor4> = net.weights().trainable().map(|p| p.value.clone()).collect();
    inputs.push(random([2, 4, 16, 16], 7));
    inputs.push(random([2, 2, 16, 16], 8));
    let rep = gradient_check(
        &inputs,
        |t, v| {
            let bound = net.weights().bind_vars(v[..np].to_vec());
            let y = net.forward_bound(t, &bound, v[np], None, Mode::Train)?;
            t.mse(y, v[np + 1])
        },
        1e-3,
        9,
    )
    .unwrap();
    assert!(rep.max_rel_error < 5e-3, "{}", rep.max_rel_error);
    assert!(rep.per_input.iter().all(|&e| e < 1e-2), "{:?}", rep.per_input);
}

#[test]
fn default_width_unet_gradient_check() {
    let net = UNet::new(UNetConfig::default(), 10).unwrap();
    let np = net.weights().trainable().count();
    let mut inputs: Vec<Tensor4> = net.weights().trainable().map(|p| p.value.clone()).collect();
    inputs.push(random([2, 4, 16, 16], 11));
    inputs.push(random([2, 2, 16, 16], 12));
    let rep = gradient_check(
        &inputs,
        |t, v| {
            let bound = net.weights().bind_vars(v[..np].to_vec());
            let y = net.forward_bound(t, &bound, v[np], None, Mode::Train)?;
            t.mse(y, v[np + 1])
        },
        1e-3,
        13,
    )
    .unwrap();
    assert!(rep.max_rel_error < 5e-3, "{}", rep.max_rel_error);
    assert!(rep.per_input.iter().all(|&e| e < 1e-2), "{:?}", rep.per_input);
}

#[test]
fn encoder_solver_gradient_check() {
    let enc = Encoder::new(small(), 14).unwrap();
    let sol = UNet::solver(small(), &enc.feature_channels(), 15).unwrap();
    let ne = enc.weights().trainable().count();
    let ns = sol.weights().trainable().count();
    let mut inputs: Vec<Tensor4> = enc.weights().trainable().map(|p| p.value.clone()).collect();
    inputs.extend(sol.weights().trainable().map(|p| p.value.clone()));
    inputs.push(random([2, 1, 16, 16], 16));
    inputs.push(random([2, 4, 16, 16], 17));
    inputs.push(random([2, 2, 16, 16], 18));
    let rep = gradient_check(
        &inputs,
        |t, v| {
            let be = enc.weights().bind_vars(v[..ne].to_vec());
            let bs = sol.weights().bind_vars(v[ne..ne + ns].to_vec());
            let feats = enc.forward_bound(t, &be, v[ne + ns], Mode::Train)?;
            let y = sol.forward_bound(t, &bs, v[ne + ns + 1], Some(&feats), Mode::Train)?;
            t.mse(y, v[ne + ns + 2])
        },
        1e-3,
        19,
    )
    .unwrap();
    assert!(rep.max_rel_error < 5e-3, "{}", rep.max_rel_error);
    assert!(rep.per_input.iter().all(|&e| e < 1e-2), "{:?}", rep.per_input);
}

#[test]
fn encoder_feature_shapes_and_reuse() {
    let cfg = UNetConfig::default();
    let mut enc = Encoder::new(cfg.clone(), 20).unwrap();
    let mut sol = UNet::solver(cfg.clone(), &enc.feature_channels(), 21).unwrap();
    let kappa = random([1, 1, 32, 32], 22).map(|v| 0.625 + 0.375 * v);
    warm_up_encoder(&mut enc, &kappa);
    let feats = enc.infer(&kappa).unwrap();
    let want = [(8, 32), (16, 16), (32, 8), (64, 4)];
    for (f, (c, n)) in feats.levels.iter().zip(want) {
        assert_eq!(f.shape(), [1, c, n, n]);
    }
    assert_eq!(enc.infer(&kappa).unwrap(), feats);

    let x0 = random([3, 4, 32, 32], 23);
    warm_up(&mut sol, &x0, Some(&feats.repeat(3).unwrap()));
    let reused = feats.repeat(3).unwrap();
    for call in 0..20 {
        let x = random([3, 4, 32, 32], 100 + call);
        let a = sol.infer(&x, Some(&reused)).unwrap();
        let fresh = enc.infer(&kappa).unwrap().repeat(3).unwrap();
        let b = sol.infer(&x, Some(&fresh)).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }
    let zeros = FeatureStack::zeros_like(&cfg, 3, 32, 32);
    assert_eq!(sol.infer(&x0, Some(&zeros)).unwrap().shape(), [3, 2, 32, 32]);
    assert!(sol.infer(&x0, None).is_err());
}
