mod common;

use common::{problem, small_config, trained_network};
use helmnet::bench::{random_rhs, solve_with};
use helmnet::checkpoint::{config_digest, decode, encode, load_checkpoint, MAGIC};
use helmnet::config::SlownessSource;
use helmnet::{load_network, save_checkpoint, ExperimentConfig, NetworkKind, PrecondKind};
use helmnet_nn::UNetConfig;

#[test]
fn empty_config_gives_defaults() {
    let cfg = ExperimentConfig::from_toml_str("").unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!((cfg.grid.nx, cfg.grid.absorbing_width), (128, 10));
    assert_eq!(cfg.krylov.restart, 10);
    assert_eq!(cfg.krylov.preconditioners, vec![PrecondKind::V]);
    let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ExperimentConfig::from_toml_str("[grid]\nnz = 4\n").is_err());
    assert!(ExperimentConfig::from_toml_str("[solver]\nnx = 4\n").is_err());
    assert!(ExperimentConfig::from_toml_with("", &["grid.size=4".into()]).is_err());
    assert!(ExperimentConfig::from_toml_with("", &["nx=4".into()]).is_err());
}

#[test]
fn invalid_values_are_rejected() {
    assert!(ExperimentConfig::from_toml_str("[krylov]\nrel_tol = 2.0\n").is_err());
    assert!(ExperimentConfig::from_toml_str("[training]\nlr0 = 0.0\n").is_err());
    assert!(ExperimentConfig::from_toml_str("[slowness]\nblur_size = 4\n").is_err());
    assert!(ExperimentConfig::from_toml_str("[krylov]\npreconditioners = [\"W\"]\n").is_err());
}

#[test]
fn overrides_take_precedence() {
    let text = "[grid]\nnx = 32\nny = 32\n[krylov]\nrhs = 2\n";
    let cfg = ExperimentConfig::from_toml_with(
        text,
        &[
            "grid.nx=64".into(),
            "krylov.preconditioners=[\"V\", \"VU\"]".into(),
            "network.kind=\"encoder-solver\"".into(),
            "training.dataset=runs/data".into(),
            "slowness.source=homogeneous".into(),
        ],
    )
    .unwrap();
    assert_eq!((cfg.grid.nx, cfg.grid.ny, cfg.krylov.rhs), (64, 32, 2));
    assert_eq!(cfg.krylov.preconditioners, vec![PrecondKind::V, PrecondKind::VU]);
    assert_eq!(cfg.network.kind, NetworkKind::EncoderSolver);
    assert_eq!(cfg.training.dataset, std::path::PathBuf::from("runs/data"));
    assert_eq!(cfg.slowness.source, SlownessSource::Homogeneous);
}

#[test]
fn slowness_sources_build_valid_models() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["grid.nx=32".to_string(), "grid.ny=32".into()];
    for src in ["synthetic", "procedural", "homogeneous"] {
        let mut o = base.to_vec();
        o.push(format!("slowness.source={src}"));
        let cfg = ExperimentConfig::from_toml_with("", &o).unwrap();
        let k2 = cfg.slowness_model(3).unwrap();
        assert_eq!(k2.values().shape(), (32, 32));
        assert_eq!(k2.values().max(), 1.0);
        helmnet_core::slw::save(dir.path().join(format!("{src}.slw")), k2.values()).unwrap();
    }
    let mut o = base.to_vec();
    o.push("slowness.source=files".into());
    o.push(format!("slowness.models_dir=\"{}\"", dir.path().display()));
    let cfg = ExperimentConfig::from_toml_with("", &o).unwrap();
    assert_eq!(cfg.slowness_model(0).unwrap().values().min(), 1.0);
    assert_eq!(cfg.slowness_model(1).unwrap().values().min(), 0.25);
    assert!(cfg.slowness_model(3).is_err());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let p = problem(1);
    for kind in [NetworkKind::Standalone, NetworkKind::EncoderSolver] {
        let net = trained_network(kind, std::slice::from_ref(&p), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.unw");
        save_checkpoint(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.digest, config_digest(kind, net.config()));
        assert_eq!(encode(&ckpt).unwrap(), bytes);

        let back = load_network(&path, &small_config()).unwrap();
        assert_eq!(back.kind(), kind);
        assert_eq!(back.weights(), net.weights());
        let again = dir.path().join("again.unw");
        save_checkpoint(&back, &again).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), bytes);
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let p = problem(2);
    let net = trained_network(NetworkKind::Standalone, std::slice::from_ref(&p), 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.unw");
    save_checkpoint(&net, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode(&bad).is_err());
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(decode(&bad).is_err());
    for cut in [0, 3, 8, 40, 43, 50, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode(&long).is_err());

    let other = UNetConfig {
        base_channels: 8,
        ..small_config()
    };
    assert!(load_network(&path, &other).is_err());
}

#[test]
fn reloaded_network_reproduces_iteration_counts() {
    let p = problem(3);
    let net = trained_network(NetworkKind::EncoderSolver, std::slice::from_ref(&p), 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.unw");
    save_checkpoint(&net, &path).unwrap();
    let back = load_network(&path, &small_config()).unwrap();

    let cfg = ExperimentConfig::from_toml_with("", &["krylov.max_iters=200".into()]).unwrap();
    let rhs = random_rhs(common::N, common::N, 2, 4);
    for kind in [PrecondKind::JU, PrecondKind::VU] {
        let a = solve_with(kind, &p, Some(&net), &cfg, &rhs).unwrap();
        let b = solve_with(kind, &p, Some(&back), &cfg, &rhs).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.factor, b.factor);
    }
}
