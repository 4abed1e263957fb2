//! Small problems and networks shared by the integration tests.

#![allow(dead_code)]

use helmnet::datagen::{synthetic_slowness, GaussianBlur, SampleFactory};
use helmnet::training::{train, TrainConfig};
use helmnet::{Network, NetworkKind, TrainingSample};
use helmnet_core::{Attenuation, ComplexField, HelmholtzProblem, ProblemGrid, SlownessSquared, VCycleConfig};
use helmnet_nn::UNetConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const N: usize = 32;
pub const OMEGA: f64 = 15.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn problem(seed: u64) -> HelmholtzProblem {
    let grid = ProblemGrid::new(N, N).unwrap();
    let k2 = synthetic_slowness(seed, &grid, (0.25, 1.0), GaussianBlur::default()).unwrap();
    let gamma = Attenuation::absorbing_layer(&grid, 4, 0.75).unwrap();
    HelmholtzProblem::new(grid, OMEGA, k2, gamma).unwrap()
}

pub fn homogeneous(n: usize, omega: f64, width: usize) -> HelmholtzProblem {
    let grid = ProblemGrid::new(n, n).unwrap();
    let gamma = Attenuation::absorbing_layer(&grid, width, 0.75).unwrap();
    HelmholtzProblem::new(grid, omega, SlownessSquared::homogeneous(n, n, 1.0).unwrap(), gamma).unwrap()
}

pub fn small_config() -> UNetConfig {
    UNetConfig {
        levels: 2,
        base_channels: 4,
        resnet_per_level: 1,
        bottleneck_resnets: 1,
        ..UNetConfig::default()
    }
}

pub fn samples(problem: &HelmholtzProblem, model: usize, count: usize, seed: u64) -> Vec<TrainingSample> {
    let f = SampleFactory::new(problem, VCycleConfig::default(), model).unwrap();
    let mut r = rng(seed);
    (0..count).map(|_| f.sample(&mut r).unwrap()).collect()
}

/// A small network after one short epoch, so its batch-norm buffers hold
/// statistics and it can run in eval mode.
pub fn trained_network(kind: NetworkKind, problems: &[HelmholtzProblem], seed: u64) -> Network {
    let mut net = Network::new(kind, small_config(), seed).unwrap();
    let data: Vec<TrainingSample> = problems
        .iter()
        .enumerate()
        .flat_map(|(m, p)| samples(p, m, 4, seed + m as u64))
        .collect();
    let cfg = TrainConfig {
        epochs: 1,
        batch0: 4,
        lr0: 1e-3,
        val_fraction: 0.0,
        seed,
        ..TrainConfig::default()
    };
    train(&mut net, problems, &data, &cfg).unwrap();
    net
}

pub fn random_fields(count: usize, seed: u64) -> Vec<ComplexField> {
    let mut r = rng(seed);
    (0..count).map(|_| ComplexField::random_normal(N, N, &mut r)).collect()
}

pub fn max_diff(a: &ComplexField, b: &ComplexField) -> f64 {
    a.sub(b).unwrap().as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max)
}
