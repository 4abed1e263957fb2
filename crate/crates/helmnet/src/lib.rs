//! Learned preconditioners for the heterogeneous Helmholtz equation.
//!
//! A U-Net, or an encoder feeding a solver U-Net, predicts the error of a
//! residual. It is combined with damped Jacobi steps or a shifted-Laplacian
//! V-cycle and used inside flexible GMRES. This crate generates slowness
//! models and training pairs, trains and retrains the networks, stores them,
//! and benchmarks the preconditioners.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod network;
pub mod precond;
pub mod training;

pub use bench::{run_benchmark, BenchRow};
pub use checkpoint::{load_checkpoint, load_network, save_checkpoint, Checkpoint};
pub use config::ExperimentConfig;
pub use datagen::{gen_sample, image_to_slowness, synthetic_slowness, SampleFactory, TrainingSample};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use network::{ErrorPredictor, Network, NetworkKind, NetworkPredictor, ZeroPredictor};
pub use precond::{JacobiUNetPrecond, PrecondKind, VCyclePrecond, VCycleUNetPrecond};
pub use training::{retrain, schedule, train, RetrainConfig, TrainConfig, TrainReport};
