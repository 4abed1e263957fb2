//! Networks as error predictors on a fixed problem.
//!
//! The network input has four channels: the real and imaginary parts of the
//! scaled residual `h^2 r`, the squared slowness and the attenuation. The
//! scaled residual is divided by its root-mean-square amplitude before the
//! forward pass and the prediction is multiplied back, so the prediction
//! scales with the residual the way the exact error does. Krylov methods hand
//! unit-norm vectors to the preconditioner, far from the amplitudes seen in
//! training, and this keeps both on the same footing.

use helmnet_core::{Complex64, ComplexField, HelmholtzProblem};
use helmnet_nn::{Encoder, FeatureStack, NetworkWeights, ParamKind, Tensor4, UNet, UNetConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INPUT_CHANNELS: usize = 4;
pub const OUTPUT_CHANNELS: usize = 2;

const ENCODER_PREFIX: &str = "encoder.";
const SOLVER_PREFIX: &str = "solver.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    Standalone,
    EncoderSolver,
}

/// A stand-alone U-Net, or an encoder feeding a solver U-Net.
#[derive(Clone, Debug)]
pub enum Network {
    Standalone(UNet),
    EncoderSolver { encoder: Encoder, solver: UNet },
}

impl Network {
    /// `config.in_channels` and `config.out_channels` are overridden.
    pub fn new(kind: NetworkKind, config: UNetConfig, seed: u64) -> Result<Self> {
        let config = UNetConfig {
            in_channels: INPUT_CHANNELS,
            out_channels: OUTPUT_CHANNELS,
            ..config
        };
        Ok(match kind {
            NetworkKind::Standalone => Self::Standalone(UNet::new(config, seed)?),
            NetworkKind::EncoderSolver => {
                let encoder = Encoder::new(config.clone(), seed)?;
                let solver = UNet::solver(config, &encoder.feature_channels(), seed.wrapping_add(1))?;
                Self::EncoderSolver { encoder, solver }
            }
        })
    }

    pub fn kind(&self) -> NetworkKind {
        match self {
            Self::Standalone(_) => NetworkKind::Standalone,
            Self::EncoderSolver { .. } => NetworkKind::EncoderSolver,
        }
    }

    /// The residual-facing U-Net.
    pub fn solver(&self) -> &UNet {
        match self {
            Self::Standalone(u) => u,
            Self::EncoderSolver { solver, .. } => solver,
        }
    }

    pub fn solver_mut(&mut self) -> &mut UNet {
        match self {
            Self::Standalone(u) => u,
            Self::EncoderSolver { solver, .. } => solver,
        }
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        match self {
            Self::Standalone(_) => None,
            Self::EncoderSolver { encoder, .. } => Some(encoder),
        }
    }

    pub fn config(&self) -> &UNetConfig {
        self.solver().config()
    }

    /// All parameters in one collection. Encoder-solver names carry an
    /// `encoder.` or `solver.` prefix.
    pub fn weights(&self) -> NetworkWeights {
        match self {
            Self::Standalone(u) => u.weights().clone(),
            Self::EncoderSolver { encoder, solver } => {
                let mut w = NetworkWeights::new();
                for (prefix, part) in [(ENCODER_PREFIX, encoder.weights()), (SOLVER_PREFIX, solver.weights())] {
                    for p in part.params() {
                        w.insert(&format!("{prefix}{}", p.name), p.kind, p.value.clone())
                            .expect("prefixed names are unique");
                    }
                }
                w
            }
        }
    }

    /// Replaces all parameters; names and shapes must match [`Self::weights`].
    pub fn load_weights(&mut self, w: NetworkWeights) -> Result<()> {
        match self {
            Self::Standalone(u) => u.load_weights(w)?,
            Self::EncoderSolver { encoder, solver } => {
                let mut enc = NetworkWeights::new();
                let mut sol = NetworkWeights::new();
                for p in w.params() {
                    let (target, name) = if let Some(n) = p.name.strip_prefix(ENCODER_PREFIX) {
                        (&mut enc, n)
                    } else if let Some(n) = p.name.strip_prefix(SOLVER_PREFIX) {
                        (&mut sol, n)
                    } else {
                        return Err(Error::InvalidArgument(format!(
                            "parameter `{}` belongs to neither encoder nor solver",
                            p.name
                        )));
                    };
                    target.insert(name, p.kind, p.value.clone())?;
                }
                encoder.load_weights(enc)?;
                solver.load_weights(sol)?;
            }
        }
        Ok(())
    }

    /// Kind implied by parameter names.
    pub fn kind_of(w: &NetworkWeights) -> NetworkKind {
        if w.params().iter().any(|p| p.name.starts_with(ENCODER_PREFIX)) {
            NetworkKind::EncoderSolver
        } else {
            NetworkKind::Standalone
        }
    }

    /// Eval-mode encoder features for one slowness model, `None` for a
    /// stand-alone network.
    pub fn features(&self, kappa2: &Tensor4) -> Result<Option<FeatureStack>> {
        match self.encoder() {
            None => Ok(None),
            Some(e) => Ok(Some(e.infer(kappa2)?)),
        }
    }

    /// Eval-mode prediction on amplitude-normalized input.
    pub fn infer(&self, x: &Tensor4, features: Option<&FeatureStack>) -> Result<Tensor4> {
        Ok(self.solver().infer(x, features)?)
    }

    /// Zeroes the output layer, so every prediction is exactly zero.
    pub fn zero_output(&mut self) -> Result<()> {
        let w = self.solver_mut().weights_mut();
        for name in ["head.kernel", "head.bias"] {
            let z = Tensor4::zeros(w.get(name)?.shape());
            w.set(name, z)?;
        }
        Ok(())
    }

    pub fn num_trainable(&self) -> usize {
        self.weights()
            .params()
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.len())
            .sum()
    }
}

/// Root-mean-square amplitude of a field.
pub fn amplitude(f: &ComplexField) -> f64 {
    if f.is_empty() {
        0.0
    } else {
        f.norm() / (f.len() as f64).sqrt()
    }
}

/// Slowness and attenuation channels of one problem, in `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelChannels {
    pub nx: usize,
    pub ny: usize,
    pub kappa2: Vec<f32>,
    pub gamma: Vec<f32>,
}

impl ModelChannels {
    pub fn new(problem: &HelmholtzProblem) -> Self {
        let (nx, ny) = problem.grid().shape();
        let cast = |s: &[f64]| s.iter().map(|&v| v as f32).collect();
        Self {
            nx,
            ny,
            kappa2: cast(problem.kappa2().values().as_slice()),
            gamma: cast(problem.gamma().values().as_slice()),
        }
    }

    /// The slowness as a one-sample, one-channel tensor.
    pub fn kappa2_tensor(&self) -> Tensor4 {
        Tensor4::from_vec([1, 1, self.ny, self.nx], self.kappa2.clone()).expect("sizes match")
    }

    /// Writes the four input channels of one sample into `out`, dividing the
    /// scaled residual by `scale`.
    pub fn encode_into(&self, r_hat: &ComplexField, scale: f64, out: &mut [f32]) {
        let n = self.nx * self.ny;
        debug_assert_eq!(out.len(), INPUT_CHANNELS * n);
        let inv = 1.0 / scale;
        let (re, rest) = out.split_at_mut(n);
        let (im, rest) = rest.split_at_mut(n);
        let (k2, g) = rest.split_at_mut(n);
        for (k, z) in r_hat.as_slice().iter().enumerate() {
            re[k] = (z.re * inv) as f32;
            im[k] = (z.im * inv) as f32;
        }
        k2.copy_from_slice(&self.kappa2);
        g.copy_from_slice(&self.gamma);
    }
}

/// Real and imaginary channels of a field as `f32`.
pub fn field_to_channels(f: &ComplexField, scale: f64, out: &mut [f32]) {
    let n = f.len();
    let inv = 1.0 / scale;
    let (re, im) = out.split_at_mut(n);
    for (k, z) in f.as_slice().iter().enumerate() {
        re[k] = (z.re * inv) as f32;
        im[k] = (z.im * inv) as f32;
    }
}

/// Inverse of [`field_to_channels`].
pub fn channels_to_field(nx: usize, ny: usize, data: &[f32], scale: f64) -> ComplexField {
    let n = nx * ny;
    let values = (0..n)
        .map(|k| Complex64::new(data[k] as f64 * scale, data[n + k] as f64 * scale))
        .collect();
    ComplexField::from_vec(nx, ny, values).expect("sizes match")
}

/// Maps residuals `r` to error estimates `e` with `A e ~ r`.
pub trait ErrorPredictor: Sync {
    fn predict(&self, residuals: &[&ComplexField]) -> Result<Vec<ComplexField>>;
}

/// The predictor of a network with a zero output layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPredictor;

impl ErrorPredictor for ZeroPredictor {
    fn predict(&self, residuals: &[&ComplexField]) -> Result<Vec<ComplexField>> {
        Ok(residuals
            .iter()
            .map(|r| ComplexField::zeros(r.nx(), r.ny()))
            .collect())
    }
}

/// A trained network bound to one problem. Encoder features are computed
/// once here and reused for every prediction.
#[derive(Clone, Debug)]
pub struct NetworkPredictor<'a> {
    network: &'a Network,
    channels: ModelChannels,
    h2: f64,
    features: Option<FeatureStack>,
}

impl<'a> NetworkPredictor<'a> {
    pub fn new(network: &'a Network, problem: &HelmholtzProblem) -> Result<Self> {
        let channels = ModelChannels::new(problem);
        network.config().check_spatial(channels.ny, channels.nx)?;
        let features = network.features(&channels.kappa2_tensor())?;
        let h = problem.grid().h();
        let p = Self {
            network,
            channels,
            h2: h * h,
            features,
        };
        // Fails early on missing running statistics.
        p.predict(&[&ComplexField::filled(p.channels.nx, p.channels.ny, Complex64::new(1.0, 0.0))])?;
        Ok(p)
    }

    pub fn features(&self) -> Option<&FeatureStack> {
        self.features.as_ref()
    }

    pub fn network(&self) -> &Network {
        self.network
    }
}

impl ErrorPredictor for NetworkPredictor<'_> {
    fn predict(&self, residuals: &[&ComplexField]) -> Result<Vec<ComplexField>> {
        let (nx, ny) = (self.channels.nx, self.channels.ny);
        let mut out: Vec<ComplexField> = residuals
            .iter()
            .map(|_| ComplexField::zeros(nx, ny))
            .collect();
        let mut active = Vec::new();
        let mut scaled = Vec::new();
        for (i, r) in residuals.iter().enumerate() {
            if r.shape() != (nx, ny) {
                return Err(helmnet_core::Error::ShapeMismatch {
                    expected: (nx, ny),
                    found: r.shape(),
                }
                .into());
            }
            let mut r_hat = (*r).clone();
            r_hat.scale(Complex64::new(self.h2, 0.0));
            let s = amplitude(&r_hat);
            if s > 0.0 && s.is_finite() {
                active.push((i, s));
                scaled.push(r_hat);
            }
        }
        if active.is_empty() {
            return Ok(out);
        }
        let len = INPUT_CHANNELS * nx * ny;
        let mut x = Tensor4::zeros([active.len(), INPUT_CHANNELS, ny, nx]);
        for (b, (r_hat, &(_, s))) in scaled.iter().zip(&active).enumerate() {
            self.channels
                .encode_into(r_hat, s, &mut x.as_mut_slice()[b * len..(b + 1) * len]);
        }
        let features = match &self.features {
            Some(f) => Some(f.repeat(active.len())?),
            None => None,
        };
        let y = self.network.infer(&x, features.as_ref())?;
        for (b, &(i, s)) in active.iter().enumerate() {
            out[i] = channels_to_field(nx, ny, y.sample(b), s);
        }
        Ok(out)
    }
}
