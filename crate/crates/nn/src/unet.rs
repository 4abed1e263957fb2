//! U-Net solver, encoder, and the encoder-fed solver.
//!
//! Contraction: at each level a strided 5x5 down-convolution
//! `x <- elu(N(R x))` followed by ResNet blocks
//! `x <- elu(N(x + K2 elu(N(K1 x))))`. The coarsest level runs extra ResNet
//! blocks. Expansion: `x <- cat(N(P elu(x)), skip)` with a strided 5x5
//! transposed convolution, ending with the network input as the last skip
//! and a 3x3 output convolution with bias and no activation.
//!
//! The encoder sees only the slowness channel. Its stem and contraction path
//! emit one feature map per level. A solver built with feature channels
//! concatenates `f[l]` to its state before the down-convolution leaving
//! level `l` and before the up-convolution leaving level `l`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::ConvSpec;
use crate::error::{NnError, Result};
use crate::tape::{BnMode, Tape, Var};
use crate::tensor::Tensor4;
use crate::weights::{Bound, NetworkWeights};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    /// Number of downsamplings.
    pub levels: usize,
    /// Channels after the first downsampling; doubles per level.
    pub base_channels: usize,
    pub resnet_per_level: usize,
    pub bottleneck_resnets: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 16,
            resnet_per_level: 1,
            bottleneck_resnets: 3,
            in_channels: 4,
            out_channels: 2,
        }
    }
}

const SAMPLE_KERNEL: usize = 5;
const RESNET_KERNEL: usize = 3;
const HEAD_KERNEL: usize = 3;

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels < 2 || self.base_channels % 2 != 0 {
            return Err(NnError::InvalidArgument(format!(
                "need levels >= 1 and an even base_channels >= 2, got {} and {}",
                self.levels, self.base_channels
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(NnError::InvalidArgument("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Channels of the contraction state at level `l >= 1`.
    pub fn level_channels(&self, l: usize) -> usize {
        self.base_channels << (l - 1)
    }

    /// Channels produced by the up-convolution that lands on level `l`.
    pub fn up_channels(&self, l: usize) -> usize {
        if l == 0 {
            self.base_channels / 2
        } else {
            self.level_channels(l)
        }
    }

    /// Feature channels an encoder emits per level, `0..=levels`.
    pub fn feature_channels(&self) -> Vec<usize> {
        (0..=self.levels).map(|l| self.up_channels(l)).collect()
    }

    pub fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let m = 1 << self.levels;
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(NnError::Shape(format!(
                "{h}x{w} input is not divisible by 2^{}",
                self.levels
            )));
        }
        Ok(())
    }
}

/// One entry of the channel ledger: layer name, input and output channels,
/// and the spatial reduction factor of the output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub layer: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub coarsening: usize,
}

/// Per-level encoder features, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    pub levels: Vec<Tensor4>,
}

impl FeatureStack {
    /// Repeats single-sample features along the batch axis.
    pub fn repeat(&self, batch: usize) -> Result<Self> {
        let levels = self
            .levels
            .iter()
            .map(|t| {
                if t.batch() != 1 {
                    return Err(NnError::Shape(format!(
                        "can only repeat single-sample features, got {:?}",
                        t.shape()
                    )));
                }
                Tensor4::stack(&vec![t; batch])
            })
            .collect::<Result<_>>()?;
        Ok(Self { levels })
    }

    pub fn zeros_like(config: &UNetConfig, batch: usize, h: usize, w: usize) -> Self {
        let levels = config
            .feature_channels()
            .iter()
            .enumerate()
            .map(|(l, &c)| Tensor4::zeros([batch, c, h >> l, w >> l]))
            .collect();
        Self { levels }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, recorded on the tape.
    Train,
    /// Running statistics.
    Eval,
}

struct Ctx<'a> {
    weights: &'a NetworkWeights,
    bound: &'a Bound,
    mode: Mode,
}

impl Ctx<'_> {
    fn bn(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let scale = self.bound.var(&format!("{name}.scale"))?;
        let offset = self.bound.var(&format!("{name}.offset"))?;
        let mode = match self.mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => self.weights.running_stats(name)?,
        };
        tape.batch_norm(x, scale, offset, mode, name)
    }

    fn resnet(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let spec = ConvSpec::same(RESNET_KERNEL);
        let k1 = self.bound.var(&format!("{name}.k1"))?;
        let k2 = self.bound.var(&format!("{name}.k2"))?;
        let h = tape.conv2d(x, k1, spec)?;
        let h = self.bn(tape, h, &format!("{name}.bn1"))?;
        let h = tape.elu(h);
        let h = tape.conv2d(h, k2, spec)?;
        let s = tape.add(x, h)?;
        let s = self.bn(tape, s, &format!("{name}.bn2"))?;
        Ok(tape.elu(s))
    }

    fn down(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let k = self.bound.var(&format!("{name}.kernel"))?;
        let h = tape.conv2d(x, k, ConvSpec::down(SAMPLE_KERNEL))?;
        let h = self.bn(tape, h, &format!("{name}.bn"))?;
        Ok(tape.elu(h))
    }

    fn up(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let k = self.bound.var(&format!("{name}.kernel"))?;
        let h = tape.elu(x);
        let h = tape.conv2d_transpose(h, k, ConvSpec::down(SAMPLE_KERNEL))?;
        self.bn(tape, h, &format!("{name}.bn"))
    }
}

fn add_resnet(w: &mut NetworkWeights, name: &str, c: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let kk = RESNET_KERNEL * RESNET_KERNEL;
    let shape = [c, c, RESNET_KERNEL, RESNET_KERNEL];
    w.add_kernel(&format!("{name}.k1"), shape, c * kk, rng)?;
    w.add_batch_norm(&format!("{name}.bn1"), c)?;
    w.add_kernel(&format!("{name}.k2"), shape, c * kk, rng)?;
    w.add_batch_norm(&format!("{name}.bn2"), c)
}

fn add_down(w: &mut NetworkWeights, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let kk = SAMPLE_KERNEL * SAMPLE_KERNEL;
    w.add_kernel(&format!("{name}.kernel"), [cout, cin, SAMPLE_KERNEL, SAMPLE_KERNEL], cin * kk, rng)?;
    w.add_batch_norm(&format!("{name}.bn"), cout)
}

/// A stride-2 transposed kernel reaches each output with about a quarter of
/// its taps, which sets its fan-in.
fn add_up(w: &mut NetworkWeights, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let kk = SAMPLE_KERNEL * SAMPLE_KERNEL;
    w.add_kernel(
        &format!("{name}.kernel"),
        [cin, cout, SAMPLE_KERNEL, SAMPLE_KERNEL],
        (cin * kk / 4).max(1),
        rng,
    )?;
    w.add_batch_norm(&format!("{name}.bn"), cout)
}

/// Stand-alone U-Net, or the solver half of an encoder-solver pair when
/// built with feature channels.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    config: UNetConfig,
    features: Option<Vec<usize>>,
    ledger: Vec<LedgerEntry>,
    weights: NetworkWeights,
}

impl UNet {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        Self::build(config, None, seed)
    }

    /// Solver that consumes encoder features with the given channel counts
    /// per level, `0..=levels`.
    pub fn solver(config: UNetConfig, feature_channels: &[usize], seed: u64) -> Result<Self> {
        if feature_channels.len() != config.levels + 1 {
            return Err(NnError::InvalidArgument(format!(
                "{} feature levels for a {}-level network",
                feature_channels.len(),
                config.levels
            )));
        }
        Self::build(config, Some(feature_channels.to_vec()), seed)
    }

    fn build(config: UNetConfig, features: Option<Vec<usize>>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = NetworkWeights::new();
        let mut ledger = Vec::new();
        let f = |l: usize| features.as_ref().map_or(0, |f| f[l]);
        let mut entry = |layer: String, i: usize, o: usize, l: usize| {
            ledger.push(LedgerEntry {
                layer,
                in_channels: i,
                out_channels: o,
                coarsening: 1 << l,
            })
        };
        let big_l = config.levels;
        let mut c = config.in_channels;
        for l in 0..big_l {
            let cout = config.level_channels(l + 1);
            add_down(&mut w, &format!("down{l}"), c + f(l), cout, &mut rng)?;
            entry(format!("down{l}"), c + f(l), cout, l + 1);
            c = cout;
            for r in 0..config.resnet_per_level {
                add_resnet(&mut w, &format!("res{}.{r}", l + 1), c, &mut rng)?;
                entry(format!("res{}.{r}", l + 1), c, c, l + 1);
            }
        }
        for b in 0..config.bottleneck_resnets {
            add_resnet(&mut w, &format!("bottleneck.{b}"), c, &mut rng)?;
            entry(format!("bottleneck.{b}"), c, c, big_l);
        }
        for l in (1..=big_l).rev() {
            let cout = config.up_channels(l - 1);
            add_up(&mut w, &format!("up{l}"), c + f(l), cout, &mut rng)?;
            entry(format!("up{l}"), c + f(l), cout, l - 1);
            let skip = if l == 1 { config.in_channels } else { config.level_channels(l - 1) };
            entry(format!("skip{}", l - 1), cout, cout + skip, l - 1);
            c = cout + skip;
        }
        w.add_kernel(
            "head.kernel",
            [config.out_channels, c, HEAD_KERNEL, HEAD_KERNEL],
            c * HEAD_KERNEL * HEAD_KERNEL,
            &mut rng,
        )?;
        w.add_bias("head.bias", config.out_channels)?;
        entry("head".into(), c, config.out_channels, 0);
        Ok(Self {
            config,
            features,
            ledger,
            weights: w,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn feature_channels(&self) -> Option<&[usize]> {
        self.features.as_deref()
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut NetworkWeights {
        &mut self.weights
    }

    /// Replaces all weights; names and shapes must match.
    pub fn load_weights(&mut self, w: NetworkWeights) -> Result<()> {
        if w.params().len() != self.weights.params().len() {
            return Err(NnError::InvalidArgument(format!(
                "{} parameters, network has {}",
                w.params().len(),
                self.weights.params().len()
            )));
        }
        for (a, b) in w.params().iter().zip(self.weights.params()) {
            if a.name != b.name || a.kind != b.kind || a.value.shape() != b.value.shape() {
                return Err(NnError::InvalidArgument(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        self.weights = w;
        Ok(())
    }

    /// Forward pass with parameters already on the tape.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        features: Option<&[Var]>,
        mode: Mode,
    ) -> Result<Var> {
        let [_, c, h, w] = tape.value(x).shape();
        if c != self.config.in_channels {
            return Err(NnError::Shape(format!(
                "network expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        self.config.check_spatial(h, w)?;
        let feats: Option<&[Var]> = match (&self.features, features) {
            (Some(fc), Some(fs)) => {
                if fs.len() != fc.len() {
                    return Err(NnError::Shape(format!(
                        "{} feature levels, solver expects {}",
                        fs.len(),
                        fc.len()
                    )));
                }
                for (l, (v, &ch)) in fs.iter().zip(fc).enumerate() {
                    let s = tape.value(*v).shape();
                    if s[1] != ch || s[2] != h >> l || s[3] != w >> l {
                        return Err(NnError::Shape(format!(
                            "feature level {l} has shape {s:?}, expected {ch} channels at {}x{}",
                            h >> l,
                            w >> l
                        )));
                    }
                }
                Some(fs)
            }
            (None, None) => None,
            (Some(_), None) => {
                return Err(NnError::InvalidArgument("solver needs encoder features".into()))
            }
            (None, Some(_)) => {
                return Err(NnError::InvalidArgument("stand-alone network takes no features".into()))
            }
        };
        let with = |tape: &mut Tape, v: Var, l: usize| -> Result<Var> {
            match feats {
                Some(fs) => tape.concat(&[v, fs[l]]),
                None => Ok(v),
            }
        };
        let ctx = Ctx {
            weights: &self.weights,
            bound,
            mode,
        };
        let big_l = self.config.levels;
        let mut skips = vec![x];
        let mut cur = x;
        for l in 0..big_l {
            let inp = with(tape, cur, l)?;
            cur = ctx.down(tape, inp, &format!("down{l}"))?;
            for r in 0..self.config.resnet_per_level {
                cur = ctx.resnet(tape, cur, &format!("res{}.{r}", l + 1))?;
            }
            skips.push(cur);
        }
        for b in 0..self.config.bottleneck_resnets {
            cur = ctx.resnet(tape, cur, &format!("bottleneck.{b}"))?;
        }
        for l in (1..=big_l).rev() {
            let inp = with(tape, cur, l)?;
            let u = ctx.up(tape, inp, &format!("up{l}"))?;
            cur = tape.concat(&[u, skips[l - 1]])?;
        }
        let k = bound.var("head.kernel")?;
        let out = tape.conv2d(cur, k, ConvSpec::same(HEAD_KERNEL))?;
        tape.bias(out, bound.var("head.bias")?)
    }

    /// Binds the weights and runs the forward pass.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        features: Option<&[Var]>,
        mode: Mode,
        requires_grad: bool,
    ) -> Result<(Var, Bound)> {
        let bound = self.weights.bind(tape, requires_grad);
        let out = self.forward_bound(tape, &bound, x, features, mode)?;
        Ok((out, bound))
    }

    /// Eval-mode inference without gradients.
    pub fn infer(&self, x: &Tensor4, features: Option<&FeatureStack>) -> Result<Tensor4> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let fv: Option<Vec<Var>> = features.map(|f| {
            f.levels
                .iter()
                .map(|t| tape.leaf(t.clone(), false))
                .collect()
        });
        let (out, _) = self.forward(&mut tape, xv, fv.as_deref(), Mode::Eval, false)?;
        Ok(tape.value(out).clone())
    }
}

/// Feature encoder over the slowness channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    config: UNetConfig,
    weights: NetworkWeights,
}

impl Encoder {
    /// `config.in_channels` is ignored; the encoder reads one channel.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        let config = UNetConfig {
            in_channels: 1,
            ..config
        };
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = NetworkWeights::new();
        let c0 = config.up_channels(0);
        w.add_kernel(
            "stem.kernel",
            [c0, 1, RESNET_KERNEL, RESNET_KERNEL],
            RESNET_KERNEL * RESNET_KERNEL,
            &mut rng,
        )?;
        w.add_batch_norm("stem.bn", c0)?;
        let mut c = c0;
        for l in 0..config.levels {
            let cout = config.level_channels(l + 1);
            add_down(&mut w, &format!("down{l}"), c, cout, &mut rng)?;
            c = cout;
            for r in 0..config.resnet_per_level {
                add_resnet(&mut w, &format!("res{}.{r}", l + 1), c, &mut rng)?;
            }
        }
        for b in 0..config.bottleneck_resnets {
            add_resnet(&mut w, &format!("bottleneck.{b}"), c, &mut rng)?;
        }
        Ok(Self { config, weights: w })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn feature_channels(&self) -> Vec<usize> {
        self.config.feature_channels()
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut NetworkWeights {
        &mut self.weights
    }

    pub fn load_weights(&mut self, w: NetworkWeights) -> Result<()> {
        let same = w.params().len() == self.weights.params().len()
            && w.params().iter().zip(self.weights.params()).all(|(a, b)| {
                a.name == b.name && a.kind == b.kind && a.value.shape() == b.value.shape()
            });
        if !same {
            return Err(NnError::InvalidArgument("encoder weights do not match".into()));
        }
        self.weights = w;
        Ok(())
    }

    pub fn forward_bound(&self, tape: &mut Tape, bound: &Bound, kappa: Var, mode: Mode) -> Result<Vec<Var>> {
        let [_, c, h, w] = tape.value(kappa).shape();
        if c != 1 {
            return Err(NnError::Shape(format!("encoder expects 1 channel, got {c}")));
        }
        self.config.check_spatial(h, w)?;
        let ctx = Ctx {
            weights: &self.weights,
            bound,
            mode,
        };
        let k = bound.var("stem.kernel")?;
        let s = tape.conv2d(kappa, k, ConvSpec::same(RESNET_KERNEL))?;
        let s = ctx.bn(tape, s, "stem.bn")?;
        let mut cur = tape.elu(s);
        let mut out = vec![cur];
        for l in 0..self.config.levels {
            cur = ctx.down(tape, cur, &format!("down{l}"))?;
            for r in 0..self.config.resnet_per_level {
                cur = ctx.resnet(tape, cur, &format!("res{}.{r}", l + 1))?;
            }
            if l + 1 < self.config.levels {
                out.push(cur);
            }
        }
        for b in 0..self.config.bottleneck_resnets {
            cur = ctx.resnet(tape, cur, &format!("bottleneck.{b}"))?;
        }
        out.push(cur);
        Ok(out)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        kappa: Var,
        mode: Mode,
        requires_grad: bool,
    ) -> Result<(Vec<Var>, Bound)> {
        let bound = self.weights.bind(tape, requires_grad);
        let out = self.forward_bound(tape, &bound, kappa, mode)?;
        Ok((out, bound))
    }

    /// Eval-mode features without gradients.
    pub fn infer(&self, kappa: &Tensor4) -> Result<FeatureStack> {
        let mut tape = Tape::new();
        let k = tape.leaf(kappa.clone(), false);
        let (vars, _) = self.forward(&mut tape, k, Mode::Eval, false)?;
        Ok(FeatureStack {
            levels: vars.iter().map(|v| tape.value(*v).clone()).collect(),
        })
    }
}
