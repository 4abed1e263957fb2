//! Supervised training with ADAM and the step-down schedule, and the
//! solve-time mini-retraining on a single model.
//!
//! The loss is the mean squared error between the prediction and the true
//! error, both taken on amplitude-normalized pairs (see [`crate::network`]).
//! An optional second term weighs the squared misfit `||h^2 A e_net - r_hat||^2`;
//! it is off by default.
//! After every mini-batch the recorded batch-norm statistics are blended
//! into the running buffers.

use std::collections::HashMap;
use std::io::{self, Write};

use helmnet_core::{HelmholtzProblem, VCycleConfig};
use helmnet_nn::{
    Adam, BatchStats, ConvSpec, FeatureStack, Mode, NetworkWeights, StepOutcome, Tape, Tensor4, Var, BN_MOMENTUM,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{derive_seed, SampleFactory, TrainingSample};
use crate::error::{Error, Result};
use crate::network::{amplitude, field_to_channels, ModelChannels, Network, INPUT_CHANNELS, OUTPUT_CHANNELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f32,
    pub batch0: usize,
    /// First schedule anchor; later anchors follow at half the previous gap.
    pub t0: usize,
    /// Share of the samples held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
    /// Weight of the residual misfit term; 0 trains on the error alone.
    pub residual_loss_weight: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            lr0: 1e-4,
            batch0: 20,
            t0: 48,
            val_fraction: 0.1,
            seed: 0,
            residual_loss_weight: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || self.batch0 == 0 || self.t0 == 0 {
            return Err(Error::Config("training needs lr0 > 0, batch0 >= 1 and t0 >= 1".into()));
        }
        if !(self.residual_loss_weight >= 0.0 && self.residual_loss_weight.is_finite()) {
            return Err(Error::Config(format!(
                "residual_loss_weight must be finite and >= 0, got {}",
                self.residual_loss_weight
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Epochs after which the learning rate drops tenfold and the batch doubles:
/// `t0`, `t0 + t0/2`, `t0 + t0/2 + t0/4`, ... while the gap is positive.
pub fn schedule_anchors(t0: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut at, mut gap) = (0, t0);
    while gap > 0 {
        at += gap;
        out.push(at);
        gap /= 2;
    }
    out
}

/// Learning rate and batch size of 1-based `epoch`.
pub fn schedule(epoch: usize, cfg: &TrainConfig) -> (f32, usize) {
    let k = schedule_anchors(cfg.t0).iter().filter(|&&a| a < epoch).count();
    let lr = (cfg.lr0 as f64 / 10f64.powi(k as i32)) as f32;
    (lr, cfg.batch0 << k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of `||e_net - e_true|| / ||e_true||` over the training batches.
    pub train_rel_error: f64,
    pub val_rel_error: Option<f64>,
    pub lr: f32,
    pub batch: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Set when a non-finite loss stopped training; the network then holds
    /// the weights from the start of that epoch.
    pub aborted: Option<String>,
    pub skipped_steps: usize,
}

impl TrainReport {
    /// CSV `epoch,mean_rel_error_train,mean_rel_error_val,lr,batch`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "epoch,mean_rel_error_train,mean_rel_error_val,lr,batch")?;
        for r in &self.history {
            let val = r.val_rel_error.map_or(String::new(), |v| format!("{v:e}"));
            writeln!(w, "{},{:e},{},{:e},{}", r.epoch, r.train_rel_error, val, r.lr, r.batch)?;
        }
        Ok(())
    }
}

/// Network input, target and slowness of a mini-batch.
struct Batch {
    x: Tensor4,
    target: Tensor4,
    kappa: Tensor4,
    models: Vec<usize>,
}

impl Batch {
    /// The normalized scaled residual, the first two input channels.
    fn residual(&self) -> Tensor4 {
        let [n, _, h, w] = self.x.shape();
        let len = OUTPUT_CHANNELS * h * w;
        let mut r = Tensor4::zeros([n, OUTPUT_CHANNELS, h, w]);
        for b in 0..n {
            r.as_mut_slice()[b * len..(b + 1) * len].copy_from_slice(&self.x.sample(b)[..len]);
        }
        r
    }
}

/// `h^2 A` on two-channel (real, imaginary) fields as a tape expression:
/// the 5-point Laplacian as a fixed convolution with zero padding plus the
/// pointwise mass term `-w^2 h^2 kappa^2 (1 - gamma i)`.
struct ResidualOperator {
    weight: f32,
    laplacian: Tensor4,
    /// Per model, `[1, 4, ny, nx]` coefficients for [`Tape::channel_mix`].
    mass: Vec<Tensor4>,
}

impl ResidualOperator {
    fn new(problems: &[HelmholtzProblem], weight: f32) -> Self {
        let root = weight.sqrt();
        let laplacian = Tensor4::from_fn([OUTPUT_CHANNELS, OUTPUT_CHANNELS, 3, 3], |[o, i, y, x]| {
            match (o == i, y, x) {
                (false, _, _) => 0.0,
                (true, 1, 1) => 4.0 * root,
                (true, 1, _) | (true, _, 1) => -root,
                _ => 0.0,
            }
        });
        let mass = problems
            .iter()
            .map(|p| {
                let (nx, ny) = p.grid().shape();
                let h = p.grid().h();
                let k2 = p.kappa2().values().as_slice();
                let g = p.gamma().values().as_slice();
                let n = nx * ny;
                let mut m = Tensor4::zeros([1, OUTPUT_CHANNELS * OUTPUT_CHANNELS, ny, nx]);
                let d = m.as_mut_slice();
                for q in 0..n {
                    let k = p.omega().powi(2) * h * h * k2[q];
                    let (re, im) = ((-k) as f32 * root, (k * g[q]) as f32 * root);
                    d[q] = re;
                    d[n + q] = -im;
                    d[2 * n + q] = im;
                    d[3 * n + q] = re;
                }
                m
            })
            .collect();
        Self { weight, laplacian, mass }
    }

    /// Mass coefficients and weighted target for a batch.
    fn prepare(&self, batch: &Batch) -> Result<(Tensor4, Tensor4)> {
        let parts: Vec<&Tensor4> = batch.models.iter().map(|&m| &self.mass[m]).collect();
        let root = self.weight.sqrt();
        Ok((Tensor4::stack(&parts)?, batch.residual().map(|v| v * root)))
    }

    /// `weight * ||h^2 A pred - r||^2 / batch` on the tape.
    fn loss(&self, tape: &mut Tape, pred: Var, (mix, target): (Tensor4, Tensor4)) -> Result<Var> {
        let k = tape.leaf(self.laplacian.clone(), false);
        let lap = tape.conv2d(pred, k, ConvSpec::same(3))?;
        let mass = tape.channel_mix(pred, mix)?;
        let ae = tape.add(lap, mass)?;
        let r = tape.leaf(target, false);
        Ok(tape.mse(ae, r)?)
    }
}

fn make_batch(samples: &[&TrainingSample], channels: &[ModelChannels]) -> Batch {
    let (nx, ny) = samples[0].r_hat.shape();
    let n = samples.len();
    let len = nx * ny;
    let mut x = Tensor4::zeros([n, INPUT_CHANNELS, ny, nx]);
    let mut target = Tensor4::zeros([n, OUTPUT_CHANNELS, ny, nx]);
    let mut kappa = Tensor4::zeros([n, 1, ny, nx]);
    for (b, s) in samples.iter().enumerate() {
        let ch = &channels[s.model];
        let scale = amplitude(&s.r_hat);
        let scale = if scale > 0.0 { scale } else { 1.0 };
        ch.encode_into(&s.r_hat, scale, &mut x.as_mut_slice()[b * INPUT_CHANNELS * len..(b + 1) * INPUT_CHANNELS * len]);
        field_to_channels(
            &s.e_true,
            scale,
            &mut target.as_mut_slice()[b * OUTPUT_CHANNELS * len..(b + 1) * OUTPUT_CHANNELS * len],
        );
        kappa.as_mut_slice()[b * len..(b + 1) * len].copy_from_slice(&ch.kappa2);
    }
    Batch {
        x,
        target,
        kappa,
        models: samples.iter().map(|s| s.model).collect(),
    }
}

fn rel_errors(pred: &Tensor4, target: &Tensor4) -> Vec<f64> {
    (0..pred.batch())
        .map(|b| {
            let (p, t) = (pred.sample(b), target.sample(b));
            let d: f64 = p.iter().zip(t).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            let n: f64 = t.iter().map(|v| (*v as f64).powi(2)).sum();
            if n > 0.0 {
                (d / n).sqrt()
            } else {
                d.sqrt()
            }
        })
        .collect()
}

/// Stacks cached single-model features along the batch axis.
fn gather_features(cache: &HashMap<usize, FeatureStack>, models: &[usize]) -> Result<FeatureStack> {
    let levels = cache[&models[0]].levels.len();
    let levels = (0..levels)
        .map(|l| {
            let parts: Vec<&Tensor4> = models.iter().map(|m| &cache[m].levels[l]).collect();
            Ok(Tensor4::stack(&parts)?)
        })
        .collect::<Result<_>>()?;
    Ok(FeatureStack { levels })
}

/// Optimizer state and the training loop shared by [`train`] and
/// [`retrain`].
struct Trainer<'a> {
    net: &'a mut Network,
    channels: Vec<ModelChannels>,
    solver_opt: Adam,
    encoder_opt: Option<Adam>,
    /// Eval-mode features per model when the encoder is frozen.
    frozen: Option<HashMap<usize, FeatureStack>>,
    residual: Option<ResidualOperator>,
}

struct StepResult {
    rel_errors: Vec<f64>,
    loss: f64,
    skipped: bool,
}

impl<'a> Trainer<'a> {
    fn new(
        net: &'a mut Network,
        problems: &[HelmholtzProblem],
        freeze_encoder: bool,
        residual_loss_weight: f32,
    ) -> Result<Self> {
        let channels: Vec<ModelChannels> = problems.iter().map(ModelChannels::new).collect();
        let solver_opt = Adam::new(net.solver().weights());
        let (encoder_opt, frozen) = match net.encoder() {
            None => (None, None),
            Some(enc) if freeze_encoder => {
                let mut cache = HashMap::new();
                for (m, ch) in channels.iter().enumerate() {
                    cache.insert(m, enc.infer(&ch.kappa2_tensor())?);
                }
                (None, Some(cache))
            }
            Some(enc) => (Some(Adam::new(enc.weights())), None),
        };
        let residual = (residual_loss_weight > 0.0).then(|| ResidualOperator::new(problems, residual_loss_weight));
        Ok(Self {
            net,
            channels,
            solver_opt,
            encoder_opt,
            frozen,
            residual,
        })
    }

    fn step(&mut self, batch: Batch, lr: f32) -> Result<StepResult> {
        let mut tape = Tape::new();
        let prepared = self.residual.as_ref().map(|op| op.prepare(&batch)).transpose()?;
        let x = tape.leaf(batch.x, false);
        let t = tape.leaf(batch.target, false);
        let mut enc_stats: HashMap<String, BatchStats> = HashMap::new();
        let (out, enc_bound, sol_bound) = match &*self.net {
            Network::Standalone(u) => {
                let (out, b) = u.forward(&mut tape, x, None, Mode::Train, true)?;
                (out, None, b)
            }
            Network::EncoderSolver { encoder, solver } => {
                let (feats, eb) = match &self.frozen {
                    Some(cache) => {
                        let f = gather_features(cache, &batch.models)?;
                        let vars = f.levels.into_iter().map(|t| tape.leaf(t, false)).collect();
                        (vars, None)
                    }
                    None => {
                        let k = tape.leaf(batch.kappa, false);
                        let (f, eb) = encoder.forward(&mut tape, k, Mode::Train, true)?;
                        enc_stats = tape.take_bn_stats();
                        (f, Some(eb))
                    }
                };
                let (out, sb) = solver.forward(&mut tape, x, Some(&feats), Mode::Train, true)?;
                (out, eb, sb)
            }
        };
        let rel = rel_errors(tape.value(out), tape.value(t));
        let mut loss_var = tape.mse(out, t)?;
        if let (Some(op), Some(prepared)) = (&self.residual, prepared) {
            let extra = op.loss(&mut tape, out, prepared)?;
            loss_var = tape.add(loss_var, extra)?;
        }
        let loss = tape.scalar(loss_var);
        if !loss.is_finite() {
            return Ok(StepResult {
                rel_errors: rel,
                loss,
                skipped: true,
            });
        }
        tape.backward(loss_var)?;
        let sol_grads = self.net.solver().weights().gradients(&tape, &sol_bound);
        let enc_grads = match (self.net.encoder(), &enc_bound) {
            (Some(e), Some(b)) => Some(e.weights().gradients(&tape, b)),
            _ => None,
        };
        let sol_stats = tape.take_bn_stats();
        drop(tape);

        let mut skipped = self.solver_opt.step(self.net.solver_mut().weights_mut(), &sol_grads, lr)?
            == StepOutcome::Skipped;
        if let (Some(opt), Some(g), Network::EncoderSolver { encoder, .. }) =
            (self.encoder_opt.as_mut(), enc_grads.as_ref(), &mut *self.net)
        {
            skipped |= opt.step(encoder.weights_mut(), g, lr)? == StepOutcome::Skipped;
            encoder.weights_mut().update_running_stats(&enc_stats, BN_MOMENTUM)?;
        }
        self.net
            .solver_mut()
            .weights_mut()
            .update_running_stats(&sol_stats, BN_MOMENTUM)?;
        Ok(StepResult {
            rel_errors: rel,
            loss,
            skipped,
        })
    }

    fn evaluate(&self, samples: &[&TrainingSample], batch: usize) -> Result<f64> {
        let mut total = 0.0;
        for chunk in samples.chunks(batch.max(1)) {
            let b = make_batch(chunk, &self.channels);
            let feats = match &self.frozen {
                Some(cache) => Some(gather_features(cache, &b.models)?),
                None => self.net.features(&b.kappa)?,
            };
            let pred = self.net.infer(&b.x, feats.as_ref())?;
            total += rel_errors(&pred, &b.target).iter().sum::<f64>();
        }
        Ok(total / samples.len() as f64)
    }

    fn snapshot(&self) -> NetworkWeights {
        self.net.weights()
    }

    /// Runs `epochs` epochs; `plan(epoch)` gives learning rate and batch.
    fn fit(
        &mut self,
        train: &[&TrainingSample],
        val: &[&TrainingSample],
        epochs: usize,
        plan: impl Fn(usize) -> (f32, usize),
        seed: u64,
    ) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for epoch in 1..=epochs {
            let (lr, batch) = plan(epoch);
            let good = self.snapshot();
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for idx in order.chunks(batch) {
                let picked: Vec<&TrainingSample> = idx.iter().map(|&i| train[i]).collect();
                let r = self.step(make_batch(&picked, &self.channels), lr)?;
                if !r.loss.is_finite() {
                    self.net.load_weights(good)?;
                    report.aborted = Some(format!("non-finite loss in epoch {epoch}"));
                    log::warn!("training stopped: non-finite loss in epoch {epoch}");
                    return Ok(report);
                }
                report.skipped_steps += r.skipped as usize;
                sum += r.rel_errors.iter().sum::<f64>();
            }
            let train_rel_error = sum / train.len() as f64;
            let val_rel_error = if val.is_empty() {
                None
            } else {
                Some(self.evaluate(val, batch)?)
            };
            log::info!(
                "epoch {epoch}/{epochs}: train {train_rel_error:.4} val {} lr {lr:e} batch {batch}",
                val_rel_error.map_or("-".to_string(), |v| format!("{v:.4}"))
            );
            report.history.push(EpochRecord {
                epoch,
                train_rel_error,
                val_rel_error,
                lr,
                batch,
            });
        }
        Ok(report)
    }
}

/// Splits sample indices into training and validation sets with a seeded
/// shuffle.
/// Relative misfit `||h^2 A e - r_hat|| / ||r_hat||` of each pair, with `h^2 A`
/// evaluated by the tape expression behind the residual loss term.
pub fn residual_misfit(problems: &[HelmholtzProblem], samples: &[TrainingSample]) -> Result<Vec<f64>> {
    if samples.iter().any(|s| s.model >= problems.len()) {
        return Err(Error::Config("sample refers to an unknown model".into()));
    }
    let channels: Vec<ModelChannels> = problems.iter().map(ModelChannels::new).collect();
    let op = ResidualOperator::new(problems, 1.0);
    let refs: Vec<&TrainingSample> = samples.iter().collect();
    let batch = make_batch(&refs, &channels);
    let (mix, target) = op.prepare(&batch)?;
    let mut tape = Tape::new();
    let e = tape.leaf(batch.target, false);
    let k = tape.leaf(op.laplacian.clone(), false);
    let lap = tape.conv2d(e, k, ConvSpec::same(3))?;
    let mass = tape.channel_mix(e, mix)?;
    let ae = tape.add(lap, mass)?;
    Ok(rel_errors(tape.value(ae), &target))
}

pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Trains the whole network (both halves of an encoder-solver pair jointly)
/// on `samples`, whose `model` fields index `problems`.
pub fn train(
    net: &mut Network,
    problems: &[HelmholtzProblem],
    samples: &[TrainingSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.model >= problems.len()) {
        return Err(Error::InvalidArgument(format!("sample refers to missing model {}", s.model)));
    }
    let (tr, va) = split_indices(samples.len(), cfg.val_fraction, derive_seed(cfg.seed, 1));
    let train_set: Vec<&TrainingSample> = tr.iter().map(|&i| &samples[i]).collect();
    let val_set: Vec<&TrainingSample> = va.iter().map(|&i| &samples[i]).collect();
    let mut trainer = Trainer::new(net, problems, false, cfg.residual_loss_weight)?;
    trainer.fit(&train_set, &val_set, cfg.epochs, |e| schedule(e, cfg), derive_seed(cfg.seed, 2))
}

/// Mini-retraining parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrainConfig {
    pub pairs: usize,
    pub epochs: usize,
    /// Divides the initial training learning rate.
    pub lr_divisor: f32,
    pub batch: usize,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            pairs: 100,
            epochs: 30,
            lr_divisor: 10.0,
            batch: 20,
        }
    }
}

/// Fine-tunes the solver on fresh pairs of one problem. An encoder stays
/// frozen and its features are computed once.
pub fn retrain(
    net: &mut Network,
    problem: &HelmholtzProblem,
    vcycle: &VCycleConfig,
    cfg: &RetrainConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    if cfg.epochs == 0 {
        return Ok(TrainReport::default());
    }
    if cfg.pairs == 0 || cfg.batch == 0 || !(cfg.lr_divisor > 0.0) {
        return Err(Error::Config("retraining needs pairs, batch and lr_divisor > 0".into()));
    }
    let factory = SampleFactory::new(problem, vcycle.clone(), 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let samples = (0..cfg.pairs)
        .map(|_| factory.sample(&mut rng))
        .collect::<Result<Vec<_>>>()?;
    let set: Vec<&TrainingSample> = samples.iter().collect();
    let lr = train_cfg.lr0 / cfg.lr_divisor;
    let mut trainer = Trainer::new(net, std::slice::from_ref(problem), true, train_cfg.residual_loss_weight)?;
    trainer.fit(&set, &[], cfg.epochs, |_| (lr, cfg.batch), derive_seed(seed, 4))
}
