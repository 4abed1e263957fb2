//! Reverse-mode tape over the layer set the networks need.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape once in reverse and accumulates gradients for nodes that
//! depend on a leaf created with `requires_grad`.

use std::collections::HashMap;

use crate::conv::{self, ConvSpec};
use crate::error::{NnError, Result};
use crate::tensor::Tensor4;

pub const BN_EPS: f32 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch normalization statistics source.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Normalize by the batch statistics and record them on the tape.
    Train,
    /// Normalize by the given running mean and variance.
    Eval { mean: &'a [f32], var: &'a [f32] },
}

/// Per-channel batch statistics (biased variance) recorded in train mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, k: Var, spec: ConvSpec },
    ConvT { x: Var, k: Var, spec: ConvSpec },
    Bias { x: Var, b: Var },
    BatchNorm { x: Var, scale: Var, offset: Var, xhat: Tensor4, inv_std: Vec<f32>, batch: bool },
    Elu { x: Var },
    Add { a: Var, b: Var },
    Concat { parts: Vec<Var> },
    ChannelMix { x: Var, mix: Tensor4 },
    Mse { pred: Var, target: Var, loss: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor4,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor4>>,
    bn_stats: HashMap<String, BatchStats>,
}

fn channel_sums(t: &Tensor4, f: impl Fn(usize, f32) -> f64) -> Vec<f64> {
    let [n, c, h, w] = t.shape();
    let plane = h * w;
    let mut sums = vec![0.0f64; c];
    for b in 0..n {
        for (ch, s) in sums.iter_mut().enumerate() {
            let start = (b * c + ch) * plane;
            *s += t.as_slice()[start..start + plane]
                .iter()
                .map(|&v| f(ch, v))
                .sum::<f64>();
        }
    }
    sums
}

/// Applies `f(channel, value)` to every element.
fn map_channels(t: &Tensor4, f: impl Fn(usize, f32) -> f32) -> Tensor4 {
    let [_, c, h, w] = t.shape();
    let plane = h * w;
    let mut out = t.clone();
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        *v = f((i / plane) % c, *v);
    }
    out
}

/// `y[b, c] = sum_d m[b, c * C + d] x[b, d]`, or with the transposed
/// coefficients `m[b, d * C + c]`.
fn mix_channels(x: &Tensor4, mix: &Tensor4, transpose: bool) -> Tensor4 {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut y = Tensor4::zeros(x.shape());
    for b in 0..n {
        let xs = x.sample(b);
        let ms = mix.sample(b);
        let ys = &mut y.as_mut_slice()[b * c * plane..(b + 1) * c * plane];
        for co in 0..c {
            for ci in 0..c {
                let k = if transpose { ci * c + co } else { co * c + ci };
                let m = &ms[k * plane..(k + 1) * plane];
                let xin = &xs[ci * plane..(ci + 1) * plane];
                for ((out, &mv), &xv) in ys[co * plane..(co + 1) * plane].iter_mut().zip(m).zip(xin) {
                    *out += mv * xv;
                }
            }
        }
    }
    y
}

fn elu(v: f32) -> f32 {
    if v >= 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor4, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor4, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor4> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Batch statistics recorded by train-mode batch norms, keyed by label.
    pub fn bn_stats(&self) -> &HashMap<String, BatchStats> {
        &self.bn_stats
    }

    /// Removes and returns the recorded batch statistics, so that networks
    /// sharing layer names can run on one tape one after the other.
    pub fn take_bn_stats(&mut self) -> HashMap<String, BatchStats> {
        std::mem::take(&mut self.bn_stats)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, spec: ConvSpec) -> Result<Var> {
        let y = conv::conv2d(self.value(x), self.value(k), spec)?;
        let rg = self.rg(&[x, k]);
        Ok(self.push(y, Op::Conv { x, k, spec }, rg))
    }

    pub fn conv2d_transpose(&mut self, x: Var, k: Var, spec: ConvSpec) -> Result<Var> {
        let y = conv::conv2d_transpose(self.value(x), self.value(k), spec)?;
        let rg = self.rg(&[x, k]);
        Ok(self.push(y, Op::ConvT { x, k, spec }, rg))
    }

    /// Adds a per-channel bias of shape `[1, c, 1, 1]`.
    pub fn bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).channels();
        if self.value(b).shape() != [1, c, 1, 1] {
            return Err(NnError::Shape(format!(
                "bias {:?} for {c} channels",
                self.value(b).shape()
            )));
        }
        let bias = self.value(b).as_slice().to_vec();
        let y = map_channels(self.value(x), |ch, v| v + bias[ch]);
        let rg = self.rg(&[x, b]);
        Ok(self.push(y, Op::Bias { x, b }, rg))
    }

    /// Per-channel normalization followed by `scale * xhat + offset`, with
    /// `scale` and `offset` of shape `[1, c, 1, 1]`. In train mode the batch
    /// statistics are recorded under `label`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        offset: Var,
        mode: BnMode<'_>,
        label: &str,
    ) -> Result<Var> {
        let xt = &self.nodes[x.0].value;
        let [n, c, h, w] = xt.shape();
        for p in [scale, offset] {
            if self.value(p).shape() != [1, c, 1, 1] {
                return Err(NnError::Shape(format!(
                    "batch norm parameter {:?} for {c} channels",
                    self.value(p).shape()
                )));
            }
        }
        let (stats, batch) = match mode {
            BnMode::Train => {
                let count = (n * h * w) as f64;
                let mean: Vec<f64> = channel_sums(xt, |_, v| v as f64)
                    .into_iter()
                    .map(|s| s / count)
                    .collect();
                let var: Vec<f64> = channel_sums(xt, |ch, v| (v as f64 - mean[ch]).powi(2))
                    .into_iter()
                    .map(|s| s / count)
                    .collect();
                let stats = BatchStats {
                    mean: mean.iter().map(|&m| m as f32).collect(),
                    var: var.iter().map(|&v| v as f32).collect(),
                };
                (stats, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(NnError::Shape(format!(
                        "running statistics for {} channels, input has {c}",
                        mean.len()
                    )));
                }
                (
                    BatchStats {
                        mean: mean.to_vec(),
                        var: var.to_vec(),
                    },
                    false,
                )
            }
        };
        let (mean, var) = (&stats.mean, &stats.var);
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xhat = map_channels(xt, |ch, v| (v - mean[ch]) * inv_std[ch]);
        let (g, b) = (self.value(scale).as_slice(), self.value(offset).as_slice());
        let y = map_channels(&xhat, |ch, v| g[ch] * v + b[ch]);
        let rg = self.rg(&[x, scale, offset]);
        if batch {
            self.bn_stats.insert(label.to_string(), stats);
        }
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                scale,
                offset,
                xhat,
                inv_std,
                batch,
            },
            rg,
        ))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(elu);
        let rg = self.rg(&[x]);
        self.push(y, Op::Elu { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b))?;
        let mut y = self.value(a).clone();
        y.add_scaled(1.0, self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Add { a, b }, rg))
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| NnError::Shape("empty concat".into()))?)
            .shape();
        let (n, h, w) = (first[0], first[2], first[3]);
        let mut c = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if (s[0], s[2], s[3]) != (n, h, w) {
                return Err(NnError::Shape(format!("cannot concat {s:?} with {first:?}")));
            }
            c += s[1];
        }
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for p in parts {
                data.extend_from_slice(self.value(*p).sample(b));
            }
        }
        let y = Tensor4::from_vec([n, c, h, w], data)?;
        let rg = self.rg(parts);
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Per-node linear channel mixing with constant coefficients:
    /// `y[b, c] = sum_d mix[b, c * C + d] * x[b, d]` for `x` with `C`
    /// channels and `mix` of shape `[batch, C * C, h, w]`.
    pub fn channel_mix(&mut self, x: Var, mix: Tensor4) -> Result<Var> {
        let [n, c, h, w] = self.value(x).shape();
        if mix.shape() != [n, c * c, h, w] {
            return Err(NnError::Shape(format!(
                "channel mix {:?} for input {:?}",
                mix.shape(),
                [n, c, h, w]
            )));
        }
        let y = mix_channels(self.value(x), &mix, false);
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::ChannelMix { x, mix }, rg))
    }

    /// `(1 / batch) * sum_b ||pred_b - target_b||^2`, accumulated in f64.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        p.same_shape(t)?;
        let sum: f64 = p
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        let loss = sum / p.batch() as f64;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(
            Tensor4::filled([1, 1, 1, 1], loss as f32),
            Op::Mse { pred, target, loss },
            rg,
        ))
    }

    /// Value of a scalar node; losses report their f64 accumulation.
    pub fn scalar(&self, v: Var) -> f64 {
        match &self.nodes[v.0].op {
            Op::Mse { loss, .. } => *loss,
            _ => self.value(v).as_slice()[0] as f64,
        }
    }

    fn accumulate(&mut self, v: Var, g: Tensor4) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_scaled(1.0, &g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar node with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(NnError::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(Tensor4::filled([1, 1, 1, 1], 1.0));
        for i in (0..=root.0).rev() {
            let Some(gy) = self.grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &gy);
            self.grads[i] = Some(gy);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, gy: &Tensor4) {
        let node = &self.nodes[i];
        let mut out: Vec<(Var, Tensor4)> = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, k, spec } => {
                let (dx, dk) = conv::conv2d_backward(self.value(*x), self.value(*k), gy, *spec);
                out.push((*x, dx));
                out.push((*k, dk));
            }
            Op::ConvT { x, k, spec } => {
                let (dx, dk) =
                    conv::conv2d_transpose_backward(self.value(*x), self.value(*k), gy, *spec);
                out.push((*x, dx));
                out.push((*k, dk));
            }
            Op::Bias { x, b } => {
                let c = gy.channels();
                let db = channel_sums(gy, |_, v| v as f64);
                let db = Tensor4::from_vec([1, c, 1, 1], db.iter().map(|&v| v as f32).collect())
                    .expect("shape");
                out.push((*x, gy.clone()));
                out.push((*b, db));
            }
            Op::BatchNorm {
                x,
                scale,
                offset,
                xhat,
                inv_std,
                batch,
            } => {
                let c = gy.channels();
                let [n, _, h, w] = gy.shape();
                let count = (n * h * w) as f64;
                let g = self.value(*scale).as_slice();
                let dbeta = channel_sums(gy, |_, v| v as f64);
                let prod = Tensor4::from_vec(
                    gy.shape(),
                    gy.as_slice()
                        .iter()
                        .zip(xhat.as_slice())
                        .map(|(a, b)| a * b)
                        .collect(),
                )
                .expect("shape");
                let dgamma = channel_sums(&prod, |_, v| v as f64);
                let dx = if *batch {
                    let mut dx = gy.clone();
                    let plane = h * w;
                    for (idx, v) in dx.as_mut_slice().iter_mut().enumerate() {
                        let ch = (idx / plane) % c;
                        let xh = xhat.as_slice()[idx] as f64;
                        let t = *v as f64 - dbeta[ch] / count - xh * dgamma[ch] / count;
                        *v = (g[ch] as f64 * inv_std[ch] as f64 * t) as f32;
                    }
                    dx
                } else {
                    map_channels(gy, |ch, v| v * g[ch] * inv_std[ch])
                };
                let to_t = |v: Vec<f64>| {
                    Tensor4::from_vec([1, c, 1, 1], v.iter().map(|&x| x as f32).collect())
                        .expect("shape")
                };
                out.push((*x, dx));
                out.push((*scale, to_t(dgamma)));
                out.push((*offset, to_t(dbeta)));
            }
            Op::Elu { x } => {
                let xv = self.value(*x);
                let dx = Tensor4::from_vec(
                    gy.shape(),
                    gy.as_slice()
                        .iter()
                        .zip(xv.as_slice())
                        .map(|(&g, &v)| if v >= 0.0 { g } else { g * v.exp() })
                        .collect(),
                )
                .expect("shape");
                out.push((*x, dx));
            }
            Op::Add { a, b } => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.clone()));
            }
            Op::Concat { parts } => {
                let n = gy.batch();
                let mut pieces: Vec<Vec<f32>> = parts.iter().map(|_| Vec::new()).collect();
                for b in 0..n {
                    let mut off = 0;
                    let sample = gy.sample(b);
                    for (p, piece) in parts.iter().zip(pieces.iter_mut()) {
                        let l = self.value(*p).sample_len();
                        piece.extend_from_slice(&sample[off..off + l]);
                        off += l;
                    }
                }
                for (p, piece) in parts.iter().zip(pieces) {
                    out.push((*p, Tensor4::from_vec(self.value(*p).shape(), piece).expect("shape")));
                }
            }
            Op::ChannelMix { x, mix } => {
                out.push((*x, mix_channels(gy, mix, true)));
            }
            Op::Mse { pred, target, .. } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let s = 2.0 * gy.as_slice()[0] / p.batch() as f32;
                let d: Vec<f32> = p
                    .as_slice()
                    .iter()
                    .zip(t.as_slice())
                    .map(|(a, b)| s * (a - b))
                    .collect();
                let dp = Tensor4::from_vec(p.shape(), d).expect("shape");
                out.push((*target, dp.map(|v| -v)));
                out.push((*pred, dp));
            }
        }
        for (v, g) in out {
            self.accumulate(v, g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_values() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor4::from_vec([1, 1, 1, 3], vec![0.0, -30.0, 2.0]).unwrap(), false);
        let y = t.elu(x);
        let v = t.value(y).as_slice();
        assert_eq!(v[0], 0.0);
        assert!((v[1] + 1.0).abs() < 1e-7);
        assert_eq!(v[2], 2.0);
    }

    #[test]
    fn mse_hand_sum() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor4::filled([1, 1, 2, 2], 1.5), true);
        let q = t.leaf(Tensor4::filled([1, 1, 2, 2], 0.5), false);
        let l = t.mse(p, q).unwrap();
        assert_eq!(t.scalar(l), 4.0);
        t.backward(l).unwrap();
        assert!(t.grad(p).unwrap().as_slice().iter().all(|&g| g == 2.0));
        let same = t.mse(p, p).unwrap();
        assert_eq!(t.scalar(same), 0.0);
        let other = t.leaf(Tensor4::zeros([1, 2, 2, 1]), false);
        assert!(t.mse(p, other).is_err());
    }

    #[test]
    fn constant_input_normalizes_to_offset() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor4::filled([2, 3, 4, 4], 7.0), false);
        let g = t.leaf(Tensor4::filled([1, 3, 1, 1], 1.0), false);
        let b = t.leaf(Tensor4::zeros([1, 3, 1, 1]), false);
        let y = t.batch_norm(x, g, b, BnMode::Train, "bn").unwrap();
        assert!(t.value(y).as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(t.bn_stats()["bn"].mean, vec![7.0; 3]);
        assert_eq!(t.bn_stats()["bn"].var, vec![0.0; 3]);
    }

    #[test]
    fn concat_routes_gradients() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor4::filled([2, 1, 2, 2], 1.0), true);
        let b = t.leaf(Tensor4::filled([2, 2, 2, 2], 2.0), true);
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c).shape(), [2, 3, 2, 2]);
        assert_eq!(t.value(c).get([1, 0, 0, 0]), 1.0);
        assert_eq!(t.value(c).get([1, 2, 1, 1]), 2.0);
        let z = t.leaf(Tensor4::zeros([2, 3, 2, 2]), false);
        let l = t.mse(c, z).unwrap();
        t.backward(l).unwrap();
        assert!(t.grad(a).unwrap().as_slice().iter().all(|&g| g == 1.0));
        assert!(t.grad(b).unwrap().as_slice().iter().all(|&g| g == 2.0));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor4::zeros([1, 1, 2, 2]), true);
        assert!(t.backward(a).is_err());
    }
}
