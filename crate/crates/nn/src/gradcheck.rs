//! Reverse-mode gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor4;

/// Differences below this fraction of the loss are forward-pass rounding
/// in 32-bit arithmetic and are not held to the relative tolerance.
pub const NOISE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    /// Relative error of the directional derivative along one direction
    /// perturbing all inputs at once.
    pub max_rel_error: f64,
    /// The same check restricted to one input tensor at a time. Small
    /// tensors have weak finite-difference signals, so these sit closer to
    /// the rounding floor.
    pub per_input: Vec<f64>,
}

fn eval<F>(inputs: &[Tensor4], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.scalar(out))
}

fn rel_error(analytic: f64, fd: f64, floor: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor)
}

/// Checks the gradient of the scalar `f(inputs)` by central differences
/// `f(x + step * v) - f(x - step * v)` along a unit direction `v`.
///
/// Each tensor's part of `v` mixes its normalized gradient with uniform
/// noise of comparable norm. The directional derivative is evaluated on the
/// perturbation actually representable in `f32`.
pub fn gradient_check<F>(inputs: &[Tensor4], f: F, step: f32, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let loss = tape.scalar(out);
    tape.backward(out)?;
    let floor = NOISE_FLOOR * loss.abs().max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let dirs: Vec<Vec<f32>> = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let g = tape.grad(vars[i]);
            let gnorm = g.map_or(0.0, |g| g.norm()) as f32;
            (0..x.len())
                .map(|k| {
                    let toward = match g {
                        Some(g) if gnorm > 0.0 => g.as_slice()[k] / gnorm,
                        _ => 0.0,
                    };
                    toward + rng.random_range(-1.0f32..1.0) / (x.len() as f32).sqrt()
                })
                .collect()
        })
        .collect();
    let perturb = |i: usize, scale: f32, plus: &mut Vec<Tensor4>, minus: &mut Vec<Tensor4>| -> f64 {
        let g = tape.grad(vars[i]);
        let mut a = 0.0f64;
        for (k, &d) in dirs[i].iter().enumerate() {
            let xv = inputs[i].as_slice()[k];
            let (p, m) = (xv + scale * d, xv - scale * d);
            plus[i].as_mut_slice()[k] = p;
            minus[i].as_mut_slice()[k] = m;
            if let Some(g) = g {
                a += g.as_slice()[k] as f64 * (p as f64 - m as f64);
            }
        }
        a
    };
    let total: f64 = dirs.iter().flatten().map(|&d| (d as f64).powi(2)).sum();
    let joint_scale = step / total.sqrt().max(f64::MIN_POSITIVE) as f32;
    let mut plus = inputs.to_vec();
    let mut minus = inputs.to_vec();
    let mut joint_analytic = 0.0;
    for i in 0..inputs.len() {
        joint_analytic += perturb(i, joint_scale, &mut plus, &mut minus);
    }
    let joint_fd = eval(&plus, &f)? - eval(&minus, &f)?;
    let max_rel_error = rel_error(joint_analytic, joint_fd, floor);

    let mut per_input = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let n: f64 = dirs[i].iter().map(|&d| (d as f64).powi(2)).sum();
        let mut p = inputs.to_vec();
        let mut m = inputs.to_vec();
        let a = perturb(i, step / n.sqrt().max(f64::MIN_POSITIVE) as f32, &mut p, &mut m);
        let fd = eval(&p, &f)? - eval(&m, &f)?;
        per_input.push(rel_error(a, fd, floor));
    }
    Ok(GradCheckReport {
        loss,
        max_rel_error,
        per_input,
    })
}
