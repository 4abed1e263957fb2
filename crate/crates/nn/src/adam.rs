use crate::error::{NnError, Result};
use crate::tensor::Tensor4;
use crate::weights::{Gradients, NetworkWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<Tensor4>,
    v: Vec<Tensor4>,
}

/// Outcome of one optimizer call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient contained NaN or infinity; nothing was changed.
    Skipped,
}

impl Adam {
    pub fn new(weights: &NetworkWeights) -> Self {
        let zeros: Vec<Tensor4> = weights
            .trainable()
            .map(|p| Tensor4::zeros(p.value.shape()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Missing gradients count as zero.
    pub fn step(
        &mut self,
        weights: &mut NetworkWeights,
        grads: &Gradients,
        lr: f32,
    ) -> Result<StepOutcome> {
        if grads.len() != self.m.len() {
            return Err(NnError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        for (g, m) in grads.iter().zip(&self.m) {
            if let Some(g) = g {
                g.same_shape(m)?;
                if !g.is_finite() {
                    return Ok(StepOutcome::Skipped);
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - (self.beta1 as f64).powi(t);
        let c2 = 1.0 - (self.beta2 as f64).powi(t);
        for (((p, g), m), v) in weights
            .trainable_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let zero;
            let g = match g {
                Some(g) => g.as_slice(),
                None => {
                    zero = vec![0.0f32; m.len()];
                    &zero
                }
            };
            for (((w, &gi), mi), vi) in p
                .value
                .as_mut_slice()
                .iter_mut()
                .zip(g)
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi as f64 / c1;
                let vhat = *vi as f64 / c2;
                *w -= (lr as f64 * mhat / (vhat.sqrt() + self.eps as f64)) as f32;
            }
        }
        Ok(StepOutcome::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::ParamKind;

    fn single(values: Vec<f32>) -> NetworkWeights {
        let mut w = NetworkWeights::new();
        let n = values.len();
        w.insert("w", ParamKind::Trainable, Tensor4::from_vec([1, 1, 1, n], values).unwrap())
            .unwrap();
        w
    }

    #[test]
    fn zero_gradient_is_a_null_update() {
        let mut w = single(vec![1.0, -2.0]);
        let mut opt = Adam::new(&w);
        let g = vec![Some(Tensor4::zeros([1, 1, 1, 2]))];
        opt.step(&mut w, &g, 0.1).unwrap();
        assert_eq!(w.get("w").unwrap().as_slice(), &[1.0, -2.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut w = single(vec![0.0, 0.0, 0.0]);
        let mut opt = Adam::new(&w);
        let g = vec![Some(Tensor4::from_vec([1, 1, 1, 3], vec![3.0, -0.02, 150.0]).unwrap())];
        opt.step(&mut w, &g, 0.01).unwrap();
        let got = w.get("w").unwrap().as_slice();
        for (x, s) in got.iter().zip([1.0f32, -1.0, 1.0]) {
            assert!((x - (-0.01 * s)).abs() <= 1e-6 * 0.01, "{x}");
        }
    }

    #[test]
    fn quadratic_converges() {
        let mut w = single(vec![1.0]);
        let mut opt = Adam::new(&w);
        for _ in 0..200 {
            let x = w.get("w").unwrap().clone();
            let g = vec![Some(x.map(|v| 2.0 * v))];
            opt.step(&mut w, &g, 0.1).unwrap();
        }
        assert!(w.get("w").unwrap().norm() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut w = single(vec![1.0]);
        let mut opt = Adam::new(&w);
        let g = vec![Some(Tensor4::filled([1, 1, 1, 1], f32::NAN))];
        assert_eq!(opt.step(&mut w, &g, 0.1).unwrap(), StepOutcome::Skipped);
        assert_eq!(opt.steps(), 0);
        assert_eq!(w.get("w").unwrap().as_slice(), &[1.0]);
    }
}
