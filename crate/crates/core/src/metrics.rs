use crate::error::{Error, Result};

/// Average residual reduction per iteration up to a target drop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceFactor {
    /// `(||r_T|| / ||r_0||)^(1/T)`; `None` when the drop was never reached.
    pub rho: Option<f64>,
    /// First iteration reaching the drop, or the last iteration otherwise.
    pub iterations: usize,
    pub converged: bool,
}

/// `T` is the first index with `history[T] / history[0] <= 1 / target_drop`
/// and `rho = (history[T] / history[0])^(1/T)`.
pub fn convergence_factor(history: &[f64], target_drop: f64) -> Result<ConvergenceFactor> {
    let (&r0, _) = history
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty residual history".into()))?;
    if !(r0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "initial residual must be positive, got {r0}"
        )));
    }
    if !(target_drop > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target drop must exceed 1, got {target_drop}"
        )));
    }
    let threshold = 1.0 / target_drop;
    match history.iter().position(|&r| r / r0 <= threshold) {
        Some(t) => Ok(ConvergenceFactor {
            rho: Some((history[t] / r0).powf(1.0 / t as f64)),
            iterations: t,
            converged: true,
        }),
        None => Ok(ConvergenceFactor {
            rho: None,
            iterations: history.len() - 1,
            converged: false,
        }),
    }
}
