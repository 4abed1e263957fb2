//! Preconditioners for flexible GMRES: the shifted-Laplacian V-cycle `M_V`,
//! the network between two Jacobi steps `M_JU`, and the V-cycle started from
//! the network prediction `M_VU`.
//!
//! Network preconditioners are nonlinear, so they must only be used with
//! flexible GMRES.

use std::fmt;
use std::str::FromStr;

use helmnet_core::krylov::FieldMap;
use helmnet_core::{par, ComplexField, HelmholtzProblem, Hierarchy, Shift, StencilOperator, VCycleConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ErrorPredictor;

/// Damping of the Jacobi steps around the network.
pub const JACOBI_DAMPING: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrecondKind {
    V,
    JU,
    VU,
}

impl PrecondKind {
    pub const ALL: [PrecondKind; 3] = [PrecondKind::V, PrecondKind::JU, PrecondKind::VU];

    pub fn uses_network(self) -> bool {
        self != PrecondKind::V
    }

    pub fn name(self) -> &'static str {
        match self {
            PrecondKind::V => "V",
            PrecondKind::JU => "JU",
            PrecondKind::VU => "VU",
        }
    }
}

impl fmt::Display for PrecondKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrecondKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "V" => Ok(PrecondKind::V),
            "JU" => Ok(PrecondKind::JU),
            "VU" => Ok(PrecondKind::VU),
            _ => Err(Error::InvalidArgument(format!(
                "unknown preconditioner `{s}`, expected V, JU or VU"
            ))),
        }
    }
}

/// `M_V`: one V-cycle on the shifted operator from a zero guess.
#[derive(Clone, Debug)]
pub struct VCyclePrecond {
    hierarchy: Hierarchy,
}

impl VCyclePrecond {
    pub fn new(problem: &HelmholtzProblem, cfg: VCycleConfig) -> Result<Self> {
        Ok(Self {
            hierarchy: Hierarchy::new(problem, cfg)?,
        })
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }
}

impl FieldMap for VCyclePrecond {
    fn apply(&self, r: &ComplexField) -> ComplexField {
        self.hierarchy.apply(r)
    }
}

/// Intermediate values of one `M_JU` application.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobiUNetTrace {
    /// `Jacobi(0, r)`.
    pub e1: ComplexField,
    /// `r - A e1`, the network input before scaling.
    pub residual: ComplexField,
    /// Network prediction for `residual`.
    pub correction: ComplexField,
    /// `e1 + correction`.
    pub e2: ComplexField,
    /// `Jacobi(e2, r)`, the output.
    pub e: ComplexField,
}

/// `M_JU`: a damped Jacobi step on the Helmholtz operator, the network on the
/// remaining residual, and a second Jacobi step.
pub struct JacobiUNetPrecond<P> {
    op: StencilOperator,
    predictor: P,
    damping: f64,
}

impl<P: ErrorPredictor> JacobiUNetPrecond<P> {
    pub fn new(problem: &HelmholtzProblem, predictor: P) -> Self {
        Self {
            op: StencilOperator::new(problem, Shift::NONE),
            predictor,
            damping: JACOBI_DAMPING,
        }
    }

    pub fn operator(&self) -> &StencilOperator {
        &self.op
    }

    fn jacobi(&self, v: &ComplexField, r: &ComplexField) -> ComplexField {
        self.op
            .jacobi_relax(v, r, self.damping, 1)
            .expect("shapes match the problem")
    }

    pub fn trace_batch(&self, rs: &[&ComplexField]) -> Result<Vec<JacobiUNetTrace>> {
        let e1: Vec<ComplexField> = par::map(rs, |r| {
            self.jacobi(&ComplexField::zeros(r.nx(), r.ny()), r)
        });
        let residuals: Vec<ComplexField> = rs
            .iter()
            .zip(&e1)
            .map(|(r, e)| self.op.residual(e, r))
            .collect::<helmnet_core::Result<_>>()?;
        let refs: Vec<&ComplexField> = residuals.iter().collect();
        let corrections = self.predictor.predict(&refs)?;
        let e2: Vec<ComplexField> = e1
            .iter()
            .zip(&corrections)
            .map(|(a, b)| a.add(b))
            .collect::<helmnet_core::Result<_>>()?;
        let pairs: Vec<(&ComplexField, &ComplexField)> = e2.iter().zip(rs.iter().copied()).collect();
        let e = par::map(&pairs, |(v, r)| self.jacobi(v, r));
        Ok(e1
            .into_iter()
            .zip(residuals)
            .zip(corrections)
            .zip(e2)
            .zip(e)
            .map(|((((e1, residual), correction), e2), e)| JacobiUNetTrace {
                e1,
                residual,
                correction,
                e2,
                e,
            })
            .collect())
    }
}

impl<P: ErrorPredictor> FieldMap for JacobiUNetPrecond<P> {
    fn apply(&self, r: &ComplexField) -> ComplexField {
        self.apply_batch(&[r]).pop().expect("one column")
    }

    fn apply_batch(&self, rs: &[&ComplexField]) -> Vec<ComplexField> {
        self.trace_batch(rs)
            .expect("predictor validated at construction")
            .into_iter()
            .map(|t| t.e)
            .collect()
    }
}

/// `M_VU`: a V-cycle on the shifted operator started from the network
/// prediction.
pub struct VCycleUNetPrecond<'h, P> {
    hierarchy: &'h Hierarchy,
    predictor: P,
}

impl<'h, P: ErrorPredictor> VCycleUNetPrecond<'h, P> {
    pub fn new(hierarchy: &'h Hierarchy, predictor: P) -> Self {
        Self { hierarchy, predictor }
    }
}

impl<P: ErrorPredictor> FieldMap for VCycleUNetPrecond<'_, P> {
    fn apply(&self, r: &ComplexField) -> ComplexField {
        self.apply_batch(&[r]).pop().expect("one column")
    }

    fn apply_batch(&self, rs: &[&ComplexField]) -> Vec<ComplexField> {
        let e0 = self
            .predictor
            .predict(rs)
            .expect("predictor validated at construction");
        let pairs: Vec<(&ComplexField, &ComplexField)> = e0.iter().zip(rs.iter().copied()).collect();
        par::map(&pairs, |(v, r)| {
            self.hierarchy
                .v_cycle(v, r)
                .expect("shapes match the problem")
        })
    }
}

/// Two chained damped Jacobi steps from zero, what `M_JU` reduces to with a
/// zero network.
pub fn two_jacobi_steps(problem: &HelmholtzProblem, r: &ComplexField) -> Result<ComplexField> {
    let op = StencilOperator::new(problem, Shift::NONE);
    Ok(op.jacobi_relax(&ComplexField::zeros(r.nx(), r.ny()), r, JACOBI_DAMPING, 2)?)
}

