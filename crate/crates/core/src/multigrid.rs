//! Shifted-Laplacian V-cycle.
//!
//! Each level relaxes with damped Jacobi, restricts the residual by full
//! weighting, recurses from a zero coarse guess, and corrects with the
//! bilinear prolongation of the coarse result. The deepest level is handed
//! to a [`CoarseSolver`], by default one GMRES(10) cycle right-preconditioned
//! by the inverse stencil diagonal.

use num_complex::Complex64;

use crate::error::{check_shape, Error, Result};
use crate::field::ComplexField;
use crate::krylov::{fgmres, FieldMap, KrylovConfig};
use crate::operators::{Shift, StencilOperator};
use crate::problem::HelmholtzProblem;
use crate::transfer::{prolong_field, restrict_field};

#[derive(Clone, Debug, PartialEq)]
pub struct VCycleConfig {
    /// Number of grids, the finest included.
    pub levels: usize,
    pub nu1: usize,
    pub nu2: usize,
    pub damping: f64,
    pub shift: Shift,
    /// Fixed GMRES budget on the deepest grid.
    pub coarse_iters: usize,
}

impl Default for VCycleConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            nu1: 1,
            nu2: 1,
            damping: 0.8,
            shift: Shift::SHIFTED_LAPLACIAN,
            coarse_iters: 10,
        }
    }
}

impl VCycleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidArgument("a V-cycle needs at least 2 levels".into()));
        }
        if self.nu1 + self.nu2 == 0 {
            return Err(Error::InvalidArgument("nu1 + nu2 must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.coarse_iters == 0 {
            return Err(Error::InvalidArgument("coarse_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// One grid of the hierarchy with its shifted operator.
#[derive(Clone, Debug)]
pub struct Level {
    pub problem: HelmholtzProblem,
    pub op: StencilOperator,
}

/// Solver for the deepest level's correction equation `M e = f`.
pub trait CoarseSolver: Sync {
    fn solve(&self, level: &Level, f: &ComplexField) -> ComplexField;
}

/// `iters` iterations of GMRES with the Jacobi diagonal preconditioner from
/// a zero guess, no tolerance.
#[derive(Clone, Copy, Debug)]
pub struct JacobiGmres {
    pub iters: usize,
}

impl CoarseSolver for JacobiGmres {
    fn solve(&self, level: &Level, f: &ComplexField) -> ComplexField {
        coarse_solve(&level.op, f, self.iters)
    }
}

/// One restart cycle of `iters` GMRES iterations on `op e = f`, starting at
/// zero and preconditioned by `D^{-1}`.
pub fn coarse_solve(op: &StencilOperator, f: &ComplexField, iters: usize) -> ComplexField {
    let cfg = KrylovConfig {
        restart: iters.max(1),
        max_iters: iters.max(1),
        rel_tol: 1e-15,
        flexible: false,
    };
    let jacobi = |r: &ComplexField| op.apply_inverse_diagonal(r);
    let x0 = ComplexField::zeros(f.nx(), f.ny());
    let (x, _) = fgmres(op, &jacobi, f, &x0, &cfg).expect("coarse solve config is valid");
    x
}

/// Grids and shifted operators from fine to coarse.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    levels: Vec<Level>,
    cfg: VCycleConfig,
}

impl Hierarchy {
    pub fn new(problem: &HelmholtzProblem, cfg: VCycleConfig) -> Result<Self> {
        cfg.validate()?;
        if problem.grid().max_levels() < cfg.levels {
            return Err(Error::InvalidGrid(format!(
                "{}x{} grid does not support {} levels",
                problem.grid().nx(),
                problem.grid().ny(),
                cfg.levels
            )));
        }
        let mut levels = Vec::with_capacity(cfg.levels);
        let mut p = problem.clone();
        for l in 0..cfg.levels {
            if l > 0 {
                p = p.coarsen()?;
            }
            let op = StencilOperator::new(&p, cfg.shift);
            levels.push(Level { problem: p.clone(), op });
        }
        Ok(Self { levels, cfg })
    }

    pub fn config(&self) -> &VCycleConfig {
        &self.cfg
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Shifted operator on the finest grid.
    pub fn fine_operator(&self) -> &StencilOperator {
        &self.levels[0].op
    }

    pub fn v_cycle(&self, v: &ComplexField, f: &ComplexField) -> Result<ComplexField> {
        self.v_cycle_with(v, f, &JacobiGmres { iters: self.cfg.coarse_iters })
    }

    pub fn v_cycle_with(
        &self,
        v: &ComplexField,
        f: &ComplexField,
        coarse: &dyn CoarseSolver,
    ) -> Result<ComplexField> {
        let shape = self.levels[0].op.shape();
        check_shape(shape, v.shape())?;
        check_shape(shape, f.shape())?;
        Ok(self.cycle(0, v.clone(), f, coarse))
    }

    fn cycle(&self, l: usize, v: ComplexField, f: &ComplexField, coarse: &dyn CoarseSolver) -> ComplexField {
        let level = &self.levels[l];
        let op = &level.op;
        let relax = |v: &ComplexField, n: usize| {
            op.jacobi_relax(v, f, self.cfg.damping, n)
                .expect("validated damping and shapes")
        };
        let mut v = relax(&v, self.cfg.nu1);
        let r = op.residual(&v, f).expect("shapes checked");
        let correction = if l + 1 == self.levels.len() {
            coarse.solve(level, &r)
        } else {
            let fc = restrict_field(&r).expect("hierarchy grids are even");
            let (cx, cy) = fc.shape();
            let vc = self.cycle(l + 1, ComplexField::zeros(cx, cy), &fc, coarse);
            prolong_field(&vc)
        };
        v.axpy(Complex64::new(1.0, 0.0), &correction);
        relax(&v, self.cfg.nu2)
    }
}

/// The V-cycle as a preconditioner: one cycle from a zero guess.
impl FieldMap for Hierarchy {
    fn apply(&self, r: &ComplexField) -> ComplexField {
        let (nx, ny) = r.shape();
        self.cycle(
            0,
            ComplexField::zeros(nx, ny),
            r,
            &JacobiGmres {
                iters: self.cfg.coarse_iters,
            },
        )
    }
}
