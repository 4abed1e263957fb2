//! Matrix-free five-point Helmholtz and shifted-Laplacian operators.

use num_complex::Complex64;

use crate::error::{check_shape, Error, Result};
use crate::field::ComplexField;
use crate::krylov::FieldMap;
use crate::problem::HelmholtzProblem;

/// Complex shift `(alpha, beta)` of the mass term,
/// `-omega^2 kappa^2 (alpha - beta i)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shift {
    pub alpha: f64,
    pub beta: f64,
}

impl Shift {
    /// The Helmholtz operator itself.
    pub const NONE: Shift = Shift {
        alpha: 1.0,
        beta: 0.0,
    };
    /// The shifted Laplacian used for preconditioning.
    pub const SHIFTED_LAPLACIAN: Shift = Shift {
        alpha: 1.0,
        beta: 0.5,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "shift ({alpha}, {beta}) needs finite values and beta >= 0"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for Shift {
    fn default() -> Self {
        Self::NONE
    }
}

/// `(1/h^2) [0 -1 0; -1 d h^2 -1; 0 -1 0]` with the node-dependent centre
/// `d = (4 - omega^2 kappa^2 h^2 (alpha - beta i)(1 - gamma i)) / h^2` and
/// zero padding outside the grid.
#[derive(Clone, Debug)]
pub struct StencilOperator {
    nx: usize,
    ny: usize,
    h: f64,
    inv_h2: f64,
    shift: Shift,
    diag: Vec<Complex64>,
}

impl StencilOperator {
    pub fn new(problem: &HelmholtzProblem, shift: Shift) -> Self {
        let grid = problem.grid();
        let h = grid.h();
        let inv_h2 = 1.0 / (h * h);
        let w2h2 = problem.omega() * problem.omega() * h * h;
        let s = Complex64::new(shift.alpha, -shift.beta);
        let diag = problem
            .kappa2()
            .values()
            .as_slice()
            .iter()
            .zip(problem.gamma().values().as_slice())
            .map(|(&k2, &g)| {
                let mass = s * Complex64::new(1.0, -g) * (w2h2 * k2);
                (Complex64::new(4.0, 0.0) - mass) * inv_h2
            })
            .collect();
        Self {
            nx: grid.nx(),
            ny: grid.ny(),
            h,
            inv_h2,
            shift,
            diag,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shift(&self) -> Shift {
        self.shift
    }

    /// Centre coefficient at every node.
    pub fn diagonal(&self) -> &[Complex64] {
        &self.diag
    }

    pub fn apply(&self, u: &ComplexField) -> Result<ComplexField> {
        check_shape(self.shape(), u.shape())?;
        let mut out = ComplexField::zeros(self.nx, self.ny);
        self.apply_into(u, &mut out);
        Ok(out)
    }

    /// `out = A u`; shapes must already agree.
    pub fn apply_into(&self, u: &ComplexField, out: &mut ComplexField) {
        debug_assert_eq!(u.shape(), self.shape());
        debug_assert_eq!(out.shape(), self.shape());
        let (nx, ny) = (self.nx, self.ny);
        let src = u.as_slice();
        let diag = &self.diag;
        let c = self.inv_h2;
        crate::par::for_each_row(out.as_mut_slice(), nx, |j, row| {
            let base = j * nx;
            let zero = Complex64::new(0.0, 0.0);
            for (i, o) in row.iter_mut().enumerate() {
                let k = base + i;
                let left = if i > 0 { src[k - 1] } else { zero };
                let right = if i + 1 < nx { src[k + 1] } else { zero };
                let down = if j > 0 { src[k - nx] } else { zero };
                let up = if j + 1 < ny { src[k + nx] } else { zero };
                *o = diag[k] * src[k] - (left + right + down + up) * c;
            }
        });
    }

    /// `g - A u`.
    pub fn residual(&self, u: &ComplexField, g: &ComplexField) -> Result<ComplexField> {
        check_shape(self.shape(), g.shape())?;
        let mut r = self.apply(u)?;
        for (ri, &gi) in r.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *ri = gi - *ri;
        }
        Ok(r)
    }

    /// `iters` sweeps of `v <- v + damping * D^{-1} (f - A v)`.
    pub fn jacobi_relax(
        &self,
        v: &ComplexField,
        f: &ComplexField,
        damping: f64,
        iters: usize,
    ) -> Result<ComplexField> {
        check_shape(self.shape(), v.shape())?;
        check_shape(self.shape(), f.shape())?;
        if !(damping > 0.0 && damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {damping}"
            )));
        }
        if self.diag.iter().any(|d| d.norm_sqr() == 0.0) {
            return Err(Error::InvalidProblem("zero stencil diagonal".into()));
        }
        let mut v = v.clone();
        let mut av = ComplexField::zeros(self.nx, self.ny);
        for _ in 0..iters {
            self.apply_into(&v, &mut av);
            for (((vi, &ai), &fi), &d) in v
                .as_mut_slice()
                .iter_mut()
                .zip(av.as_slice())
                .zip(f.as_slice())
                .zip(&self.diag)
            {
                *vi += (fi - ai) / d * damping;
            }
        }
        Ok(v)
    }

    /// `D^{-1} r`, the Jacobi diagonal preconditioner.
    pub fn apply_inverse_diagonal(&self, r: &ComplexField) -> ComplexField {
        let data = r
            .as_slice()
            .iter()
            .zip(&self.diag)
            .map(|(&ri, &d)| ri / d)
            .collect();
        ComplexField::from_vec(self.nx, self.ny, data).expect("shape preserved")
    }
}

impl FieldMap for StencilOperator {
    fn apply(&self, x: &ComplexField) -> ComplexField {
        let mut out = ComplexField::zeros(self.nx, self.ny);
        self.apply_into(x, &mut out);
        out
    }
}
