//! Restarted (flexible) GMRES with right preconditioning.
//!
//! The block solver is the naive batched scheme: every right-hand side runs
//! its own Arnoldi process, while the operator and preconditioner are
//! applied to all active columns at once. A single-RHS solve is the block
//! solve with one column, so per-column histories of a block run reproduce
//! the corresponding single runs exactly.

use std::io::{self, Write};

use num_complex::Complex64;

use crate::error::{check_shape, Error, Result};
use crate::field::ComplexField;

/// A map on grid functions. Preconditioners need not be linear.
pub trait FieldMap: Sync {
    fn apply(&self, x: &ComplexField) -> ComplexField;

    /// Applies the map to several fields; the default fans out over
    /// columns.
    fn apply_batch(&self, xs: &[&ComplexField]) -> Vec<ComplexField> {
        crate::par::map(xs, |x| self.apply(x))
    }
}

impl<F> FieldMap for F
where
    F: Fn(&ComplexField) -> ComplexField + Sync,
{
    fn apply(&self, x: &ComplexField) -> ComplexField {
        self(x)
    }
}

/// The identity map, i.e. no preconditioning.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl FieldMap for Identity {
    fn apply(&self, x: &ComplexField) -> ComplexField {
        x.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KrylovConfig {
    /// Krylov subspace size per restart cycle.
    pub restart: usize,
    pub max_iters: usize,
    /// Stop once `||r|| / ||r0|| <= rel_tol`.
    pub rel_tol: f64,
    /// Store the preconditioned vectors (FGMRES) instead of re-applying the
    /// preconditioner to the Krylov combination at the end of a cycle.
    pub flexible: bool,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            restart: 10,
            max_iters: 1000,
            rel_tol: 1e-6,
            flexible: true,
        }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restart == 0 {
            return Err(Error::InvalidArgument("restart must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

/// Relative slack on the final true-residual test.
const TRUE_RESIDUAL_SLACK: f64 = 1e-6;
/// Arnoldi breakdown threshold relative to the unorthogonalized norm.
const BREAKDOWN_TOL: f64 = 1e-14;

/// Residual norms and outcome per right-hand side.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    /// Absolute residual norms; entry 0 is `||b - A x0||`, then one entry per
    /// iteration.
    pub residual_history: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// Column stopped on an Arnoldi breakdown.
    pub breakdown: Vec<bool>,
}

impl SolveReport {
    pub fn columns(&self) -> usize {
        self.residual_history.len()
    }

    pub fn relative_history(&self, col: usize) -> Vec<f64> {
        let h = &self.residual_history[col];
        let r0 = h[0];
        if r0 == 0.0 {
            return vec![0.0; h.len()];
        }
        h.iter().map(|r| r / r0).collect()
    }

    /// Worst relative residual over all columns at every iteration; frozen
    /// columns keep their final value.
    pub fn block_relative_history(&self) -> Vec<f64> {
        let cols: Vec<Vec<f64>> = (0..self.columns()).map(|c| self.relative_history(c)).collect();
        let len = cols.iter().map(Vec::len).max().unwrap_or(0);
        (0..len)
            .map(|k| {
                cols.iter()
                    .map(|h| h[k.min(h.len() - 1)])
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    /// CSV with header `iter,rhs_index,relative_residual`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "iter,rhs_index,relative_residual")?;
        let cols: Vec<Vec<f64>> = (0..self.columns()).map(|c| self.relative_history(c)).collect();
        let len = cols.iter().map(Vec::len).max().unwrap_or(0);
        for k in 0..len {
            for (c, h) in cols.iter().enumerate() {
                if let Some(v) = h.get(k) {
                    writeln!(w, "{k},{c},{v:e}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    /// Needs `r = b - A x` to open a cycle.
    Start,
    Iterating,
    Done,
}

struct Column {
    x: ComplexField,
    basis: Vec<ComplexField>,
    /// Preconditioned directions, flexible mode only.
    directions: Vec<ComplexField>,
    /// Rotated Hessenberg columns; column `j` has `j + 2` entries.
    hess: Vec<Vec<Complex64>>,
    rotations: Vec<(f64, Complex64)>,
    g: Vec<Complex64>,
    r0: f64,
    history: Vec<f64>,
    iters: usize,
    phase: Phase,
    converged: bool,
    breakdown: bool,
}

/// Complex Givens rotation `[c s; -conj(s) c]` zeroing `b` against `a`.
fn givens(a: Complex64, b: Complex64) -> (f64, Complex64, Complex64) {
    let na = a.norm();
    let nb = b.norm();
    if nb == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0), a);
    }
    let rho = na.hypot(nb);
    if na == 0.0 {
        return (0.0, b.conj() / rho, Complex64::new(rho, 0.0));
    }
    let phase = a / na;
    (na / rho, phase * b.conj() / rho, phase * rho)
}

impl Column {
    fn new(x0: ComplexField) -> Self {
        Self {
            x: x0,
            basis: Vec::new(),
            directions: Vec::new(),
            hess: Vec::new(),
            rotations: Vec::new(),
            g: Vec::new(),
            r0: f64::NAN,
            history: Vec::new(),
            iters: 0,
            phase: Phase::Start,
            converged: false,
            breakdown: false,
        }
    }

    fn open_cycle(&mut self, mut r: ComplexField, cfg: &KrylovConfig) {
        let beta = r.norm();
        if self.history.is_empty() {
            self.r0 = beta;
            self.history.push(beta);
        }
        if self.r0 == 0.0 || beta <= cfg.rel_tol * (1.0 + TRUE_RESIDUAL_SLACK) * self.r0 {
            self.converged = true;
            self.phase = Phase::Done;
            return;
        }
        if self.breakdown || self.iters >= cfg.max_iters {
            self.phase = Phase::Done;
            return;
        }
        r.scale(Complex64::new(1.0 / beta, 0.0));
        self.basis.clear();
        self.directions.clear();
        self.hess.clear();
        self.rotations.clear();
        self.g.clear();
        self.basis.push(r);
        self.g.push(Complex64::new(beta, 0.0));
        self.phase = Phase::Iterating;
    }

    /// One Arnoldi step given `z = M v_j` and `w = A z`. Returns true when
    /// the cycle has to close.
    fn arnoldi_step(&mut self, z: ComplexField, mut w: ComplexField, cfg: &KrylovConfig) -> bool {
        let j = self.basis.len() - 1;
        if cfg.flexible {
            self.directions.push(z);
        }
        let w_norm0 = w.norm();
        let mut col = Vec::with_capacity(j + 2);
        for v in &self.basis {
            let hij = v.dot(&w);
            w.axpy(-hij, v);
            col.push(hij);
        }
        let h_next = w.norm();
        col.push(Complex64::new(h_next, 0.0));
        for (i, &(c, s)) in self.rotations.iter().enumerate() {
            let (a, b) = (col[i], col[i + 1]);
            col[i] = a * c + s * b;
            col[i + 1] = -s.conj() * a + b * c;
        }
        let (c, s, r) = givens(col[j], col[j + 1]);
        col[j] = r;
        col[j + 1] = Complex64::new(0.0, 0.0);
        let gj = self.g[j];
        self.g[j] = gj * c;
        self.g.push(-s.conj() * gj);
        self.rotations.push((c, s));
        self.hess.push(col);

        self.iters += 1;
        let estimate = self.g[j + 1].norm();
        self.history.push(estimate);

        let broke = !(h_next > BREAKDOWN_TOL * w_norm0);
        if broke {
            self.breakdown = true;
        } else {
            w.scale(Complex64::new(1.0 / h_next, 0.0));
            self.basis.push(w);
        }
        broke
            || estimate <= cfg.rel_tol * self.r0
            || self.hess.len() == cfg.restart
            || self.iters >= cfg.max_iters
    }

    /// Least-squares coefficients of the current cycle.
    fn coefficients(&self) -> Vec<Complex64> {
        let k = self.hess.len();
        let mut y = vec![Complex64::new(0.0, 0.0); k];
        for i in (0..k).rev() {
            let mut acc = self.g[i];
            for (jj, yj) in y.iter().enumerate().skip(i + 1) {
                acc -= self.hess[jj][i] * yj;
            }
            let rii = self.hess[i][i];
            y[i] = if rii.norm() > 0.0 { acc / rii } else { Complex64::new(0.0, 0.0) };
        }
        y
    }

    /// `sum y_j v_j` (standard) or `sum y_j z_j` (flexible).
    fn combination(&self, flexible: bool) -> ComplexField {
        let y = self.coefficients();
        let vecs = if flexible { &self.directions } else { &self.basis };
        let (nx, ny) = self.x.shape();
        let mut s = ComplexField::zeros(nx, ny);
        for (yj, v) in y.iter().zip(vecs) {
            s.axpy(*yj, v);
        }
        s
    }
}

/// Solves `A x = b` from `x0`.
pub fn fgmres<A, M>(
    a: &A,
    m: &M,
    b: &ComplexField,
    x0: &ComplexField,
    cfg: &KrylovConfig,
) -> Result<(ComplexField, SolveReport)>
where
    A: FieldMap + ?Sized,
    M: FieldMap + ?Sized,
{
    let (mut xs, report) = solve_columns(a, m, std::slice::from_ref(b), vec![x0.clone()], cfg)?;
    Ok((xs.pop().expect("one column"), report))
}

/// Solves `A X = B` column by column from zero initial guesses, batching the
/// operator and preconditioner applications. Converged columns are frozen.
pub fn block_fgmres<A, M>(
    a: &A,
    m: &M,
    bs: &[ComplexField],
    cfg: &KrylovConfig,
) -> Result<(Vec<ComplexField>, SolveReport)>
where
    A: FieldMap + ?Sized,
    M: FieldMap + ?Sized,
{
    let x0s = bs
        .iter()
        .map(|b| ComplexField::zeros(b.nx(), b.ny()))
        .collect();
    solve_columns(a, m, bs, x0s, cfg)
}

fn solve_columns<A, M>(
    a: &A,
    m: &M,
    bs: &[ComplexField],
    x0s: Vec<ComplexField>,
    cfg: &KrylovConfig,
) -> Result<(Vec<ComplexField>, SolveReport)>
where
    A: FieldMap + ?Sized,
    M: FieldMap + ?Sized,
{
    cfg.validate()?;
    if bs.is_empty() {
        return Err(Error::InvalidArgument("no right-hand sides".into()));
    }
    for (b, x0) in bs.iter().zip(&x0s) {
        check_shape(bs[0].shape(), b.shape())?;
        check_shape(b.shape(), x0.shape())?;
    }
    let mut cols: Vec<Column> = x0s.into_iter().map(Column::new).collect();

    loop {
        let starting: Vec<usize> = (0..cols.len())
            .filter(|&c| cols[c].phase == Phase::Start)
            .collect();
        if !starting.is_empty() {
            let xs: Vec<&ComplexField> = starting.iter().map(|&c| &cols[c].x).collect();
            let axs = a.apply_batch(&xs);
            for (&c, ax) in starting.iter().zip(axs) {
                let r = bs[c].sub(&ax)?;
                cols[c].open_cycle(r, cfg);
            }
        }

        let active: Vec<usize> = (0..cols.len())
            .filter(|&c| cols[c].phase == Phase::Iterating)
            .collect();
        if active.is_empty() {
            break;
        }
        let vs: Vec<&ComplexField> = active
            .iter()
            .map(|&c| cols[c].basis.last().expect("open cycle"))
            .collect();
        let zs = m.apply_batch(&vs);
        let zrefs: Vec<&ComplexField> = zs.iter().collect();
        let ws = a.apply_batch(&zrefs);

        let mut work: Vec<(&mut Column, ComplexField, ComplexField, bool)> = cols
            .iter_mut()
            .filter(|col| col.phase == Phase::Iterating)
            .zip(zs.into_iter().zip(ws))
            .map(|(col, (z, w))| (col, z, w, false))
            .collect();
        crate::par::for_each_mut(&mut work, |(col, z, w, closed)| {
            let z = std::mem::replace(z, ComplexField::zeros(0, 0));
            let w = std::mem::replace(w, ComplexField::zeros(0, 0));
            *closed = col.arnoldi_step(z, w, cfg);
        });

        // close finished cycles; standard GMRES needs one more M application
        let closing: Vec<&mut Column> = work
            .into_iter()
            .filter(|(_, _, _, closed)| *closed)
            .map(|(col, _, _, _)| col)
            .collect();
        let combos: Vec<ComplexField> = closing.iter().map(|col| col.combination(cfg.flexible)).collect();
        let updates = if cfg.flexible {
            combos
        } else {
            let refs: Vec<&ComplexField> = combos.iter().collect();
            m.apply_batch(&refs)
        };
        for (col, upd) in closing.into_iter().zip(updates) {
            col.x.axpy(Complex64::new(1.0, 0.0), &upd);
            col.phase = Phase::Start;
        }
    }

    let mut report = SolveReport::default();
    let mut xs = Vec::with_capacity(cols.len());
    for col in cols {
        report.residual_history.push(col.history);
        report.iterations.push(col.iters);
        report.converged.push(col.converged);
        report.breakdown.push(col.breakdown);
        xs.push(col.x);
    }
    Ok((xs, report))
}
