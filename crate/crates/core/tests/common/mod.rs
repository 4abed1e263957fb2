//! Dense reference implementations used as test oracles. Nothing here calls
//! the stencil code: matrices are assembled entry by entry from the
//! discretization formula.

#![allow(dead_code)]

use helmnet_core::{
    Attenuation, Complex64, ComplexField, HelmholtzProblem, ProblemGrid, Shift, SlownessSquared,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Problem with a smooth random-ish slowness and an optional absorbing layer.
pub fn problem(n: usize, omega: f64, layer: Option<(usize, f64)>, seed: u64) -> HelmholtzProblem {
    let grid = ProblemGrid::new(n, n).unwrap();
    let mut r = rng(seed);
    let (a, b) = (r.random_range(1.0..4.0), r.random_range(1.0..4.0));
    let kappa2 = SlownessSquared::new(
        helmnet_core::RealField::from_fn(n, n, |i, j| {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            0.625 + 0.375 * (a * x).sin() * (b * y).cos()
        }),
        (0.25, 1.0),
    )
    .unwrap();
    let gamma = match layer {
        Some((w, g)) => Attenuation::absorbing_layer(&grid, w, g).unwrap(),
        None => Attenuation::zeros(n, n),
    };
    HelmholtzProblem::new(grid, omega, kappa2, gamma).unwrap()
}

pub fn homogeneous(n: usize, omega: f64) -> HelmholtzProblem {
    HelmholtzProblem::new(
        ProblemGrid::new(n, n).unwrap(),
        omega,
        SlownessSquared::homogeneous(n, n, 1.0).unwrap(),
        Attenuation::zeros(n, n),
    )
    .unwrap()
}

/// Dense matrix of the 5-point operator with zero Dirichlet padding.
pub fn dense_operator(p: &HelmholtzProblem, shift: Shift) -> CMat {
    let (nx, ny) = p.grid().shape();
    let h = p.grid().h();
    let n = nx * ny;
    let mut a = CMat::zeros(n, n);
    let complex_shift = c(shift.alpha, -shift.beta);
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let kap = p.kappa2().values().get(i, j);
            let gam = p.gamma().values().get(i, j);
            let mass = p.omega() * p.omega() * kap * h * h * complex_shift * c(1.0, -gam);
            a[(k, k)] = (c(4.0, 0.0) - mass) / (h * h);
            let nb = -1.0 / (h * h);
            if i > 0 {
                a[(k, k - 1)] = c(nb, 0.0);
            }
            if i + 1 < nx {
                a[(k, k + 1)] = c(nb, 0.0);
            }
            if j > 0 {
                a[(k, k - nx)] = c(nb, 0.0);
            }
            if j + 1 < ny {
                a[(k, k + nx)] = c(nb, 0.0);
            }
        }
    }
    a
}

/// Full-weighting restriction as a dense matrix, coarse node I on fine 2I.
pub fn dense_restriction(nx: usize, ny: usize) -> CMat {
    let (cx, cy) = (nx / 2, ny / 2);
    let mut r = CMat::zeros(cx * cy, nx * ny);
    let w = [1.0, 2.0, 1.0];
    for jc in 0..cy {
        for ic in 0..cx {
            for (dj, wj) in w.iter().enumerate() {
                for (di, wi) in w.iter().enumerate() {
                    let fi = 2 * ic as isize + di as isize - 1;
                    let fj = 2 * jc as isize + dj as isize - 1;
                    if fi >= 0 && fj >= 0 && (fi as usize) < nx && (fj as usize) < ny {
                        r[(jc * cx + ic, fj as usize * nx + fi as usize)] = c(wi * wj / 16.0, 0.0);
                    }
                }
            }
        }
    }
    r
}

/// Bilinear prolongation, the scaled transpose of the restriction.
pub fn dense_prolongation(nx: usize, ny: usize) -> CMat {
    dense_restriction(nx, ny).transpose() * c(4.0, 0.0)
}

pub fn to_vec(f: &ComplexField) -> CVec {
    CVec::from_column_slice(f.as_slice())
}

pub fn to_field(v: &CVec, nx: usize, ny: usize) -> ComplexField {
    ComplexField::from_vec(nx, ny, v.iter().copied().collect()).unwrap()
}

pub fn solve(a: &CMat, b: &CVec) -> CVec {
    a.clone().lu().solve(b).expect("nonsingular")
}

pub fn random_field(n: usize, seed: u64) -> ComplexField {
    ComplexField::random_normal(n, n, &mut rng(seed))
}

pub fn rel_diff(a: &ComplexField, b: &ComplexField) -> f64 {
    a.sub(b).unwrap().norm() / b.norm().max(f64::MIN_POSITIVE)
}
