mod common;

use common::*;
use helmnet_core::multigrid::{coarse_solve, CoarseSolver, Level};
use helmnet_core::{
    block_fgmres, fgmres, ComplexField, FieldMap, Hierarchy, KrylovConfig, Shift, StencilOperator,
    VCycleConfig,
};

#[test]
fn operator_matches_dense_assembly() {
    for (seed, shift) in [(1, Shift::NONE), (2, Shift::SHIFTED_LAPLACIAN)] {
        let p = problem(8, 4.5, Some((2, 0.75)), seed);
        let op = StencilOperator::new(&p, shift);
        let a = dense_operator(&p, shift);
        let u = random_field(8, seed + 10);
        let got = op.apply(&u).unwrap();
        let want = to_field(&(&a * to_vec(&u)), 8, 8);
        assert!(rel_diff(&got, &want) < 1e-12);
    }
}

#[test]
fn poisson_limit_is_negative_laplacian() {
    let p = homogeneous(8, 0.0);
    let a = dense_operator(&p, Shift::NONE);
    let mut lap = CMat::zeros(64, 64);
    for k in 0..64 {
        let (i, j) = (k % 8, k / 8);
        lap[(k, k)] = c(4.0 * 64.0, 0.0);
        for (di, dj) in [(-1i32, 0i32), (1, 0), (0, -1), (0, 1)] {
            let (ni, nj) = (i as i32 + di, j as i32 + dj);
            if (0..8).contains(&ni) && (0..8).contains(&nj) {
                lap[(k, (nj * 8 + ni) as usize)] = c(-64.0, 0.0);
            }
        }
    }
    assert!((&a - &lap).norm() < 1e-12 * lap.norm());
    let op = StencilOperator::new(&p, Shift::NONE);
    let u = random_field(8, 3);
    let got = op.apply(&u).unwrap();
    assert!(rel_diff(&got, &to_field(&(&lap * to_vec(&u)), 8, 8)) < 1e-12);
}

#[test]
fn dense_operator_is_complex_symmetric_without_attenuation() {
    for n in [8, 16] {
        let p = problem(n, 4.0, None, 7);
        for shift in [Shift::NONE, Shift::SHIFTED_LAPLACIAN] {
            let a = dense_operator(&p, shift);
            assert!((&a - a.transpose()).norm() <= 1e-12 * a.norm());
        }
    }
}

#[test]
fn residual_of_dense_solution_vanishes() {
    let p = problem(8, 4.5, Some((2, 0.75)), 4);
    let op = StencilOperator::new(&p, Shift::NONE);
    let g = random_field(8, 5);
    let u = to_field(&solve(&dense_operator(&p, Shift::NONE), &to_vec(&g)), 8, 8);
    assert!(op.residual(&u, &g).unwrap().norm() < 1e-10 * g.norm());
}

#[test]
fn jacobi_matches_dense_iteration() {
    let p = problem(8, 4.5, Some((2, 0.5)), 6);
    let shift = Shift::SHIFTED_LAPLACIAN;
    let op = StencilOperator::new(&p, shift);
    let a = dense_operator(&p, shift);
    let v0 = random_field(8, 8);
    let f = random_field(8, 9);
    let (mut v, fv) = (to_vec(&v0), to_vec(&f));
    for _ in 0..2 {
        let r = &fv - &a * &v;
        let upd = CVec::from_fn(64, |k, _| r[k] / a[(k, k)] * 0.8);
        v += upd;
    }
    let got = op.jacobi_relax(&v0, &f, 0.8, 2).unwrap();
    assert!(rel_diff(&got, &to_field(&v, 8, 8)) < 1e-12);
}

/// Exact solve on the deepest level through a dense LU factorization.
struct DenseCoarse;

impl CoarseSolver for DenseCoarse {
    fn solve(&self, level: &Level, f: &ComplexField) -> ComplexField {
        let a = dense_operator(&level.problem, level.op.shift());
        let (nx, ny) = f.shape();
        to_field(&solve(&a, &to_vec(f)), nx, ny)
    }
}

#[test]
fn two_grid_cycle_matches_dense_oracle() {
    let n = 16;
    let p = problem(n, 6.0, Some((3, 0.75)), 11);
    let cfg = VCycleConfig {
        levels: 2,
        ..Default::default()
    };
    let hier = Hierarchy::new(&p, cfg).unwrap();
    let shift = Shift::SHIFTED_LAPLACIAN;
    let a = dense_operator(&p, shift);
    let ac = dense_operator(&hier.levels()[1].problem, shift);
    let r = dense_restriction(n, n);
    let pr = dense_prolongation(n, n);
    let jacobi = |v: &CVec, f: &CVec| -> CVec {
        let res = f - &a * v;
        v + CVec::from_fn(v.len(), |k, _| res[k] / a[(k, k)] * 0.8)
    };
    for seed in 0..3 {
        let v0 = random_field(n, 20 + seed);
        let f = random_field(n, 30 + seed);
        let fv = to_vec(&f);
        let v1 = jacobi(&to_vec(&v0), &fv);
        let ec = solve(&ac, &(&r * (&fv - &a * &v1)));
        let v2 = jacobi(&(v1 + &pr * ec), &fv);
        let got = hier.v_cycle_with(&v0, &f, &DenseCoarse).unwrap();
        assert!(rel_diff(&got, &to_field(&v2, n, n)) < 1e-10);
    }
}

#[test]
fn exact_solution_is_a_fixed_point() {
    let n = 16;
    let p = problem(n, 6.0, Some((3, 0.75)), 12);
    let hier = Hierarchy::new(&p, VCycleConfig { levels: 2, ..Default::default() }).unwrap();
    let f = random_field(n, 13);
    let m = dense_operator(&p, Shift::SHIFTED_LAPLACIAN);
    let v = to_field(&solve(&m, &to_vec(&f)), n, n);
    let out = hier.v_cycle(&v, &f).unwrap();
    assert!(rel_diff(&out, &v) < 1e-8);
}

#[test]
fn cycle_with_exact_coarse_solve_is_linear() {
    let n = 32;
    let p = problem(n, 12.0, Some((4, 0.75)), 14);
    let hier = Hierarchy::new(&p, VCycleConfig::default()).unwrap();
    let (v1, f1, v2, f2) = (
        random_field(n, 1),
        random_field(n, 2),
        random_field(n, 3),
        random_field(n, 4),
    );
    let (a, b) = (c(0.7, -1.3), c(-0.4, 2.1));
    let comb = |x: &ComplexField, y: &ComplexField| {
        let mut z = x.clone();
        z.scale(a);
        z.axpy(b, y);
        z
    };
    let lhs = hier.v_cycle_with(&comb(&v1, &v2), &comb(&f1, &f2), &DenseCoarse).unwrap();
    let rhs = comb(
        &hier.v_cycle_with(&v1, &f1, &DenseCoarse).unwrap(),
        &hier.v_cycle_with(&v2, &f2, &DenseCoarse).unwrap(),
    );
    assert!(rel_diff(&lhs, &rhs) < 1e-8);
}

#[test]
fn default_cycle_is_homogeneous() {
    let n = 32;
    let p = problem(n, 12.0, Some((4, 0.75)), 15);
    let hier = Hierarchy::new(&p, VCycleConfig::default()).unwrap();
    let (v, f) = (random_field(n, 5), random_field(n, 6));
    let a = c(-2.5, 0.75);
    let mut av = v.clone();
    av.scale(a);
    let mut af = f.clone();
    af.scale(a);
    let mut want = hier.v_cycle(&v, &f).unwrap();
    want.scale(a);
    assert!(rel_diff(&hier.v_cycle(&av, &af).unwrap(), &want) < 1e-8);
}

#[test]
fn poisson_cycle_first_reduction() {
    let n = 64;
    let p = homogeneous(n, 0.0);
    let hier = Hierarchy::new(&p, VCycleConfig::default()).unwrap();
    let f = random_field(n, 40);
    let v = hier.v_cycle(&ComplexField::zeros(n, n), &f).unwrap();
    let r = hier.fine_operator().residual(&v, &f).unwrap();
    assert!(f.norm() / r.norm() >= 5.0, "reduction {}", f.norm() / r.norm());
}

#[test]
fn coarse_solve_poisson_drop_and_minimum_residual() {
    let p = homogeneous(16, 0.0);
    let op = StencilOperator::new(&p, Shift::SHIFTED_LAPLACIAN);
    for seed in 0..5 {
        let f = random_field(16, 50 + seed);
        let x = coarse_solve(&op, &f, 10);
        let r = op.residual(&x, &f).unwrap().norm();
        assert!(r * 10.0 <= f.norm(), "drop {}", f.norm() / r);
    }
    let p = problem(16, 9.0, Some((3, 0.75)), 3);
    let op = StencilOperator::new(&p, Shift::SHIFTED_LAPLACIAN);
    for iters in [1, 3, 10] {
        let f = random_field(16, 60 + iters as u64);
        let x = coarse_solve(&op, &f, iters);
        assert!(op.residual(&x, &f).unwrap().norm() <= f.norm() * (1.0 + 1e-12));
    }
}

#[test]
fn exact_inverse_preconditioner_converges_in_one_iteration() {
    let n = 16;
    let p = problem(n, 8.0, Some((3, 0.75)), 16);
    let op = StencilOperator::new(&p, Shift::NONE);
    let lu = dense_operator(&p, Shift::NONE).lu();
    let inv = |r: &ComplexField| to_field(&lu.solve(&to_vec(r)).unwrap(), n, n);
    let b = random_field(n, 17);
    let cfg = KrylovConfig::default();
    let (x, rep) = fgmres(&op, &inv, &b, &ComplexField::zeros(n, n), &cfg).unwrap();
    assert!(rep.converged[0]);
    assert_eq!(rep.iterations[0], 1);
    assert!(op.residual(&x, &b).unwrap().norm() < 1e-10 * b.norm());
}

fn helmholtz_setup(n: usize, seed: u64) -> (StencilOperator, Hierarchy) {
    let p = problem(n, 0.6 * n as f64, Some((n / 8, 0.75)), seed);
    (
        StencilOperator::new(&p, Shift::NONE),
        Hierarchy::new(&p, VCycleConfig::default()).unwrap(),
    )
}

#[test]
fn block_columns_match_single_runs() {
    let n = 32;
    let (op, hier) = helmholtz_setup(n, 18);
    let cfg = KrylovConfig {
        max_iters: 60,
        ..Default::default()
    };
    let distinct: Vec<ComplexField> = (0..10).map(|s| random_field(n, 100 + s)).collect();
    let same = vec![distinct[0].clone(); 10];
    for bs in [same, distinct] {
        let (xs, rep) = block_fgmres(&op, &hier, &bs, &cfg).unwrap();
        for (k, b) in bs.iter().enumerate() {
            let (x, single) = fgmres(&op, &hier, b, &ComplexField::zeros(n, n), &cfg).unwrap();
            let (hb, hs) = (&rep.residual_history[k], &single.residual_history[0]);
            assert_eq!(hb.len(), hs.len());
            for (p, q) in hb.iter().zip(hs) {
                assert!((p - q).abs() <= 1e-10 * q.abs().max(hs[0] * 1e-16));
            }
            assert_eq!(rep.iterations[k], single.iterations[0]);
            assert!(rel_diff(&xs[k], &x) < 1e-10);
        }
    }
}

#[test]
fn flexible_and_standard_agree_for_stationary_preconditioner() {
    let n = 32;
    let (op, _) = helmholtz_setup(n, 19);
    let p = problem(n, 0.6 * n as f64, Some((4, 0.75)), 19);
    let m = StencilOperator::new(&p, Shift::SHIFTED_LAPLACIAN);
    let precond = |r: &ComplexField| m.jacobi_relax(&ComplexField::zeros(n, n), r, 0.8, 3).unwrap();
    let b = random_field(n, 21);
    let x0 = random_field(n, 22);
    for max_iters in [7, 10, 25] {
        let mk = |flexible| KrylovConfig {
            max_iters,
            rel_tol: 1e-12,
            flexible,
            ..Default::default()
        };
        let (xf, rf) = fgmres(&op, &precond, &b, &x0, &mk(true)).unwrap();
        let (xs, rs) = fgmres(&op, &precond, &b, &x0, &mk(false)).unwrap();
        assert!(rel_diff(&xf, &xs) < 1e-8);
        for (p, q) in rf.residual_history[0].iter().zip(&rs.residual_history[0]) {
            assert!((p - q).abs() <= 1e-8 * q);
        }
    }
}

#[test]
fn converged_solutions_meet_tolerance() {
    let n = 32;
    let (op, hier) = helmholtz_setup(n, 23);
    let bs: Vec<ComplexField> = (0..4).map(|s| random_field(n, 200 + s)).collect();
    let cfg = KrylovConfig::default();
    let (xs, rep) = block_fgmres(&op, &hier, &bs, &cfg).unwrap();
    assert!(rep.all_converged());
    for (x, b) in xs.iter().zip(&bs) {
        let rel = op.residual(x, b).unwrap().norm() / b.norm();
        assert!(rel <= cfg.rel_tol * (1.0 + 1e-6));
    }
}

#[test]
fn residuals_do_not_increase_within_a_cycle() {
    let n = 32;
    let (op, hier) = helmholtz_setup(n, 24);
    let bs: Vec<ComplexField> = (0..3).map(|s| random_field(n, 300 + s)).collect();
    let cfg = KrylovConfig {
        max_iters: 45,
        ..Default::default()
    };
    let (_, rep) = block_fgmres(&op, &hier, &bs, &cfg).unwrap();
    for hist in &rep.residual_history {
        for (t, w) in hist.windows(2).enumerate() {
            if (t + 1) % cfg.restart != 0 {
                assert!(w[1] <= w[0] * (1.0 + 1e-10), "iter {} {} > {}", t + 1, w[1], w[0]);
            }
        }
    }
}

#[test]
fn preconditioner_map_is_one_cycle_from_zero() {
    let n = 32;
    let (_, hier) = helmholtz_setup(n, 25);
    let r = random_field(n, 26);
    let direct = hier.v_cycle(&ComplexField::zeros(n, n), &r).unwrap();
    assert_eq!(hier.apply(&r).as_slice(), direct.as_slice());
}
