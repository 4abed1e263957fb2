mod common;

use common::*;
use helmnet_core::transfer::{prolong_field, restrict_field};
use helmnet_core::{convergence_factor, Complex64, ComplexField, Shift, StencilOperator};
use proptest::prelude::*;

fn complex() -> impl Strategy<Value = Complex64> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b)| Complex64::new(a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operator_is_linear(
        seed in any::<u64>(),
        n in prop::sample::select(vec![8usize, 12, 16, 24]),
        a in complex(),
        b in complex(),
        beta in prop::sample::select(vec![0.0, 0.5]),
    ) {
        let p = problem(n, 0.5 * n as f64, Some((2, 0.75)), seed);
        let op = StencilOperator::new(&p, Shift::new(1.0, beta).unwrap());
        let u = random_field(n, seed ^ 1);
        let v = random_field(n, seed ^ 2);
        let mut w = u.clone();
        w.scale(a);
        w.axpy(b, &v);
        let (au, av) = (op.apply(&u).unwrap(), op.apply(&v).unwrap());
        let mut expect = au.clone();
        expect.scale(a);
        expect.axpy(b, &av);
        let err = op.apply(&w).unwrap().sub(&expect).unwrap().norm();
        prop_assert!(err < 1e-10 * (au.norm() + av.norm()));
    }

    #[test]
    fn transfers_are_adjoint(
        seed in any::<u64>(),
        nx in prop::sample::select(vec![8usize, 10, 16, 22]),
        ny in prop::sample::select(vec![8usize, 12, 14]),
    ) {
        let mut r = rng(seed);
        let x = ComplexField::random_normal(nx, ny, &mut r);
        let y = ComplexField::random_normal(nx / 2, ny / 2, &mut r);
        let lhs = restrict_field(&x).unwrap().dot(&y);
        let rhs = x.dot(&prolong_field(&y)) * 0.25;
        prop_assert!((lhs - rhs).norm() < 1e-12 * (1.0 + rhs.norm()) * (nx * ny) as f64);
    }

    #[test]
    fn restriction_keeps_interior_constants(c0 in -5.0..5.0f64, n in prop::sample::select(vec![8usize, 16, 20])) {
        let f = ComplexField::filled(n, n, Complex64::new(c0, -c0));
        let r = restrict_field(&f).unwrap();
        for j in 1..n / 2 {
            for i in 1..n / 2 {
                prop_assert!((r.get(i, j) - Complex64::new(c0, -c0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn convergence_factor_of_geometric_history(q in 0.05..0.95f64) {
        let hist: Vec<f64> = (0..2000).map(|k| q.powi(k)).collect();
        let cf = convergence_factor(&hist, 1e6).unwrap();
        let t = cf.iterations;
        prop_assert!(q.powi(t as i32) <= 1e-6 * (1.0 + 1e-12));
        prop_assert!((cf.rho.unwrap() - q).abs() < 1e-9);
    }
}
