//! Fixed inter-grid transfers, the stride-2 convolutions with
//! `(1/16)[1 2 1; 2 4 2; 1 2 1]` (full weighting) and its transposed
//! counterpart scaled by 4 (bilinear prolongation), with zero padding of
//! width one.
//!
//! Coarse node `(I, J)` sits on fine node `(2I, 2J)`. The pair satisfies
//! `<restrict(x), y> = (1/4) <x, prolong(y)>`.

use crate::error::{Error, Result};
use crate::field::{Field, GridValue, RealField};

/// 1D factor of both kernels, indexed by offset `-1, 0, 1`.
const TAPS: [f64; 3] = [0.5, 1.0, 0.5];

fn check_even<T>(f: &Field<T>) -> Result<()>
where
    T: GridValue,
{
    if f.nx() % 2 != 0 || f.ny() % 2 != 0 {
        return Err(Error::ShapeMismatch {
            expected: (f.nx() + f.nx() % 2, f.ny() + f.ny() % 2),
            found: f.shape(),
        });
    }
    Ok(())
}

/// Full-weighting restriction to half the nodes per axis.
pub fn restrict_field<T: GridValue>(fine: &Field<T>) -> Result<Field<T>> {
    check_even(fine)?;
    let (nx, ny) = fine.shape();
    let (cx, cy) = (nx / 2, ny / 2);
    let src = fine.as_slice();
    let mut coarse = Field::zeros(cx, cy);
    crate::par::for_each_row(coarse.as_mut_slice(), cx, |cj, row| {
        for (ci, out) in row.iter_mut().enumerate() {
            let mut acc = T::default();
            for (b, &wy) in TAPS.iter().enumerate() {
                let Some(j) = (2 * cj + b).checked_sub(1).filter(|&j| j < ny) else {
                    continue;
                };
                for (a, &wx) in TAPS.iter().enumerate() {
                    let Some(i) = (2 * ci + a).checked_sub(1).filter(|&i| i < nx) else {
                        continue;
                    };
                    acc = acc + src[j * nx + i] * (wx * wy * 0.25);
                }
            }
            *out = acc;
        }
    });
    Ok(coarse)
}

/// Bilinear prolongation to twice the nodes per axis.
pub fn prolong_field<T: GridValue>(coarse: &Field<T>) -> Field<T> {
    let (cx, cy) = coarse.shape();
    let (nx, ny) = (2 * cx, 2 * cy);
    let src = coarse.as_slice();
    // (coarse index, weight) pairs feeding fine index k
    let parents = |k: usize, n: usize| -> [(usize, f64); 2] {
        if k % 2 == 0 {
            [(k / 2, 1.0), (usize::MAX, 0.0)]
        } else {
            let hi = (k + 1) / 2;
            [(k / 2, 0.5), (if hi < n { hi } else { usize::MAX }, 0.5)]
        }
    };
    let mut fine = Field::zeros(nx, ny);
    crate::par::for_each_row(fine.as_mut_slice(), nx, |j, row| {
        let py = parents(j, cy);
        for (i, out) in row.iter_mut().enumerate() {
            let px = parents(i, cx);
            let mut acc = T::default();
            for &(cj, wy) in &py {
                if cj == usize::MAX {
                    continue;
                }
                for &(ci, wx) in &px {
                    if ci == usize::MAX {
                        continue;
                    }
                    acc = acc + src[cj * cx + ci] * (wx * wy);
                }
            }
            *out = acc;
        }
    });
    fine
}

/// Full weighting of a coefficient field with the weights renormalized over
/// the in-grid taps, so constant coefficients stay constant up to the
/// boundary.
pub fn restrict_coefficient(fine: &RealField) -> Result<RealField> {
    check_even(fine)?;
    let (nx, ny) = fine.shape();
    let (cx, cy) = (nx / 2, ny / 2);
    Ok(RealField::from_fn(cx, cy, |ci, cj| {
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (b, &wy) in TAPS.iter().enumerate() {
            let Some(j) = (2 * cj + b).checked_sub(1).filter(|&j| j < ny) else {
                continue;
            };
            for (a, &wx) in TAPS.iter().enumerate() {
                let Some(i) = (2 * ci + a).checked_sub(1).filter(|&i| i < nx) else {
                    continue;
                };
                acc += fine.get(i, j) * wx * wy;
                wsum += wx * wy;
            }
        }
        acc / wsum
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ComplexField;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn restriction_preserves_interior_constants() {
        let f = RealField::filled(16, 16, 3.0);
        let c = restrict_field(&f).unwrap();
        for j in 1..8 {
            for i in 1..8 {
                assert!((c.get(i, j) - 3.0).abs() < 1e-15);
            }
        }
        // node 0 loses its left/bottom neighbours to the zero padding
        assert!((c.get(0, 4) - 3.0 * 0.75).abs() < 1e-15);
    }

    #[test]
    fn restriction_footprint() {
        // fine impulse at (6, 6) = coarse node (3, 3)
        let mut f = RealField::zeros(16, 16);
        f.set(6, 6, 1.0);
        let c = restrict_field(&f).unwrap();
        assert_eq!(c.get(3, 3), 4.0 / 16.0);
        let mut g = RealField::zeros(16, 16);
        g.set(7, 6, 1.0);
        let c = restrict_field(&g).unwrap();
        assert_eq!(c.get(3, 3), 2.0 / 16.0);
        assert_eq!(c.get(4, 3), 2.0 / 16.0);
        let mut d = RealField::zeros(16, 16);
        d.set(7, 7, 1.0);
        let c = restrict_field(&d).unwrap();
        assert_eq!(c.get(3, 3), 1.0 / 16.0);
        assert_eq!(c.get(4, 4), 1.0 / 16.0);
        assert_eq!(c.as_slice().iter().sum::<f64>(), 4.0 / 16.0);
    }

    #[test]
    fn prolongation_hat_function() {
        let mut c = RealField::zeros(8, 8);
        c.set(3, 4, 1.0);
        let f = prolong_field(&c);
        assert_eq!(f.shape(), (16, 16));
        assert_eq!(f.get(6, 8), 1.0);
        assert_eq!(f.get(5, 8), 0.5);
        assert_eq!(f.get(7, 8), 0.5);
        assert_eq!(f.get(6, 7), 0.5);
        assert_eq!(f.get(6, 9), 0.5);
        assert_eq!(f.get(7, 9), 0.25);
        assert_eq!(f.as_slice().iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn prolongation_constants_and_zero() {
        let f = prolong_field(&RealField::filled(8, 8, 2.0));
        for j in 0..15 {
            for i in 0..15 {
                assert_eq!(f.get(i, j), 2.0);
            }
        }
        let z = prolong_field(&ComplexField::zeros(4, 4));
        assert!(z.as_slice().iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(restrict_field(&RealField::zeros(7, 8)).is_err());
        assert!(restrict_coefficient(&RealField::zeros(8, 9)).is_err());
    }

    #[test]
    fn adjoint_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let x = ComplexField::random_normal(16, 12, &mut rng);
            let y = ComplexField::random_normal(8, 6, &mut rng);
            let lhs = restrict_field(&x).unwrap().dot(&y);
            let rhs = x.dot(&prolong_field(&y)) * 0.25;
            assert!((lhs - rhs).norm() < 1e-12 * (1.0 + lhs.norm()));
        }
    }
}
