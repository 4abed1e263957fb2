use std::ops::{Add, Mul};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_shape, Result};

/// Scalar types that can live on a grid and be moved by the transfer
/// operators.
pub trait GridValue:
    Copy + Default + Send + Sync + Add<Output = Self> + Mul<f64, Output = Self>
{
}

impl GridValue for f64 {}
impl GridValue for Complex64 {}

/// Nodal grid function of `nx * ny` values, row-major (`j * nx + i`).
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    nx: usize,
    ny: usize,
    data: Vec<T>,
}

/// Complex pressure, source, residual or error on a grid.
pub type ComplexField = Field<Complex64>;
/// Real coefficient field (squared slowness, attenuation).
pub type RealField = Field<f64>;

impl<T: GridValue> Field<T> {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self::filled(nx, ny, T::default())
    }

    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        Self {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<T>) -> Result<Self> {
        check_shape((nx * ny, 1), (data.len(), 1))?;
        Ok(Self { nx, ny, data })
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                data.push(f(i, j));
            }
        }
        Self { nx, ny, data }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[j * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[j * self.nx + i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: GridValue>(&self, f: impl Fn(T) -> U) -> Field<U> {
        Field {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) -> Result<()> {
        check_shape(self.shape(), other.shape())?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b * alpha;
        }
        Ok(())
    }
}

impl RealField {
    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl ComplexField {
    /// Independent standard complex normal entries (`E|z|^2 = 1`).
    pub fn random_normal<R: Rng + ?Sized>(nx: usize, ny: usize, rng: &mut R) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let data = (0..nx * ny)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re * s, im * s)
            })
            .collect();
        Self { nx, ny, data }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Hermitian inner product `sum conj(self_k) * other_k`.
    pub fn dot(&self, other: &Self) -> Complex64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `self += alpha * other` for complex `alpha`.
    pub fn axpy(&mut self, alpha: Complex64, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: Complex64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_shape(self.shape(), other.shape())?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            nx: self.nx,
            ny: self.ny,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_shape(self.shape(), other.shape())?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self {
            nx: self.nx,
            ny: self.ny,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn re(&self) -> RealField {
        self.map(|z| z.re)
    }

    pub fn im(&self) -> RealField {
        self.map(|z| z.im)
    }

    pub fn from_parts(re: &RealField, im: &RealField) -> Result<Self> {
        check_shape(re.shape(), im.shape())?;
        let data = re
            .data
            .iter()
            .zip(&im.data)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        Ok(Self {
            nx: re.nx,
            ny: re.ny,
            data,
        })
    }
}
