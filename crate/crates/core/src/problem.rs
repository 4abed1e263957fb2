use crate::error::{check_shape, Error, Result};
use crate::field::RealField;
use crate::grid::{ProblemGrid, DISCRETIZATION_BOUND};
use crate::transfer;

/// Default normalization range of the squared slowness.
pub const DEFAULT_KAPPA2_RANGE: (f64, f64) = (0.25, 1.0);

/// Slack on range checks for values that went through f32 storage.
const RANGE_SLACK: f64 = 1e-6;

/// Squared slowness `kappa^2` on the grid, confined to a declared range.
#[derive(Clone, Debug, PartialEq)]
pub struct SlownessSquared {
    values: RealField,
    range: (f64, f64),
}

impl SlownessSquared {
    pub fn new(values: RealField, range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = range;
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "invalid slowness range [{lo}, {hi}]"
            )));
        }
        if !values.is_finite() || values.min() < lo - RANGE_SLACK || values.max() > hi + RANGE_SLACK
        {
            return Err(Error::InvalidArgument(format!(
                "slowness values [{}, {}] fall outside [{lo}, {hi}]",
                values.min(),
                values.max()
            )));
        }
        Ok(Self { values, range })
    }

    /// Constant model `kappa^2 = value` with range `[lo, hi]` containing it.
    pub fn homogeneous(nx: usize, ny: usize, value: f64) -> Result<Self> {
        let lo = DEFAULT_KAPPA2_RANGE.0.min(value);
        let hi = DEFAULT_KAPPA2_RANGE.1.max(value);
        Self::new(RealField::filled(nx, ny, value), (lo, hi))
    }

    pub fn values(&self) -> &RealField {
        &self.values
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn max_kappa(&self) -> f64 {
        self.values.max().max(0.0).sqrt()
    }
}

/// Damping fraction `gamma` per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Attenuation {
    values: RealField,
}

impl Attenuation {
    pub fn new(values: RealField) -> Result<Self> {
        if !values.is_finite() || values.min() < 0.0 {
            return Err(Error::InvalidArgument(
                "attenuation must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self {
            values: RealField::zeros(nx, ny),
        }
    }

    /// Absorbing layer: quadratic ramp `gamma_max * ((width - d) / width)^2`
    /// for nodes at cell distance `d < width` from a boundary, zero inside.
    /// Corners take the larger of the two axis contributions.
    pub fn absorbing_layer(grid: &ProblemGrid, width: usize, gamma_max: f64) -> Result<Self> {
        if !(gamma_max >= 0.0) || !gamma_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gamma_max must be nonnegative, got {gamma_max}"
            )));
        }
        if width > grid.nx().min(grid.ny()) / 2 {
            return Err(Error::InvalidArgument(format!(
                "absorbing layer of width {width} does not fit a {}x{} grid",
                grid.nx(),
                grid.ny()
            )));
        }
        let ramp = |d: usize| {
            if d < width {
                let t = (width - d) as f64 / width as f64;
                gamma_max * t * t
            } else {
                0.0
            }
        };
        let values = RealField::from_fn(grid.nx(), grid.ny(), |i, j| {
            let (dx, dy) = grid.boundary_distance(i, j);
            ramp(dx).max(ramp(dy))
        });
        Ok(Self { values })
    }

    pub fn values(&self) -> &RealField {
        &self.values
    }
}

/// Discrete heterogeneous Helmholtz problem
/// `-lap u - omega^2 kappa^2 (1 - gamma i) u = g` on a nodal grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HelmholtzProblem {
    grid: ProblemGrid,
    omega: f64,
    kappa2: SlownessSquared,
    gamma: Attenuation,
}

impl HelmholtzProblem {
    /// Validates shapes, `omega >= 0` and the ten-nodes-per-wavelength bound
    /// `omega * max(kappa) * h <= 0.628`.
    pub fn new(
        grid: ProblemGrid,
        omega: f64,
        kappa2: SlownessSquared,
        gamma: Attenuation,
    ) -> Result<Self> {
        let problem = Self::new_unchecked(grid, omega, kappa2, gamma)?;
        let kh = problem.omega * problem.kappa2.max_kappa() * problem.grid.h();
        if kh > DISCRETIZATION_BOUND + 1e-12 {
            return Err(Error::InvalidProblem(format!(
                "omega*kappa*h = {kh:.4} exceeds {DISCRETIZATION_BOUND}"
            )));
        }
        Ok(problem)
    }

    /// Shape and sign checks only. Coarse levels of a hierarchy violate the
    /// wavelength bound by construction.
    fn new_unchecked(
        grid: ProblemGrid,
        omega: f64,
        kappa2: SlownessSquared,
        gamma: Attenuation,
    ) -> Result<Self> {
        if !(omega >= 0.0) || !omega.is_finite() {
            return Err(Error::InvalidProblem(format!("omega must be >= 0, got {omega}")));
        }
        check_shape(grid.shape(), kappa2.values().shape())?;
        check_shape(grid.shape(), gamma.values().shape())?;
        Ok(Self {
            grid,
            omega,
            kappa2,
            gamma,
        })
    }

    pub fn grid(&self) -> &ProblemGrid {
        &self.grid
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn kappa2(&self) -> &SlownessSquared {
        &self.kappa2
    }

    pub fn gamma(&self) -> &Attenuation {
        &self.gamma
    }

    /// Rediscretization on the grid with twice the mesh width. `kappa^2` and
    /// `gamma` are moved by full weighting (renormalized at the boundary so
    /// constants are preserved everywhere) and clamped to their valid ranges.
    pub fn coarsen(&self) -> Result<Self> {
        let grid = self.grid.coarsen()?;
        let (lo, hi) = self.kappa2.range();
        let k2 = transfer::restrict_coefficient(self.kappa2.values())?.map(|v| v.clamp(lo, hi));
        let gamma = transfer::restrict_coefficient(self.gamma.values())?.map(|v| v.max(0.0));
        Self::new_unchecked(
            grid,
            self.omega,
            SlownessSquared::new(k2, (lo, hi))?,
            Attenuation::new(gamma)?,
        )
    }
}
