use crate::error::{Error, Result};

/// Smallest node count accepted per axis for a user-facing grid.
pub const MIN_NODES: usize = 8;

/// Largest admissible `omega * kappa * h` (ten nodes per wavelength).
pub const DISCRETIZATION_BOUND: f64 = 0.628;

/// Uniform nodal grid of `nx * ny` nodes with mesh width `h` on both axes.
///
/// Values on the grid are stored row-major: node `(i, j)` with `i` along x
/// lives at `j * nx + i`. Nodes outside the grid are treated as zero
/// (Dirichlet padding of width one).
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemGrid {
    nx: usize,
    ny: usize,
    h: f64,
    origin: (f64, f64),
}

impl ProblemGrid {
    /// Grid on the unit square with `h = 1 / nx`, usable by a one-level
    /// hierarchy.
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        Self::with_levels(nx, ny, 1)
    }

    /// Like [`ProblemGrid::new`] but also requires both axes to survive
    /// `levels - 1` halvings.
    pub fn with_levels(nx: usize, ny: usize, levels: usize) -> Result<Self> {
        if nx < MIN_NODES || ny < MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_NODES} nodes per axis, got {nx}x{ny}"
            )));
        }
        if levels == 0 {
            return Err(Error::InvalidGrid("levels must be at least 1".into()));
        }
        let factor = 1usize << (levels - 1);
        if nx % factor != 0 || ny % factor != 0 {
            return Err(Error::InvalidGrid(format!(
                "{nx}x{ny} is not divisible by {factor} as required by {levels} levels"
            )));
        }
        Ok(Self {
            nx,
            ny,
            h: 1.0 / nx as f64,
            origin: (0.0, 0.0),
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// `(nx, ny)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[x0, x1] x [y0, y1]` covered by the grid.
    pub fn extents(&self) -> ((f64, f64), (f64, f64)) {
        let (x0, y0) = self.origin;
        (
            (x0, x0 + self.nx as f64 * self.h),
            (y0, y0 + self.ny as f64 * self.h),
        )
    }

    /// Number of halvings both axes support.
    pub fn max_levels(&self) -> usize {
        let tz = self.nx.trailing_zeros().min(self.ny.trailing_zeros()) as usize;
        tz + 1
    }

    /// Half the nodes per axis and twice the mesh width. Coarse grids are
    /// internal to the hierarchy and skip the minimum-size check.
    pub fn coarsen(&self) -> Result<Self> {
        if self.nx % 2 != 0 || self.ny % 2 != 0 || self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "cannot halve a {}x{} grid",
                self.nx, self.ny
            )));
        }
        Ok(Self {
            nx: self.nx / 2,
            ny: self.ny / 2,
            h: self.h * 2.0,
            origin: self.origin,
        })
    }

    /// Cell distance of node `(i, j)` to the nearest boundary along x and y.
    pub fn boundary_distance(&self, i: usize, j: usize) -> (usize, usize) {
        (i.min(self.nx - 1 - i), j.min(self.ny - 1 - j))
    }
}
