//! Rectangular domains, grid densities, and agent configurations.
//!
//! Cells are indexed row by row with `x` varying fastest: cell `(ix, iy)` has
//! index `iy * nx + ix`. Every grid integral in the crate uses the midpoint
//! rule at cell centers unless stated otherwise.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Point2, Result};

/// Tolerance on the total mass of a [`GridDensity`].
pub const MASS_TOL: f64 = 1e-12;

/// Axis-aligned rectangle `[lo, hi]` with a regular `nx x ny` grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    lo: Point2,
    hi: Point2,
    nx: usize,
    ny: usize,
}

impl Domain {
    pub fn new(lo: Point2, hi: Point2, nx: usize, ny: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidDomain("bounds must be finite"));
        }
        if !(lo.x < hi.x && lo.y < hi.y) {
            return Err(Error::InvalidDomain("lo must be below hi componentwise"));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidDomain("cell counts must be positive"));
        }
        Ok(Domain { lo, hi, nx, ny })
    }

    /// The unit square with an `n x n` grid.
    pub fn unit_square(n: usize) -> Result<Self> {
        Domain::new(Point2::ZERO, Point2::new(1.0, 1.0), n, n)
    }

    pub fn lo(&self) -> Point2 {
        self.lo
    }

    pub fn hi(&self) -> Point2 {
        self.hi
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dx(&self) -> f64 {
        (self.hi.x - self.lo.x) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.hi.y - self.lo.y) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Largest cell side; the "grid-cell width" used in tolerances.
    pub fn cell_width(&self) -> f64 {
        self.dx().max(self.dy())
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn center(&self, cell: usize) -> Point2 {
        let (ix, iy) = self.coords(cell);
        Point2::new(
            self.lo.x + (ix as f64 + 0.5) * self.dx(),
            self.lo.y + (iy as f64 + 0.5) * self.dy(),
        )
    }

    /// Lower-left and upper-right corners of a cell.
    pub fn cell_bounds(&self, cell: usize) -> (Point2, Point2) {
        let (ix, iy) = self.coords(cell);
        let a = Point2::new(
            self.lo.x + ix as f64 * self.dx(),
            self.lo.y + iy as f64 * self.dy(),
        );
        (a, Point2::new(a.x + self.dx(), a.y + self.dy()))
    }

    pub fn centers(&self) -> Vec<Point2> {
        (0..self.num_cells()).map(|c| self.center(c)).collect()
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.lo.x && p.x <= self.hi.x && p.y >= self.lo.y && p.y <= self.hi.y
    }

    /// Cell containing `p`; points on the upper boundary belong to the last cell.
    pub fn cell_of(&self, p: Point2) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        let ix = (((p.x - self.lo.x) / self.dx()) as usize).min(self.nx - 1);
        let iy = (((p.y - self.lo.y) / self.dy()) as usize).min(self.ny - 1);
        Some(self.index(ix, iy))
    }

    /// Nearest point of the rectangle.
    pub fn clamp(&self, p: Point2) -> Point2 {
        Point2::new(
            p.x.clamp(self.lo.x, self.hi.x),
            p.y.clamp(self.lo.y, self.hi.y),
        )
    }

    /// Same rectangle with a different resolution.
    pub fn with_resolution(&self, nx: usize, ny: usize) -> Result<Domain> {
        Domain::new(self.lo, self.hi, nx, ny)
    }

    pub fn same_grid(&self, other: &Domain) -> bool {
        self == other
    }
}

/// A probability measure on the cells of a [`Domain`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    domain: Domain,
    mass: Vec<f64>,
}

impl GridDensity {
    /// Wraps per-cell masses that already form a probability vector.
    pub fn new(domain: Domain, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != domain.num_cells() {
            return Err(Error::InvalidArgument("mass length must equal the cell count"));
        }
        if let Some(cell) = mass.iter().position(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::NegativeDensity { cell });
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument("masses must sum to one"));
        }
        Ok(GridDensity { domain, mass })
    }

    /// Normalizes nonnegative weights into a probability vector.
    pub fn from_weights(domain: Domain, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != domain.num_cells() {
            return Err(Error::InvalidArgument("weight length must equal the cell count"));
        }
        if let Some(cell) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::NegativeDensity { cell });
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::AllZeroDensity);
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(GridDensity { domain, mass: weights })
    }

    pub fn uniform(domain: Domain) -> Self {
        let n = domain.num_cells();
        GridDensity {
            domain,
            mass: vec![1.0 / n as f64; n],
        }
    }

    /// All mass on one cell.
    pub fn one_hot(domain: Domain, cell: usize) -> Result<Self> {
        if cell >= domain.num_cells() {
            return Err(Error::InvalidArgument("cell index out of range"));
        }
        let mut mass = vec![0.0; domain.num_cells()];
        mass[cell] = 1.0;
        Ok(GridDensity { domain, mass })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Indices of cells carrying positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.mass.len()).filter(|&c| self.mass[c] > 0.0).collect()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (c, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = c;
            }
        }
        best
    }

    /// Mass-weighted mean of cell centers.
    pub fn mean(&self) -> Point2 {
        let mut acc = Point2::ZERO;
        for (c, &m) in self.mass.iter().enumerate() {
            if m > 0.0 {
                acc += self.domain.center(c) * m;
            }
        }
        acc
    }

    /// Total-variation distance `0.5 * sum |a - b|`.
    pub fn tv_distance(&self, other: &GridDensity) -> Result<f64> {
        if !self.domain.same_grid(&other.domain) {
            return Err(Error::GridMismatch);
        }
        Ok(0.5 * self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
    }

    /// Sums disjoint 2x2 blocks into a grid of half the resolution.
    pub fn coarsen_2x2(&self) -> Result<GridDensity> {
        let (nx, ny) = (self.domain.nx, self.domain.ny);
        if nx % 2 != 0 || ny % 2 != 0 {
            return Err(Error::InvalidArgument("coarsening needs even cell counts"));
        }
        let coarse = self.domain.with_resolution(nx / 2, ny / 2)?;
        let mut mass = vec![0.0; coarse.num_cells()];
        for iy in 0..ny {
            for ix in 0..nx {
                mass[coarse.index(ix / 2, iy / 2)] += self.mass[self.domain.index(ix, iy)];
            }
        }
        Ok(GridDensity { domain: coarse, mass })
    }
}

/// Positions of `N >= 1` agents inside a domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleConfig {
    positions: Vec<Point2>,
}

impl ParticleConfig {
    pub fn new(positions: Vec<Point2>, domain: &Domain) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("a configuration needs at least one agent"));
        }
        if let Some(i) = positions.iter().position(|p| !domain.contains(*p)) {
            return Err(Error::ParticleOutsideDomain(i));
        }
        Ok(ParticleConfig { positions })
    }

    pub fn positions(&self) -> &[Point2] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<Point2> {
        self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Rasterizes a nonnegative scalar field by evaluating it at cell centers.
pub fn make_grid<F>(domain: Domain, density_fn: F) -> Result<GridDensity>
where
    F: Fn(Point2) -> f64,
{
    let mut weights = Vec::with_capacity(domain.num_cells());
    for c in 0..domain.num_cells() {
        let v = density_fn(domain.center(c));
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::NegativeDensity { cell: c });
        }
        weights.push(v);
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::AllZeroDensity);
    }
    GridDensity::from_weights(domain, weights)
}

/// Draws `n` points: a categorical draw over cells by mass, then uniform
/// jitter inside the chosen cell.
pub fn sample(density: &GridDensity, n: usize, seed: u64) -> Result<ParticleConfig> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be positive"));
    }
    let domain = density.domain;
    let mut cumulative = Vec::with_capacity(density.mass.len());
    let mut acc = 0.0;
    for &m in &density.mass {
        acc += m;
        cumulative.push(acc);
    }
    // never pick a trailing zero-mass cell because of rounding in `acc`
    let last = density.mass.iter().rposition(|&m| m > 0.0).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let cell = cumulative.partition_point(|&c| c <= u).min(last);
        let (a, b) = domain.cell_bounds(cell);
        let jx: f64 = rng.random();
        let jy: f64 = rng.random();
        positions.push(Point2::new(a.x + jx * (b.x - a.x), a.y + jy * (b.y - a.y)));
    }
    ParticleConfig::new(positions, &domain)
}

/// Normalized particle counts per cell.
pub fn histogram(config: &ParticleConfig, domain: &Domain) -> Result<GridDensity> {
    let mut counts = vec![0usize; domain.num_cells()];
    for (i, p) in config.positions.iter().enumerate() {
        let cell = domain.cell_of(*p).ok_or(Error::ParticleOutsideDomain(i))?;
        counts[cell] += 1;
    }
    let n = config.len() as f64;
    let mass = counts.into_iter().map(|k| k as f64 / n).collect();
    Ok(GridDensity {
        domain: *domain,
        mass,
    })
}
