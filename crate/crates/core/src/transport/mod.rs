//! Optimal-transport costs between discrete measures and grid densities.
//!
//! * [`ot_lp`]: exact solution by network simplex, the reference oracle.
//! * [`ot_sinkhorn`]: log-domain entropic approximation.
//! * [`semidiscrete_cost`]: sites against a grid density through capacity weights.
//! * [`w2_between_grids`]: squared Wasserstein distance between grid densities,
//!   returning full-grid Kantorovich potentials.
//! * [`cyclically_monotone`]: the permutation test behind optimal pairings.
//!
//! Dual potentials are stored with mean zero on the source side; the target
//! side absorbs the opposite shift.

mod network_simplex;
mod sinkhorn;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{Domain, GridDensity, ParticleConfig, MASS_TOL};
use crate::kernels::{mixture_density, KernelSpec};
use crate::partition::{solve_capacity_weights, CapacityOptions};
use crate::{Error, Point2, Result};

pub(crate) use network_simplex::{solve as network_simplex, DenseArcs, SparseArcs};
pub use sinkhorn::SinkhornParams;

/// Largest number of arcs (`sources x targets`) handed to the exact solver.
pub const LP_ARC_LIMIT: usize = 1 << 22;
/// Largest dense cost matrix handed to the entropic solver.
pub const SINKHORN_DENSE_LIMIT: usize = 1 << 24;
/// Largest instance accepted by the permutation (brute-force) test.
pub const BRUTE_FORCE_LIMIT: usize = 8;
/// Largest instance accepted by the cyclical-monotonicity checker.
pub const MONOTONE_LP_LIMIT: usize = 64;

/// Ground cost `f(|x - y|)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CostKind {
    /// `f(r) = r^2`
    #[default]
    Quadratic,
    /// `f(r) = r`
    Linear,
}

impl CostKind {
    #[inline]
    pub fn of_dist_sq(self, d2: f64) -> f64 {
        match self {
            CostKind::Quadratic => d2,
            CostKind::Linear => libm::sqrt(d2),
        }
    }

    #[inline]
    pub fn cost(self, a: Point2, b: Point2) -> f64 {
        self.of_dist_sq(a.dist_sq(b))
    }

    /// Gradient of `f(|x - site|)` with respect to the site.
    pub fn site_gradient(self, x: Point2, site: Point2) -> Point2 {
        match self {
            CostKind::Quadratic => (site - x) * 2.0,
            CostKind::Linear => {
                let d = site.dist(x);
                if d > 0.0 {
                    (site - x) * (1.0 / d)
                } else {
                    Point2::ZERO
                }
            }
        }
    }
}

/// Weighted point cloud summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    support: Vec<Point2>,
    weight: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Vec<Point2>, weight: Vec<f64>) -> Result<Self> {
        if support.len() != weight.len() || support.is_empty() {
            return Err(Error::InvalidArgument("support and weights must be non-empty and equal length"));
        }
        if let Some(cell) = weight.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::NegativeDensity { cell });
        }
        if (weight.iter().sum::<f64>() - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument("weights must sum to one"));
        }
        Ok(DiscreteMeasure { support, weight })
    }

    /// Equal weights `1/N`.
    pub fn uniform(support: Vec<Point2>) -> Result<Self> {
        let n = support.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty support"));
        }
        Ok(DiscreteMeasure {
            support,
            weight: vec![1.0 / n as f64; n],
        })
    }

    /// Cell centers carrying the grid masses (zero cells included).
    pub fn from_grid(g: &GridDensity) -> Self {
        DiscreteMeasure {
            support: g.domain().centers(),
            weight: g.mass().to_vec(),
        }
    }

    pub fn support(&self) -> &[Point2] {
        &self.support
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Lp,
    Sinkhorn,
    Semidiscrete,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Coupling, transport cost, and dual potentials of one solve.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportSolution {
    pub cost: f64,
    pub plan: Vec<PlanEntry>,
    pub dual_source: Vec<f64>,
    pub dual_target: Vec<f64>,
    pub method: Method,
}

impl TransportSolution {
    /// Row and column sums of the plan.
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let mut rows = vec![0.0; self.dual_source.len()];
        let mut cols = vec![0.0; self.dual_target.len()];
        for e in &self.plan {
            rows[e.source] += e.mass;
            cols[e.target] += e.mass;
        }
        (rows, cols)
    }

    /// L1 distance between the plan marginals and the given measures.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let (rows, cols) = self.marginals();
        rows.iter().zip(a).map(|(x, y)| (x - y).abs()).sum::<f64>()
            + cols.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    /// `sum a_i u_i + sum b_j v_j`.
    pub fn dual_value(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(&self.dual_source).map(|(x, u)| x * u).sum::<f64>()
            + b.iter().zip(&self.dual_target).map(|(x, v)| x * v).sum::<f64>()
    }
}

fn normalize_duals(u: &mut [f64], v: &mut [f64]) {
    if u.is_empty() {
        return;
    }
    let shift = u.iter().sum::<f64>() / u.len() as f64;
    u.iter_mut().for_each(|x| *x -= shift);
    v.iter_mut().for_each(|x| *x += shift);
}

fn positive_indices(w: &[f64]) -> Vec<usize> {
    (0..w.len()).filter(|&i| w[i] > 0.0).collect()
}

fn cost_matrix(xs: &[Point2], ys: &[Point2], f: CostKind) -> Vec<f64> {
    let mut c = Vec::with_capacity(xs.len() * ys.len());
    for x in xs {
        for y in ys {
            c.push(f.cost(*x, *y));
        }
    }
    c
}

/// Solves the exact transport problem between two weighted point sets.
///
/// `xs`/`ys` are the full point lists, `a`/`b` their weights; zero-weight
/// points get potentials by c-transform so that dual feasibility holds on
/// every pair.
fn lp_points(xs: &[Point2], a: &[f64], ys: &[Point2], b: &[f64], f: CostKind) -> Result<TransportSolution> {
    let si = positive_indices(a);
    let tj = positive_indices(b);
    let arcs = si.len() * tj.len();
    if arcs > LP_ARC_LIMIT {
        return Err(Error::TooLarge {
            size: arcs,
            limit: LP_ARC_LIMIT,
        });
    }
    let sx: Vec<Point2> = si.iter().map(|&i| xs[i]).collect();
    let ty: Vec<Point2> = tj.iter().map(|&j| ys[j]).collect();
    let sa: Vec<f64> = si.iter().map(|&i| a[i]).collect();
    let tb: Vec<f64> = tj.iter().map(|&j| b[j]).collect();
    let cost = cost_matrix(&sx, &ty, f);
    let out = network_simplex(&sa, &tb, &DenseArcs { m: tj.len(), cost: &cost });

    let mut v = vec![0.0; ys.len()];
    for (k, &j) in tj.iter().enumerate() {
        v[j] = out.v[k];
    }
    // c-transform of the target potential gives the source potential everywhere
    let mut u: Vec<f64> = xs
        .iter()
        .map(|x| {
            tj.iter()
                .map(|&j| f.cost(*x, ys[j]) - v[j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    for (k, &i) in si.iter().enumerate() {
        // on the source support the LP dual already attains the minimum
        u[i] = u[i].min(out.u[k]);
    }
    for j in 0..ys.len() {
        if b[j] <= 0.0 {
            v[j] = si
                .iter()
                .map(|&i| f.cost(xs[i], ys[j]) - u[i])
                .fold(f64::INFINITY, f64::min);
        }
    }
    normalize_duals(&mut u, &mut v);
    let plan = out
        .flows
        .iter()
        .map(|&(i, j, _, mass)| PlanEntry {
            source: si[i],
            target: tj[j],
            mass,
        })
        .collect();
    Ok(TransportSolution {
        cost: out.cost,
        plan,
        dual_source: u,
        dual_target: v,
        method: Method::Lp,
    })
}

/// Exact optimal transport with ground cost `f(|x - y|)`.
pub fn ot_lp(mu: &DiscreteMeasure, nu: &DiscreteMeasure, f_kind: CostKind) -> Result<TransportSolution> {
    lp_points(&mu.support, &mu.weight, &nu.support, &nu.weight, f_kind)
}

fn sinkhorn_solution(
    a: &[f64],
    b: &[f64],
    outcome: sinkhorn::SinkhornOutcome,
    eps: f64,
    cost_of: impl Fn(usize, usize) -> f64,
    tol: f64,
) -> Result<TransportSolution> {
    let (n, m) = (a.len(), b.len());
    let mut plan = Vec::new();
    let mut cost = 0.0;
    for i in 0..n {
        if a[i] <= 0.0 {
            continue;
        }
        for j in 0..m {
            if b[j] <= 0.0 {
                continue;
            }
            let c = cost_of(i, j);
            let mass = a[i] * b[j] * libm::exp((outcome.f[i] + outcome.g[j] - c) / eps);
            if mass > 1e-15 {
                cost += mass * c;
                plan.push(PlanEntry {
                    source: i,
                    target: j,
                    mass,
                });
            }
        }
    }
    let mut u = outcome.f;
    let mut v = outcome.g;
    normalize_duals(&mut u, &mut v);
    let solution = TransportSolution {
        cost,
        plan,
        dual_source: u,
        dual_target: v,
        method: Method::Sinkhorn,
    };
    let marginal_error = solution.marginal_error(a, b);
    if !outcome.converged || marginal_error > tol.max(1e-12) * 10.0 {
        return Err(Error::NotConverged {
            marginal_error: marginal_error.max(outcome.marginal_error),
            iterate: Box::new(solution),
        });
    }
    Ok(solution)
}

/// Entropic optimal transport; the reported cost excludes the entropy term.
pub fn ot_sinkhorn(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    f_kind: CostKind,
    params: &SinkhornParams,
) -> Result<TransportSolution> {
    if !(params.epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive"));
    }
    let (n, m) = (mu.len(), nu.len());
    if n * m > SINKHORN_DENSE_LIMIT {
        return Err(Error::TooLarge {
            size: n * m,
            limit: SINKHORN_DENSE_LIMIT,
        });
    }
    let cost = cost_matrix(&mu.support, &nu.support, f_kind);
    let outcome = sinkhorn::solve(&mu.weight, &nu.weight, &sinkhorn::DenseCost { n, m, cost: &cost }, params);
    sinkhorn_solution(&mu.weight, &nu.weight, outcome, params.epsilon, |i, j| cost[i * m + j], params.tol)
}

/// Solver selection for grid-to-grid transport.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridMethod {
    /// Exact; fails with `TooLarge` above [`LP_ARC_LIMIT`] support pairs.
    Lp,
    /// Separable log-domain Sinkhorn on the full grid.
    Sinkhorn(SinkhornParams),
    /// Exact when the supports fit the arc limit, entropic otherwise.
    Auto,
}

/// Squared Wasserstein distance between two densities on the same grid.
///
/// Plan indices and potentials refer to grid cells. `dual_source` is the
/// Kantorovich potential of `a` toward `b`, defined on every cell.
pub fn w2_between_grids(a: &GridDensity, b: &GridDensity, method: GridMethod) -> Result<TransportSolution> {
    if !a.domain().same_grid(b.domain()) {
        return Err(Error::GridMismatch);
    }
    let support_pairs = a.support().len() * b.support().len();
    let use_lp = match method {
        GridMethod::Lp => true,
        GridMethod::Sinkhorn(_) => false,
        GridMethod::Auto => support_pairs <= LP_ARC_LIMIT,
    };
    let centers = a.domain().centers();
    if use_lp {
        return lp_points(&centers, a.mass(), &centers, b.mass(), CostKind::Quadratic);
    }
    let params = match method {
        GridMethod::Sinkhorn(p) => p,
        _ => SinkhornParams {
            epsilon: {
                let w = a.domain().cell_width();
                0.25 * w * w
            },
            ..SinkhornParams::default()
        },
    };
    let d = a.domain();
    let xs: Vec<f64> = (0..d.nx()).map(|ix| d.center(d.index(ix, 0)).x).collect();
    let ys: Vec<f64> = (0..d.ny()).map(|iy| d.center(d.index(0, iy)).y).collect();
    let cost = sinkhorn::SeparableGridCost { xs: &xs, ys: &ys };
    let outcome = sinkhorn::solve(a.mass(), b.mass(), &cost, &params);
    sinkhorn_solution(
        a.mass(),
        b.mass(),
        outcome,
        params.epsilon,
        |i, j| centers[i].dist_sq(centers[j]),
        params.tol,
    )
}

/// Semi-discrete transport cost from sites carrying weights `w` to `mu_star`,
/// with the grid Kantorovich potential `phi(x) = min_i f(|x - x_i|) - omega_i`.
pub fn semidiscrete_cost(
    sites: &ParticleConfig,
    w: &[f64],
    mu_star: &GridDensity,
    f_kind: CostKind,
) -> Result<(f64, Vec<f64>)> {
    let solved = solve_capacity_weights(sites, mu_star, f_kind, w, &CapacityOptions::for_sites(sites.len()))?;
    let partition = &solved.partition;
    let cost = partition.transport_cost(mu_star, f_kind);
    let potential = mu_star
        .domain()
        .centers()
        .iter()
        .map(|c| {
            sites
                .positions()
                .iter()
                .zip(solved.weights.omega())
                .map(|(x, om)| f_kind.cost(*c, *x) - om)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok((cost, potential))
}

/// How [`cyclically_monotone_with`] decides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MonotoneMode {
    /// Brute force for `N <= 8`, assignment LP otherwise.
    Auto,
    BruteForce,
    AssignmentLp,
}

/// Whether pairing `xs[i]` with `ys[i]` beats every permutation under
/// squared cost.
pub fn cyclically_monotone(xs: &[Point2], ys: &[Point2]) -> Result<bool> {
    cyclically_monotone_with(xs, ys, MonotoneMode::Auto)
}

pub fn cyclically_monotone_with(xs: &[Point2], ys: &[Point2], mode: MonotoneMode) -> Result<bool> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument("pairings need equal lengths"));
    }
    let n = xs.len();
    let identity: f64 = xs.iter().zip(ys).map(|(x, y)| x.dist_sq(*y)).sum();
    let slack = 1e-12 * (1.0 + identity);
    let brute = match mode {
        MonotoneMode::Auto => n <= BRUTE_FORCE_LIMIT,
        MonotoneMode::BruteForce => true,
        MonotoneMode::AssignmentLp => false,
    };
    if brute {
        if n > BRUTE_FORCE_LIMIT {
            return Err(Error::TooLarge {
                size: n,
                limit: BRUTE_FORCE_LIMIT,
            });
        }
        return Ok(min_over_permutations(xs, ys) >= identity - slack);
    }
    if n > MONOTONE_LP_LIMIT {
        return Err(Error::TooLarge {
            size: n,
            limit: MONOTONE_LP_LIMIT,
        });
    }
    let w = vec![1.0 / n as f64; n];
    let cost = cost_matrix(xs, ys, CostKind::Quadratic);
    let out = network_simplex(&w, &w, &DenseArcs { m: n, cost: &cost });
    Ok(out.cost * n as f64 >= identity - slack)
}

/// Minimum of `sum |x_i - y_sigma(i)|^2` over all permutations (Heap's algorithm).
fn min_over_permutations(xs: &[Point2], ys: &[Point2]) -> f64 {
    let n = xs.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| -> f64 { (0..n).map(|i| xs[i].dist_sq(ys[p[i]])).sum() };
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Squared Wasserstein distance between the kernel mixtures of two configurations.
pub fn w2_kernel_mixtures(
    x_config: &ParticleConfig,
    y_config: &ParticleConfig,
    spec: &KernelSpec,
    domain: &Domain,
) -> Result<f64> {
    let a = mixture_density(x_config, spec, domain)?;
    let b = mixture_density(y_config, spec, domain)?;
    Ok(w2_between_grids(&a, &b, GridMethod::Auto)?.cost)
}

/// Central-difference gradient of a cell-centered potential, one-sided on
/// the boundary. Components that would push descent out of the domain
/// (`grad . n < 0` on a boundary cell) are clamped to zero.
pub fn grid_gradient(domain: &Domain, potential: &[f64]) -> Vec<Point2> {
    let (nx, ny) = (domain.nx(), domain.ny());
    let (dx, dy) = (domain.dx(), domain.dy());
    let mut out = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let at = |x: usize, y: usize| potential[y * nx + x];
            let gx = if nx == 1 {
                0.0
            } else if ix == 0 {
                (at(1, iy) - at(0, iy)) / dx
            } else if ix == nx - 1 {
                (at(nx - 1, iy) - at(nx - 2, iy)) / dx
            } else {
                (at(ix + 1, iy) - at(ix - 1, iy)) / (2.0 * dx)
            };
            let gy = if ny == 1 {
                0.0
            } else if iy == 0 {
                (at(ix, 1) - at(ix, 0)) / dy
            } else if iy == ny - 1 {
                (at(ix, ny - 1) - at(ix, ny - 2)) / dy
            } else {
                (at(ix, iy + 1) - at(ix, iy - 1)) / (2.0 * dy)
            };
            let mut g = Point2::new(gx, gy);
            if (ix == 0 && g.x > 0.0) || (ix == nx - 1 && g.x < 0.0) {
                g.x = 0.0;
            }
            if (iy == 0 && g.y > 0.0) || (iy == ny - 1 && g.y < 0.0) {
                g.y = 0.0;
            }
            out.push(g);
        }
    }
    out
}
