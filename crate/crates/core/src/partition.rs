//! Rasterized Voronoi and Laguerre partitions of a grid density, capacity
//! weights, and cell centroids.
//!
//! A partition stores, for every grid cell, the site that owns it. Capacity
//! solves finish with an exact discrete transport step, so a few boundary
//! cells may be shared between sites; [`Partition::pieces`] lists every
//! `(cell, site, mass)` fragment.

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{GridDensity, ParticleConfig, MASS_TOL};
use crate::transport::{network_simplex, CostKind, SparseArcs};
use crate::{Error, Point2, Result};

const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    sites: Vec<Point2>,
    assign: Vec<usize>,
    pieces: Vec<(usize, usize, f64)>,
    mass: Vec<f64>,
    centroid: Vec<Point2>,
    boundary_cells: Vec<usize>,
}

impl Partition {
    fn from_pieces(
        sites: &[Point2],
        mu_star: &GridDensity,
        assign: Vec<usize>,
        pieces: Vec<(usize, usize, f64)>,
        boundary_cells: Vec<usize>,
    ) -> Self {
        let n = sites.len();
        let d = mu_star.domain();
        let mut mass = vec![0.0; n];
        let mut moment = vec![Point2::ZERO; n];
        for &(c, i, m) in &pieces {
            mass[i] += m;
            moment[i] += d.center(c) * m;
        }
        let centroid = (0..n)
            .map(|i| if mass[i] > 0.0 { moment[i] * (1.0 / mass[i]) } else { sites[i] })
            .collect();
        Partition {
            sites: sites.to_vec(),
            assign,
            pieces,
            mass,
            centroid,
            boundary_cells,
        }
    }

    fn whole_cells(sites: &[Point2], mu_star: &GridDensity, assign: Vec<usize>, boundary_cells: Vec<usize>) -> Self {
        let pieces = mu_star
            .mass()
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(c, m)| (c, assign[c], *m))
            .collect();
        Self::from_pieces(sites, mu_star, assign, pieces, boundary_cells)
    }

    pub fn sites(&self) -> &[Point2] {
        &self.sites
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    /// Owning site per grid cell; for shared cells, the site with the largest share.
    pub fn assign(&self) -> &[usize] {
        &self.assign
    }

    /// Every positive `(cell, site, mass)` fragment.
    pub fn pieces(&self) -> &[(usize, usize, f64)] {
        &self.pieces
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn centroid(&self) -> &[Point2] {
        &self.centroid
    }

    /// Cells where a tie decided the owner, or whose mass is shared.
    pub fn boundary_cells(&self) -> &[usize] {
        &self.boundary_cells
    }

    /// Total mass of the boundary cells under `mu_star`.
    pub fn boundary_mass(&self, mu_star: &GridDensity) -> f64 {
        self.boundary_cells.iter().map(|&c| mu_star.mass()[c]).sum()
    }

    /// `sum_pieces m f(|c - x_i|)`.
    pub fn transport_cost(&self, mu_star: &GridDensity, f_kind: CostKind) -> f64 {
        let d = mu_star.domain();
        self.pieces
            .iter()
            .map(|&(c, i, m)| m * f_kind.cost(d.center(c), self.sites[i]))
            .sum()
    }

    /// Per-site `sum_pieces m c`.
    pub fn moments(&self, mu_star: &GridDensity) -> Vec<Point2> {
        let d = mu_star.domain();
        let mut out = vec![Point2::ZERO; self.sites.len()];
        for &(c, i, m) in &self.pieces {
            out[i] += d.center(c) * m;
        }
        out
    }
}

/// Argmin over sites of `score(i)`, lowest index on ties, plus a tie flag.
#[inline]
fn argmin_sites(n: usize, mut score: impl FnMut(usize) -> f64) -> (usize, bool) {
    let mut best = 0;
    let mut best_s = score(0);
    let mut tie = false;
    for i in 1..n {
        let s = score(i);
        let scale = TIE_TOL * (1.0 + best_s.abs().max(s.abs()));
        if s < best_s - scale {
            best = i;
            best_s = s;
            tie = false;
        } else if (s - best_s).abs() <= scale {
            tie = true;
            if s < best_s {
                best_s = s;
            }
        }
    }
    (best, tie)
}

fn assign_cells(sites: &[Point2], mu_star: &GridDensity, f_kind: CostKind, omega: Option<&[f64]>) -> (Vec<usize>, Vec<usize>) {
    let d = mu_star.domain();
    let mut assign = Vec::with_capacity(d.num_cells());
    let mut ties = Vec::new();
    for c in 0..d.num_cells() {
        let p = d.center(c);
        let (i, tie) = match omega {
            None => argmin_sites(sites.len(), |i| p.dist_sq(sites[i])),
            Some(w) => argmin_sites(sites.len(), |i| f_kind.cost(p, sites[i]) - w[i]),
        };
        assign.push(i);
        if tie {
            ties.push(c);
        }
    }
    (assign, ties)
}

/// Nearest-site partition under Euclidean distance.
pub fn voronoi(sites: &ParticleConfig, mu_star: &GridDensity) -> Partition {
    let (assign, ties) = assign_cells(sites.positions(), mu_star, CostKind::Quadratic, None);
    Partition::whole_cells(sites.positions(), mu_star, assign, ties)
}

/// Cells assigned to `argmin_i f(|c - x_i|) - omega_i`.
pub fn weighted_voronoi(sites: &ParticleConfig, mu_star: &GridDensity, f_kind: CostKind, omega: &[f64]) -> Result<Partition> {
    if omega.len() != sites.len() {
        return Err(Error::InvalidArgument("one weight per site"));
    }
    let (assign, ties) = assign_cells(sites.positions(), mu_star, f_kind, Some(omega));
    Ok(Partition::whole_cells(sites.positions(), mu_star, assign, ties))
}

/// Mass-weighted mean of each site's cells; empty cells keep the site position.
pub fn centroids(partition: &Partition, mu_star: &GridDensity) -> Vec<Point2> {
    partition
        .moments(mu_star)
        .into_iter()
        .enumerate()
        .map(|(i, mom)| {
            let m = partition.mass[i];
            if m > 0.0 {
                mom * (1.0 / m)
            } else {
                partition.sites[i]
            }
        })
        .collect()
}

/// Laguerre weights and the mass residual `mu*(W_i) - target_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityWeights {
    omega: Vec<f64>,
    residual: Vec<f64>,
}

impl CapacityWeights {
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn max_residual(&self) -> f64 {
        self.residual.iter().fold(0.0f64, |a, r| a.max(r.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapacityOptions {
    /// Accepted `max_i |residual_i|`.
    pub tol: f64,
    /// Dual-ascent iteration cap.
    pub max_iter: usize,
    /// Finish with an exact transport solve when ascent stalls above `tol`.
    pub polish: bool,
}

impl CapacityOptions {
    /// `tol = 1e-4 / N`.
    pub fn for_sites(n: usize) -> Self {
        CapacityOptions {
            tol: 1e-4 / n.max(1) as f64,
            max_iter: 200,
            polish: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapacitySolve {
    pub weights: CapacityWeights,
    pub partition: Partition,
    /// Accepted ascent iterations.
    pub iterations: usize,
    /// Whether the exact transport step produced the final partition.
    pub polished: bool,
}

struct Scores<'a> {
    sites: &'a [Point2],
    centers: Vec<Point2>,
    cells: Vec<usize>,
    mass: Vec<f64>,
    f_kind: CostKind,
}

impl Scores<'_> {
    #[inline]
    fn cost(&self, k: usize, i: usize) -> f64 {
        self.f_kind.cost(self.centers[k], self.sites[i])
    }

    /// Dual value and per-site masses of the whole-cell Laguerre assignment.
    fn evaluate(&self, omega: &[f64], target: &[f64], masses: &mut [f64]) -> f64 {
        masses.iter_mut().for_each(|m| *m = 0.0);
        let n = self.sites.len();
        let mut phi: f64 = omega.iter().zip(target).map(|(w, t)| w * t).sum();
        for k in 0..self.cells.len() {
            let (i, _) = argmin_sites(n, |i| self.cost(k, i) - omega[i]);
            masses[i] += self.mass[k];
            phi += self.mass[k] * (self.cost(k, i) - omega[i]);
        }
        phi
    }
}

/// Capacity weights so that each Laguerre cell carries `target[i]` of `mu_star`.
///
/// Damped ascent on the dual
/// `Phi(w) = sum_i w_i t_i + sum_c m_c min_i (f(|c - x_i|) - w_i)`
/// starting from `omega0`, step `N/2`, halved whenever `Phi` would decrease.
/// Whole-cell assignments cannot resolve residuals below one cell's mass, so
/// with `polish` set the result is finished by an exact transport solve
/// whose site duals become the weights.
pub fn solve_capacity_weights(
    sites: &ParticleConfig,
    mu_star: &GridDensity,
    f_kind: CostKind,
    target: &[f64],
    opts: &CapacityOptions,
) -> Result<CapacitySolve> {
    solve_capacity_weights_from(sites, mu_star, f_kind, target, None, opts)
}

/// As [`solve_capacity_weights`], warm-started at `omega0`.
pub fn solve_capacity_weights_from(
    sites: &ParticleConfig,
    mu_star: &GridDensity,
    f_kind: CostKind,
    target: &[f64],
    omega0: Option<&[f64]>,
    opts: &CapacityOptions,
) -> Result<CapacitySolve> {
    let n = sites.len();
    if target.len() != n {
        return Err(Error::InvalidArgument("one target mass per site"));
    }
    if target.iter().any(|t| !(*t > 0.0)) || (target.iter().sum::<f64>() - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidArgument("target masses must be positive and sum to one"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive"));
    }
    let d = mu_star.domain();
    let cells = mu_star.support();
    let scores = Scores {
        sites: sites.positions(),
        centers: cells.iter().map(|&c| d.center(c)).collect(),
        mass: cells.iter().map(|&c| mu_star.mass()[c]).collect(),
        cells,
        f_kind,
    };

    let mut omega = match omega0 {
        Some(w) if w.len() == n => w.to_vec(),
        _ => vec![0.0; n],
    };
    let mut masses = vec![0.0; n];
    let mut phi = scores.evaluate(&omega, target, &mut masses);
    let mut best_residual = max_dev(&masses, target);
    let mut eta = n as f64 / 2.0;
    let eta_floor = eta * 1e-10;
    let mut trial = vec![0.0; n];
    let mut trial_masses = vec![0.0; n];
    let mut iterations = 0;
    let mut steps = 0;
    while best_residual > opts.tol && steps < opts.max_iter && eta > eta_floor {
        steps += 1;
        for i in 0..n {
            trial[i] = omega[i] + eta * (target[i] - masses[i]);
        }
        let trial_phi = scores.evaluate(&trial, target, &mut trial_masses);
        if trial_phi < phi {
            eta *= 0.5;
            continue;
        }
        core::mem::swap(&mut omega, &mut trial);
        core::mem::swap(&mut masses, &mut trial_masses);
        phi = trial_phi;
        best_residual = max_dev(&masses, target);
        iterations += 1;
    }
    center(&mut omega);

    if best_residual <= opts.tol {
        let partition = weighted_voronoi(sites, mu_star, f_kind, &omega)?;
        let residual = residuals(partition.mass(), target);
        return Ok(CapacitySolve {
            weights: CapacityWeights { omega, residual },
            partition,
            iterations,
            polished: false,
        });
    }
    if !opts.polish {
        if let Some(site) = masses.iter().position(|m| *m <= 0.0) {
            return Err(Error::CapacityUnreachable { site });
        }
        let residual = residuals(&masses, target);
        return Err(Error::MaxIterExceeded {
            best: alloc::boxed::Box::new(CapacityWeights { omega, residual }),
        });
    }

    let (omega, partition) = polish(&scores, mu_star, target, &omega);
    let residual = residuals(partition.mass(), target);
    Ok(CapacitySolve {
        weights: CapacityWeights { omega, residual },
        partition,
        iterations,
        polished: true,
    })
}

fn max_dev(masses: &[f64], target: &[f64]) -> f64 {
    masses.iter().zip(target).fold(0.0f64, |a, (m, t)| a.max((m - t).abs()))
}

fn residuals(masses: &[f64], target: &[f64]) -> Vec<f64> {
    masses.iter().zip(target).map(|(m, t)| m - t).collect()
}

fn center(w: &mut [f64]) {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter_mut().for_each(|x| *x -= mean);
}

/// Exact transport from sites (supplies `target`) to the support cells,
/// priced only on arcs whose Laguerre score lies within a band of the best;
/// arcs priced negative by the duals are added until none remain.
fn polish(scores: &Scores<'_>, mu_star: &GridDensity, target: &[f64], omega: &[f64]) -> (Vec<f64>, Partition) {
    let n = scores.sites.len();
    let k_cells = scores.cells.len();
    let d = mu_star.domain();
    let slope = match scores.f_kind {
        CostKind::Quadratic => 2.0 * d.hi().dist(d.lo()),
        CostKind::Linear => 1.0,
    };
    let mut band = 0.25 * slope * d.cell_width();
    let max_cost = (0..k_cells)
        .flat_map(|k| (0..n).map(move |i| (k, i)))
        .fold(0.0f64, |a, (k, i)| a.max(scores.cost(k, i)));
    let feas_tol = 1e-9 * (1.0 + max_cost);

    let mut in_set = vec![false; k_cells * n];
    let mut arcs: Vec<(u32, u32, f64)> = Vec::new();
    let add_band = |band: f64, in_set: &mut [bool], arcs: &mut Vec<(u32, u32, f64)>| {
        for k in 0..k_cells {
            let best = (0..n).map(|i| scores.cost(k, i) - omega[i]).fold(f64::INFINITY, f64::min);
            for i in 0..n {
                if !in_set[k * n + i] && scores.cost(k, i) - omega[i] <= best + band {
                    in_set[k * n + i] = true;
                    arcs.push((i as u32, k as u32, scores.cost(k, i)));
                }
            }
        }
    };
    add_band(band, &mut in_set, &mut arcs);

    loop {
        let out = network_simplex(target, &scores.mass, &SparseArcs { arcs: &arcs });
        let complete = arcs.len() == k_cells * n;
        if out.artificial_flow > 1e-12 && !complete {
            band *= 2.0;
            add_band(band, &mut in_set, &mut arcs);
            continue;
        }
        let mut added = 0;
        for k in 0..k_cells {
            for i in 0..n {
                if !in_set[k * n + i] && scores.cost(k, i) - out.u[i] - out.v[k] < -feas_tol {
                    in_set[k * n + i] = true;
                    arcs.push((i as u32, k as u32, scores.cost(k, i)));
                    added += 1;
                }
            }
        }
        if added > 0 {
            continue;
        }

        let mut w = out.u.clone();
        center(&mut w);
        let cells_total = d.num_cells();
        let mut pieces: Vec<(usize, usize, f64)> = out
            .flows
            .iter()
            .map(|&(i, k, _, m)| (scores.cells[k], i, m))
            .collect();
        pieces.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

        let sites = scores.sites;
        let (mut assign, mut boundary) = {
            let mut assign = Vec::with_capacity(cells_total);
            let mut ties = Vec::new();
            for c in 0..cells_total {
                let p = d.center(c);
                let (i, tie) = argmin_sites(n, |i| scores.f_kind.cost(p, sites[i]) - w[i]);
                assign.push(i);
                if tie {
                    ties.push(c);
                }
            }
            (assign, ties)
        };
        let mut s = 0;
        while s < pieces.len() {
            let c = pieces[s].0;
            let mut e = s;
            let mut owner = pieces[s].1;
            let mut owner_mass = pieces[s].2;
            while e < pieces.len() && pieces[e].0 == c {
                if pieces[e].2 > owner_mass {
                    owner = pieces[e].1;
                    owner_mass = pieces[e].2;
                }
                e += 1;
            }
            assign[c] = owner;
            if e - s > 1 {
                boundary.push(c);
            }
            s = e;
        }
        boundary.sort_unstable();
        boundary.dedup();
        return (w, Partition::from_pieces(sites, mu_star, assign, pieces, boundary));
    }
}

#[cfg(test)]
mod tests;
