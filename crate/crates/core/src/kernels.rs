//! Truncated-Gaussian kernel measures and their mixtures.
//!
//! The kernel centered at `z` with bandwidth `h` has density
//! `exp(-|x - z|^2 / 2h^2) / C` on the open ball `B_h(z)` and zero outside,
//! with `C = 2 pi h^2 (1 - e^{-1/2})`. Rasterization integrates the density
//! over each grid cell exactly in one direction (error functions) and with
//! Gauss-Legendre quadrature in the other, after a change of variables that
//! makes every integrand piece smooth. Cell masses are therefore
//! continuous, piecewise-smooth functions of the kernel centers, which is
//! what the descent schemes and their gradient checks rely on.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use crate::domain::{Domain, GridDensity, ParticleConfig};
use crate::{Error, Point2, Result};

// 12-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 6] = [
    0.125_233_408_511_468_9,
    0.367_831_498_998_180_2,
    0.587_317_954_286_617_4,
    0.769_902_674_194_304_7,
    0.904_117_256_370_474_9,
    0.981_560_634_246_719_3,
];
const GL_WEIGHTS: [f64; 6] = [
    0.249_147_045_813_402_8,
    0.233_492_536_538_354_8,
    0.203_167_426_723_065_9,
    0.160_078_328_543_346_2,
    0.106_939_325_995_318_4,
    0.047_175_336_386_511_8,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    TruncatedGaussian,
}

/// Kernel family and bandwidth; the support radius equals the bandwidth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    h: f64,
    kind: KernelKind,
}

impl KernelSpec {
    pub fn truncated_gaussian(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument("kernel bandwidth must be positive"));
        }
        Ok(KernelSpec {
            h,
            kind: KernelKind::TruncatedGaussian,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn support_radius(&self) -> f64 {
        self.h
    }

    /// `C`, the integral of the unnormalized kernel over its ball.
    pub fn normalizer(&self) -> f64 {
        2.0 * PI * self.h * self.h * (1.0 - libm::exp(-0.5))
    }

    pub fn peak(&self) -> f64 {
        1.0 / self.normalizer()
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            h: 0.05,
            kind: KernelKind::TruncatedGaussian,
        }
    }
}

/// Kernel density at `x` for a kernel centered at `center`.
pub fn kernel_eval(spec: &KernelSpec, center: Point2, x: Point2) -> f64 {
    let h = spec.h;
    let r2 = x.dist_sq(center);
    if r2 >= h * h {
        return 0.0;
    }
    libm::exp(-r2 / (2.0 * h * h)) / spec.normalizer()
}

/// `int_lo^hi exp(-t^2 / 2h^2) dt`.
fn gauss_segment(lo: f64, hi: f64, h: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let s = h * SQRT_2;
    h * libm::sqrt(FRAC_PI_2) * (libm::erf(hi / s) - libm::erf(lo / s))
}

/// Probability mass of the kernel at `center` inside the rectangle `[a, b]`.
pub fn cell_mass(spec: &KernelSpec, center: Point2, a: Point2, b: Point2) -> f64 {
    let h = spec.h;
    // rectangle in coordinates relative to the center
    let (ax, bx) = (a.x - center.x, b.x - center.x);
    let (ay, by) = (a.y - center.y, b.y - center.y);
    let vlo = ay.max(-h);
    let vhi = by.min(h);
    if vhi <= vlo || bx <= -h || ax >= h {
        return 0.0;
    }
    // v = h sin(theta) removes the square-root behaviour of the chord length
    let tlo = libm::asin((vlo / h).clamp(-1.0, 1.0));
    let thi = libm::asin((vhi / h).clamp(-1.0, 1.0));
    let mut breaks: [f64; 6] = [tlo, thi, 0.0, 0.0, 0.0, 0.0];
    let mut nb = 2;
    for edge in [ax, bx] {
        if edge.abs() < h {
            let t = libm::acos(edge.abs() / h);
            for cand in [t, -t] {
                if cand > tlo && cand < thi {
                    breaks[nb] = cand;
                    nb += 1;
                }
            }
        }
    }
    let pieces = &mut breaks[..nb];
    pieces.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap_or(core::cmp::Ordering::Equal));
    let integrand = |theta: f64| {
        let (sin, cos) = (libm::sin(theta), libm::cos(theta));
        let s = h * cos;
        libm::exp(-0.5 * sin * sin) * gauss_segment(ax.max(-s), bx.min(s), h) * s
    };
    let mut total = 0.0;
    for w in pieces.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        let mid = 0.5 * (t0 + t1);
        let half = 0.5 * (t1 - t0);
        let mut acc = 0.0;
        for k in 0..GL_NODES.len() {
            let d = half * GL_NODES[k];
            acc += GL_WEIGHTS[k] * (integrand(mid - d) + integrand(mid + d));
        }
        total += acc * half;
    }
    total / spec.normalizer()
}

/// Gradient of [`cell_mass`] with respect to the kernel center.
///
/// Moving the center by `dz` moves mass across the rectangle edges, so the
/// derivative reduces to line integrals of the kernel along them.
pub fn cell_mass_gradient(spec: &KernelSpec, center: Point2, a: Point2, b: Point2) -> Point2 {
    let h = spec.h;
    let (ax, bx) = (a.x - center.x, b.x - center.x);
    let (ay, by) = (a.y - center.y, b.y - center.y);
    // integral of the kernel along the segment {u = edge, v in [lo, hi]}
    let line = |edge: f64, lo: f64, hi: f64| {
        if edge.abs() >= h {
            return 0.0;
        }
        let s = libm::sqrt(h * h - edge * edge);
        libm::exp(-edge * edge / (2.0 * h * h)) * gauss_segment(lo.max(-s), hi.min(s), h)
    };
    let gx = line(ax, ay, by) - line(bx, ay, by);
    let gy = line(ay, ax, bx) - line(by, ax, bx);
    Point2::new(gx, gy) * (1.0 / spec.normalizer())
}

/// The rectangle on which a kernel centered at any admissible point keeps its
/// whole support inside the domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShrunkenDomain {
    base: Domain,
    h: f64,
}

impl ShrunkenDomain {
    pub fn new(base: Domain, spec: &KernelSpec) -> Result<Self> {
        let h = spec.h;
        let (lo, hi) = (base.lo(), base.hi());
        if !(lo.x + h < hi.x - h && lo.y + h < hi.y - h) {
            return Err(Error::InvalidArgument(
                "bandwidth must be below half of each side length",
            ));
        }
        Ok(ShrunkenDomain { base, h })
    }

    pub fn base(&self) -> &Domain {
        &self.base
    }

    pub fn lo(&self) -> Point2 {
        Point2::new(self.base.lo().x + self.h, self.base.lo().y + self.h)
    }

    pub fn hi(&self) -> Point2 {
        Point2::new(self.base.hi().x - self.h, self.base.hi().y - self.h)
    }

    /// Membership in the closure `[lo + h, hi - h]`.
    pub fn contains(&self, p: Point2) -> bool {
        let (lo, hi) = (self.lo(), self.hi());
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
    }

    pub fn project(&self, p: Point2) -> Point2 {
        let (lo, hi) = (self.lo(), self.hi());
        Point2::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y))
    }

    /// Outward normals of the faces `p` lies on (zero vector when interior).
    pub fn active_normal(&self, p: Point2) -> (f64, f64) {
        let (lo, hi) = (self.lo(), self.hi());
        let nx = if p.x <= lo.x {
            -1.0
        } else if p.x >= hi.x {
            1.0
        } else {
            0.0
        };
        let ny = if p.y <= lo.y {
            -1.0
        } else if p.y >= hi.y {
            1.0
        } else {
            0.0
        };
        (nx, ny)
    }

    /// Zeroes gradient components that point out of the region at faces.
    pub fn clamp_outward(&self, p: Point2, g: Point2) -> Point2 {
        // descent moves along -g; an outward move means -g . n > 0
        let (nx, ny) = self.active_normal(p);
        let mut out = g;
        if nx != 0.0 && -g.x * nx > 0.0 {
            out.x = 0.0;
        }
        if ny != 0.0 && -g.y * ny > 0.0 {
            out.y = 0.0;
        }
        out
    }
}

/// Cells touched by a ball of radius `r` around `center`, clipped to the grid.
pub(crate) fn cells_near(domain: &Domain, center: Point2, r: f64) -> impl Iterator<Item = usize> {
    let (dx, dy) = (domain.dx(), domain.dy());
    let lo = domain.lo();
    let clampi = |v: f64, n: usize| -> usize {
        if v <= 0.0 {
            0
        } else {
            (v as usize).min(n - 1)
        }
    };
    let ix0 = clampi((center.x - r - lo.x) / dx, domain.nx());
    let ix1 = clampi((center.x + r - lo.x) / dx, domain.nx());
    let iy0 = clampi((center.y - r - lo.y) / dy, domain.ny());
    let iy1 = clampi((center.y + r - lo.y) / dy, domain.ny());
    let nx = domain.nx();
    (iy0..=iy1).flat_map(move |iy| (ix0..=ix1).map(move |ix| iy * nx + ix))
}

/// Per-agent kernel masses: the sparse cells each kernel covers.
#[derive(Clone, Debug)]
pub struct KernelMixture {
    domain: Domain,
    spec: KernelSpec,
    centers: Vec<Point2>,
    /// `(cell, mass)` for each agent, masses of one kernel summing to one.
    pieces: Vec<Vec<(usize, f64)>>,
    density: GridDensity,
}

impl KernelMixture {
    pub fn new(config: &ParticleConfig, spec: &KernelSpec, domain: &Domain) -> Result<Self> {
        let shrunk = ShrunkenDomain::new(*domain, spec)?;
        if let Some(i) = config.positions().iter().position(|p| !shrunk.contains(*p)) {
            return Err(Error::ParticleTooCloseToBoundary(i));
        }
        let n = config.len() as f64;
        let mut total = alloc::vec![0.0; domain.num_cells()];
        let mut pieces = Vec::with_capacity(config.len());
        for &z in config.positions() {
            let mut cells = Vec::new();
            let mut sum = 0.0;
            for c in cells_near(domain, z, spec.h) {
                let (a, b) = domain.cell_bounds(c);
                let m = cell_mass(spec, z, a, b);
                if m > 0.0 {
                    cells.push((c, m));
                    sum += m;
                }
            }
            // the ball lies inside the domain, so `sum` is one up to quadrature error
            for (c, m) in &mut cells {
                *m /= sum;
                total[*c] += *m / n;
            }
            pieces.push(cells);
        }
        let density = GridDensity::from_weights(*domain, total)?;
        Ok(KernelMixture {
            domain: *domain,
            spec: *spec,
            centers: config.positions().to_vec(),
            pieces,
            density,
        })
    }

    pub fn density(&self) -> &GridDensity {
        &self.density
    }

    pub fn into_density(self) -> GridDensity {
        self.density
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn centers(&self) -> &[Point2] {
        &self.centers
    }

    /// Cells and masses of agent `i`'s kernel (masses sum to one).
    pub fn agent_cells(&self, i: usize) -> &[(usize, f64)] {
        &self.pieces[i]
    }
}

/// Rasterized mixture `(1/N) sum_i K_h(. - x_i)`.
pub fn mixture_density(
    config: &ParticleConfig,
    spec: &KernelSpec,
    domain: &Domain,
) -> Result<GridDensity> {
    KernelMixture::new(config, spec, domain).map(KernelMixture::into_density)
}

/// Smallest pairwise distance; infinite for a single agent.
pub fn min_separation(config: &ParticleConfig) -> f64 {
    let mut pts: Vec<Point2> = config.positions().to_vec();
    pts.sort_unstable_by(|p, q| p.x.partial_cmp(&q.x).unwrap_or(core::cmp::Ordering::Equal));
    let mut best_sq = f64::INFINITY;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let dx = pts[j].x - pts[i].x;
            if dx * dx >= best_sq {
                break;
            }
            best_sq = best_sq.min(pts[i].dist_sq(pts[j]));
        }
    }
    libm::sqrt(best_sq)
}

/// Whether every pair is more than `delta` apart and every agent lies in
/// the open interior of the domain.
pub fn in_delta_set(config: &ParticleConfig, domain: &Domain, delta: f64) -> bool {
    let (lo, hi) = (domain.lo(), domain.hi());
    let interior = config
        .positions()
        .iter()
        .all(|p| p.x > lo.x && p.x < hi.x && p.y > lo.y && p.y < hi.y);
    interior && min_separation(config) > delta
}
