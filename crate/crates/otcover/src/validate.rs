//! Cross-module property suites with machine-readable reports.

use otcover_core::descent::{
    macro_prox_step_with, particle_prox_step, run, Deposit, DescentConfig, Guard, Scheme, State,
};
use otcover_core::domain::{histogram, make_grid, sample, Domain, GridDensity, ParticleConfig};
use otcover_core::kernels::{in_delta_set, KernelSpec};
use otcover_core::objectives::{
    estimate_smoothness, eval_fhn, eval_hbar, grad_fhn, grad_hbar, free_weight_check, ObjectiveSpec, PairSampler,
};
use otcover_core::partition::CapacityOptions;
use otcover_core::transport::{cyclically_monotone, w2_kernel_mixtures, CostKind};
use otcover_core::{Error, Point2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::experiment::run_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Suite {
    FreeWeights,
    Monotone,
    W2corollary,
    Gradients,
    Consistency,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::FreeWeights,
        Suite::Monotone,
        Suite::W2corollary,
        Suite::Gradients,
        Suite::Consistency,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            passed: measured <= threshold,
            measured,
            threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: Suite, checks: Vec<Check>) -> Self {
        SuiteReport {
            suite,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn worst(&self) -> Option<&Check> {
        self.checks.iter().max_by(|a, b| {
            let r = |c: &Check| c.measured / c.threshold.max(f64::MIN_POSITIVE);
            r(a).total_cmp(&r(b))
        })
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport, Error> {
    match suite {
        Suite::FreeWeights => free_weights(seed),
        Suite::Monotone => monotone(seed),
        Suite::W2corollary => w2corollary(seed),
        Suite::Gradients => gradients(seed),
        Suite::Consistency => consistency(seed),
    }
}

fn unit(n: usize) -> Domain {
    Domain::unit_square(n).expect("unit square")
}

fn bump(p: Point2, m: Point2, s: f64) -> f64 {
    (-p.dist_sq(m) / (2.0 * s * s)).exp()
}

/// Two unequal Gaussian bumps.
pub fn bimodal(n: usize) -> GridDensity {
    make_grid(unit(n), |p| {
        bump(p, Point2::new(0.3, 0.35), 0.1) + 0.8 * bump(p, Point2::new(0.7, 0.68), 0.1)
    })
    .expect("positive density")
}

/// A single centered bump.
pub fn blob(n: usize) -> GridDensity {
    make_grid(unit(n), |p| bump(p, Point2::new(0.5, 0.5), 0.15)).expect("positive density")
}

/// Distortion against the free-weight transport problem on 20 instances.
pub fn free_weights(seed: u64) -> Result<SuiteReport, Error> {
    let mut checks = Vec::new();
    for k in 0..20usize {
        let target = if k % 2 == 0 { GridDensity::uniform(unit(32)) } else { bimodal(32) };
        let n = 1 + k % 6;
        let x = sample(&GridDensity::uniform(unit(32)), n, run_seed(seed, k))?;
        let rep = free_weight_check(&x, &ObjectiveSpec::distortion(target, CostKind::Quadratic))?;
        checks.push(Check::at_most(
            format!("instance {k} (N = {n}): |H_f - min_w C_f|"),
            rep.gap,
            1e-9 * (1.0 + rep.h_f),
        ));
        checks.push(Check::at_most(
            format!("instance {k} (N = {n}): |w_LP - Voronoi mass|"),
            rep.weight_deviation,
            rep.boundary_mass + 1e-12,
        ));
    }
    Ok(SuiteReport::new(Suite::FreeWeights, checks))
}

fn largest_increase(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

/// Objective increases of strict-guard Lloyd and per-agent runs with 25 agents.
pub fn monotone(seed: u64) -> Result<SuiteReport, Error> {
    let n = 25;
    let tol = 1e-9;
    let mut checks = Vec::new();
    let x0 = sample(&GridDensity::uniform(unit(32)), n, run_seed(seed, n))?.into_positions();

    let hbar = ObjectiveSpec::balanced(bimodal(32), CostKind::Quadratic);
    let dcfg = DescentConfig::new(1e6, Guard::Strict { alpha: 0.0 })?.with_steps(200);
    let t = run(Scheme::Lloyd, &State::Particles(x0.clone()), &hbar, &dcfg)?;
    checks.push(Check::at_most("lloyd N = 25: largest step increase", largest_increase(&t.values()), tol));

    let fhn = ObjectiveSpec::kernel(bimodal(32), KernelSpec::truncated_gaussian(0.05)?)?;
    let s = *fhn.shrunken_domain().expect("kernel objective");
    let mut pairs = PairSampler::new(s.lo(), s.hi(), n, 0.03, seed);
    let alpha = estimate_smoothness(&fhn, || pairs.sample(), 6)?;
    let dcfg = DescentConfig::agent_prox(alpha)?.with_steps(200);
    let x: Vec<Point2> = x0.iter().map(|&p| s.project(p)).collect();
    let t = run(Scheme::AgentProx, &State::Particles(x), &fhn, &dcfg)?;
    checks.push(Check::at_most(
        "agent_prox N = 25: largest step increase",
        largest_increase(&t.values()),
        tol,
    ));
    Ok(SuiteReport::new(Suite::Monotone, checks))
}

/// Configurations with pairwise separation above `delta` inside `[lo, hi]^2`.
pub fn separated_points(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, delta: f64) -> Vec<Point2> {
    loop {
        let mut out: Vec<Point2> = Vec::with_capacity(n);
        for _ in 0..1000 {
            let p = Point2::new(rng.random_range(lo..hi), rng.random_range(lo..hi));
            if out.iter().all(|q| q.dist(p) > delta) {
                out.push(p);
                if out.len() == n {
                    return out;
                }
            }
        }
    }
}

/// Kernel-measure distance against the mean squared displacement for
/// separated configurations and cyclically monotone targets.
///
/// Displacements are several cells long so the rasterization bias stays a
/// small fraction of them, and agents start far enough apart that kernel
/// supports stay disjoint after moving.
pub fn w2corollary(seed: u64) -> Result<SuiteReport, Error> {
    let (grid, h) = (64, 0.08);
    let delta = 2.0 * h;
    let (r_lo, r_hi) = (0.05, 0.1);
    let d = unit(grid);
    let spec = KernelSpec::truncated_gaussian(h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for k in 0..10usize {
        let n = 2 + k % 4;
        let (x, y) = loop {
            let x = separated_points(&mut rng, n, h, 1.0 - h, delta + 2.0 * r_hi + 0.02);
            let y: Vec<Point2> = x
                .iter()
                .map(|&p| {
                    let r = rng.random_range(r_lo..r_hi);
                    let t = rng.random_range(0.0..std::f64::consts::TAU);
                    let q = p + Point2::new(r * t.cos(), r * t.sin());
                    Point2::new(q.x.clamp(h, 1.0 - h), q.y.clamp(h, 1.0 - h))
                })
                .collect();
            if cyclically_monotone(&x, &y)? {
                break (x, y);
            }
        };
        let xc = ParticleConfig::new(x, &d)?;
        debug_assert!(in_delta_set(&xc, &d, delta));
        let yc = ParticleConfig::new(y, &d)?;
        let w2 = w2_kernel_mixtures(&xc, &yc, &spec, &d)?;
        let msd = xc
            .positions()
            .iter()
            .zip(yc.positions())
            .map(|(a, b)| a.dist_sq(*b))
            .sum::<f64>()
            / n as f64;
        checks.push(Check::at_most(
            format!("case {k} (N = {n}): relative error"),
            (w2 - msd).abs() / msd,
            0.05,
        ));
    }
    Ok(SuiteReport::new(Suite::W2corollary, checks))
}

/// Central differences with step `eps`.
pub fn finite_difference(x: &[Point2], eps: f64, f: impl Fn(&[Point2]) -> Result<f64, Error>) -> Result<Vec<Point2>, Error> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut g = [0.0; 2];
        for (k, gk) in g.iter_mut().enumerate() {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            if k == 0 {
                a[i].x += eps;
                b[i].x -= eps;
            } else {
                a[i].y += eps;
                b[i].y -= eps;
            }
            *gk = (f(&a)? - f(&b)?) / (2.0 * eps);
        }
        out.push(Point2::new(g[0], g[1]));
    }
    Ok(out)
}

/// `max_i |g_i - r_i|_inf / max_i |r_i|_inf`.
pub fn relative_error(g: &[Point2], reference: &[Point2]) -> f64 {
    let inf = |p: Point2| p.x.abs().max(p.y.abs());
    let err = g.iter().zip(reference).fold(0.0f64, |m, (a, b)| m.max(inf(*a - *b)));
    let scale = reference.iter().fold(0.0f64, |m, b| m.max(inf(*b)));
    err / scale
}

/// Analytic gradients against central differences on 10 configurations.
pub fn gradients(seed: u64) -> Result<SuiteReport, Error> {
    let grid = 48;
    let h = 0.1;
    let d = unit(grid);
    let target = bimodal(grid);
    let fhn = ObjectiveSpec::kernel(target.clone(), KernelSpec::truncated_gaussian(h)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for k in 0..10usize {
        let n = 1 + k % 8;
        let x = separated_points(&mut rng, n, h + 1e-2, 1.0 - h - 1e-2, 0.05);
        let g = grad_fhn(&ParticleConfig::new(x.clone(), &d)?, &fhn)?;
        let fd = finite_difference(&x, 1e-3, |y| eval_fhn(&ParticleConfig::new(y.to_vec(), &d)?, &fhn))?;
        checks.push(Check::at_most(format!("config {k} (N = {n}): grad F"), relative_error(&g, &fd), 1e-2));

        let hbar = ObjectiveSpec::balanced(target.clone(), CostKind::Quadratic).with_capacity_options(CapacityOptions {
            tol: 1e-6,
            ..CapacityOptions::for_sites(n)
        });
        let g = grad_hbar(&ParticleConfig::new(x.clone(), &d)?, &hbar)?;
        let fd = finite_difference(&x, 1e-3, |y| Ok(eval_hbar(&ParticleConfig::new(y.to_vec(), &d)?, &hbar)?.0))?;
        checks.push(Check::at_most(
            format!("config {k} (N = {n}): grad H-bar"),
            relative_error(&g, &fd),
            2e-2,
        ));
    }
    Ok(SuiteReport::new(Suite::Gradients, checks))
}

/// Outcome of running the particle and grid schemes side by side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Consistency {
    pub tv: f64,
    /// Distance between the histograms of two independent initial samples.
    pub sampling_noise: f64,
}

/// Ten steps of the particle scheme from `n` samples of `init` against ten
/// macroscopic steps from their histogram.
pub fn particle_vs_macro(n: usize, grid: usize, steps: usize, tau: f64, seed: u64) -> Result<Consistency, Error> {
    let d = unit(grid);
    let (init, target) = (blob(grid), bimodal(grid));
    let p = sample(&init, n, seed)?;
    let q = sample(&init, n, seed.wrapping_add(1))?;
    let sampling_noise = histogram(&p, &d)?.tv_distance(&histogram(&q, &d)?)?;
    let mut mu = histogram(&p, &d)?;
    let mut x = p.into_positions();
    for _ in 0..steps {
        mu = macro_prox_step_with(&mu, &target, tau, Deposit::Bilinear)?;
        x = particle_prox_step(&x, &target, tau)?;
    }
    let tv = histogram(&ParticleConfig::new(x, &d)?, &d)?.tv_distance(&mu)?;
    Ok(Consistency { tv, sampling_noise })
}

/// Particle/grid agreement for 2000 particles on a 32 x 32 grid.
pub fn consistency(seed: u64) -> Result<SuiteReport, Error> {
    let c = particle_vs_macro(2000, 32, 10, 0.1, seed)?;
    Ok(SuiteReport::new(
        Suite::Consistency,
        vec![
            Check::at_most("N = 2000: TV(particles, grid measure)", c.tv, 0.08),
            Check::at_most("N = 2000: TV within two-sample noise", c.tv, c.sampling_noise),
        ],
    ))
}
