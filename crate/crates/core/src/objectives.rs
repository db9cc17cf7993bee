//! Coverage objectives on agent configurations and their gradients.
//!
//! * distortion `H_f(x) = sum_c mu*(c) min_i f(|c - x_i|)`,
//! * balanced distortion `Hbar_f(x)`: transport cost from equal-weight sites to `mu*`,
//! * kernel objective `F^{h,N}(x) = W2^2(mixture_h(x), mu*)`.
//!
//! Every objective implements [`Objective`], which is what the descent
//! schemes consume. Gradients come from transport duals (envelope form), not
//! from differentiating through the solvers.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Domain, GridDensity, ParticleConfig};
use crate::kernels::{cell_mass_gradient, cells_near, KernelMixture, KernelSpec, ShrunkenDomain};
use crate::partition::{
    solve_capacity_weights_from, voronoi, CapacityOptions, CapacitySolve, CapacityWeights, Partition,
};
use crate::transport::{
    cyclically_monotone_with, grid_gradient, network_simplex, w2_between_grids, CostKind, GridMethod,
    MonotoneMode, SparseArcs, TransportSolution, MONOTONE_LP_LIMIT,
};
use crate::{Error, Point2, Result};

/// Largest agent count accepted by [`free_weight_check`].
pub const FREE_WEIGHT_MAX_AGENTS: usize = 6;
/// Largest grid side accepted by [`free_weight_check`].
pub const FREE_WEIGHT_MAX_SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObjectiveKind {
    DistortionHf,
    BalancedHbar,
    KernelFhN(KernelSpec),
}

/// An objective together with its target density.
#[derive(Clone, Debug)]
pub struct ObjectiveSpec {
    kind: ObjectiveKind,
    f_kind: CostKind,
    target: GridDensity,
    shrunk: Option<ShrunkenDomain>,
    capacity: Option<CapacityOptions>,
}

impl ObjectiveSpec {
    pub fn distortion(target: GridDensity, f_kind: CostKind) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::DistortionHf,
            f_kind,
            target,
            shrunk: None,
            capacity: None,
        }
    }

    pub fn balanced(target: GridDensity, f_kind: CostKind) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::BalancedHbar,
            f_kind,
            target,
            shrunk: None,
            capacity: None,
        }
    }

    /// `F^{h,N}` with `F = W2^2(., target)`; the ground cost is quadratic.
    pub fn kernel(target: GridDensity, spec: KernelSpec) -> Result<Self> {
        let shrunk = ShrunkenDomain::new(*target.domain(), &spec)?;
        Ok(ObjectiveSpec {
            kind: ObjectiveKind::KernelFhN(spec),
            f_kind: CostKind::Quadratic,
            target,
            shrunk: Some(shrunk),
            capacity: None,
        })
    }

    /// Overrides the capacity-solver options used by the balanced objective.
    pub fn with_capacity_options(mut self, opts: CapacityOptions) -> Self {
        self.capacity = Some(opts);
        self
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn f_kind(&self) -> CostKind {
        self.f_kind
    }

    pub fn target(&self) -> &GridDensity {
        &self.target
    }

    pub fn domain(&self) -> &Domain {
        self.target.domain()
    }

    pub fn kernel_spec(&self) -> Option<KernelSpec> {
        match self.kind {
            ObjectiveKind::KernelFhN(k) => Some(k),
            _ => None,
        }
    }

    /// Admissible region for the kernel objective.
    pub fn shrunken_domain(&self) -> Option<&ShrunkenDomain> {
        self.shrunk.as_ref()
    }

    fn capacity_options(&self, n: usize) -> CapacityOptions {
        self.capacity.unwrap_or_else(|| CapacityOptions::for_sites(n))
    }

    fn config(&self, x: &[Point2]) -> Result<ParticleConfig> {
        ParticleConfig::new(x.to_vec(), self.domain())
    }

    fn expect(&self, want: &'static str, ok: bool) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(want))
        }
    }
}

/// `sum_c mu*(c) min_i f(|c - x_i|)`.
pub fn eval_hf(config: &ParticleConfig, spec: &ObjectiveSpec) -> Result<f64> {
    spec.expect("objective must be the distortion", spec.kind == ObjectiveKind::DistortionHf)?;
    Ok(distortion(config, &spec.target, spec.f_kind))
}

fn distortion(config: &ParticleConfig, target: &GridDensity, f_kind: CostKind) -> f64 {
    let d = target.domain();
    target
        .mass()
        .iter()
        .enumerate()
        .filter(|(_, m)| **m > 0.0)
        .map(|(c, m)| {
            let p = d.center(c);
            let best = config
                .positions()
                .iter()
                .map(|x| p.dist_sq(*x))
                .fold(f64::INFINITY, f64::min);
            m * f_kind.of_dist_sq(best)
        })
        .sum()
}

/// Balanced distortion and the capacity weights that realize it.
pub fn eval_hbar(config: &ParticleConfig, spec: &ObjectiveSpec) -> Result<(f64, CapacityWeights)> {
    let solved = solve_hbar(config, spec, None)?;
    let value = solved.partition.transport_cost(&spec.target, spec.f_kind);
    Ok((value, solved.weights))
}

/// Capacity solve with equal targets, optionally warm-started.
pub fn solve_hbar(config: &ParticleConfig, spec: &ObjectiveSpec, omega0: Option<&[f64]>) -> Result<CapacitySolve> {
    spec.expect("objective must be the balanced distortion", spec.kind == ObjectiveKind::BalancedHbar)?;
    let n = config.len();
    let targets = vec![1.0 / n as f64; n];
    solve_capacity_weights_from(config, &spec.target, spec.f_kind, &targets, omega0, &spec.capacity_options(n))
}

/// `sum_pieces m * d/dx_i f(|c - x_i|)` over a partition.
fn partition_gradient(partition: &Partition, target: &GridDensity, f_kind: CostKind) -> Vec<Point2> {
    let d = target.domain();
    let sites = partition.sites();
    let mut g = vec![Point2::ZERO; sites.len()];
    for &(c, i, m) in partition.pieces() {
        g[i] += f_kind.site_gradient(d.center(c), sites[i]) * m;
    }
    g
}

/// Envelope gradient of the balanced distortion; `(2/N)(x_i - b_i)` for quadratic cost.
pub fn grad_hbar(config: &ParticleConfig, spec: &ObjectiveSpec) -> Result<Vec<Point2>> {
    let solved = solve_hbar(config, spec, None)?;
    Ok(partition_gradient(&solved.partition, &spec.target, spec.f_kind))
}

/// Gradient of the distortion through its Voronoi decomposition.
pub fn grad_hf(config: &ParticleConfig, spec: &ObjectiveSpec) -> Result<Vec<Point2>> {
    spec.expect("objective must be the distortion", spec.kind == ObjectiveKind::DistortionHf)?;
    let partition = voronoi(config, &spec.target);
    Ok(partition_gradient(&partition, &spec.target, spec.f_kind))
}

/// Outcome of comparing `H_f` with the free-weight transport problem.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeWeightReport {
    /// Direct distortion.
    pub h_f: f64,
    /// `min_w C_f(sum_i w_i delta_{x_i}, mu*)` from the exact solver.
    pub lp_value: f64,
    pub gap: f64,
    /// Minimizing weights found by the exact solver.
    pub w_lp: Vec<f64>,
    pub voronoi_mass: Vec<f64>,
    /// `max_i |w_lp_i - voronoi_mass_i|`.
    pub weight_deviation: f64,
    /// Mass of cells whose nearest site was decided by a tie.
    pub boundary_mass: f64,
}

/// Checks that the distortion equals the transport cost minimized over site
/// weights, with Voronoi masses as minimizers.
///
/// The free-weight problem is solved exactly as a transportation problem:
/// cells ship their mass to sites that each demand one unit, and an extra
/// zero-cost source with `N - 1` units fills whatever a site does not get
/// from the cells.
pub fn free_weight_check(config: &ParticleConfig, spec: &ObjectiveSpec) -> Result<FreeWeightReport> {
    spec.expect("objective must be the distortion", spec.kind == ObjectiveKind::DistortionHf)?;
    let n = config.len();
    if n > FREE_WEIGHT_MAX_AGENTS {
        return Err(Error::TooLarge {
            size: n,
            limit: FREE_WEIGHT_MAX_AGENTS,
        });
    }
    let d = spec.domain();
    let side = d.nx().max(d.ny());
    if side > FREE_WEIGHT_MAX_SIDE {
        return Err(Error::TooLarge {
            size: side,
            limit: FREE_WEIGHT_MAX_SIDE,
        });
    }
    let h_f = distortion(config, &spec.target, spec.f_kind);
    let cells = spec.target.support();
    let mut supply: Vec<f64> = cells.iter().map(|&c| spec.target.mass()[c]).collect();
    let mut arcs = Vec::with_capacity(cells.len() * n + n);
    for (k, &c) in cells.iter().enumerate() {
        let p = d.center(c);
        for (i, x) in config.positions().iter().enumerate() {
            arcs.push((k as u32, i as u32, spec.f_kind.cost(p, *x)));
        }
    }
    if n > 1 {
        let slack = cells.len() as u32;
        supply.push((n - 1) as f64);
        for i in 0..n {
            arcs.push((slack, i as u32, 0.0));
        }
    }
    let demand = vec![1.0; n];
    let out = network_simplex(&supply, &demand, &SparseArcs { arcs: &arcs });
    let mut w_lp = vec![0.0; n];
    for &(k, i, _, f) in &out.flows {
        if k < cells.len() {
            w_lp[i] += f;
        }
    }
    let partition = voronoi(config, &spec.target);
    let voronoi_mass = partition.mass().to_vec();
    let weight_deviation = w_lp
        .iter()
        .zip(&voronoi_mass)
        .fold(0.0f64, |a, (w, v)| a.max((w - v).abs()));
    Ok(FreeWeightReport {
        h_f,
        lp_value: out.cost,
        gap: (h_f - out.cost).abs(),
        w_lp,
        voronoi_mass,
        weight_deviation,
        boundary_mass: partition.boundary_mass(&spec.target),
    })
}

/// Rasterized mixture of a configuration and its transport solution to the target.
#[derive(Clone, Debug)]
pub struct KernelState {
    pub mixture: KernelMixture,
    pub solution: TransportSolution,
}

/// Builds the mixture and solves `W2^2(mixture, mu*)`.
pub fn kernel_state(config: &ParticleConfig, spec: &ObjectiveSpec) -> Result<KernelState> {
    let kernel = match spec.kind {
        ObjectiveKind::KernelFhN(k) => k,
        _ => return Err(Error::InvalidArgument("objective must be the kernel objective")),
    };
    let mixture = KernelMixture::new(config, &kernel, spec.domain())?;
    let solution = w2_between_grids(mixture.density(), &spec.target, GridMethod::Auto)?;
    Ok(KernelState { mixture, solution })
}

/// `W2^2(mixture_h(x), mu*)`.
pub fn eval_fhn(config: &ParticleConfig, spec: &ObjectiveSpec) -> Result<f64> {
    Ok(kernel_state(config, spec)?.solution.cost)
}

/// Per-agent gradient of the kernel objective.
///
/// With `phi` the Kantorovich potential of the mixture, agent `i` sees
/// `(1/N) sum_c phi_c d m_{i,c} / d x_i`, where `m_{i,c}` are its exact
/// cell masses. Components pointing out of the admissible region on its
/// boundary are zeroed.
pub fn grad_fhn(config: &ParticleConfig, spec: &ObjectiveSpec) -> Result<Vec<Point2>> {
    let state = kernel_state(config, spec)?;
    let field = KernelField::new(spec, state.solution.dual_source, config.len())?;
    Ok(config
        .positions()
        .iter()
        .map(|&z| field.clamped(z, field.raw_gradient(z)))
        .collect())
}

/// Kernel-objective gradient by quadrature of the potential's grid gradient,
/// `(1/N) sum_c m_{i,c} grad phi(c)`. Coarser than [`grad_fhn`]; kept as an
/// independent route.
pub fn grad_fhn_quadrature(config: &ParticleConfig, spec: &ObjectiveSpec) -> Result<Vec<Point2>> {
    let state = kernel_state(config, spec)?;
    let grad_phi = grid_gradient(spec.domain(), &state.solution.dual_source);
    let n = config.len() as f64;
    let shrunk = spec.shrunk.expect("kernel objective has a shrunken domain");
    Ok((0..config.len())
        .map(|i| {
            let g = state
                .mixture
                .agent_cells(i)
                .iter()
                .fold(Point2::ZERO, |acc, &(c, m)| acc + grad_phi[c] * m)
                * (1.0 / n);
            shrunk.clamp_outward(config.positions()[i], g)
        })
        .collect())
}

/// Per-agent gradient with everything except agent `i`'s own position frozen.
pub trait AgentField {
    fn agent_gradient(&self, i: usize, z: Point2) -> Point2;
}

/// A differentiable objective on configurations.
pub trait Objective {
    type Field: AgentField;

    fn value(&self, x: &[Point2]) -> Result<f64>;

    fn gradient(&self, x: &[Point2]) -> Result<Vec<Point2>>;

    /// Freezes the coupling (potential or partition) at `x`.
    fn freeze(&self, x: &[Point2]) -> Result<Self::Field>;

    /// Nearest admissible position.
    fn project(&self, p: Point2) -> Point2 {
        p
    }

    /// The spec behind the objective, when there is one.
    fn spec(&self) -> Option<&ObjectiveSpec> {
        None
    }
}

/// Frozen Kantorovich potential of the kernel objective.
#[derive(Clone, Debug)]
pub struct KernelField {
    potential: Vec<f64>,
    kernel: KernelSpec,
    domain: Domain,
    shrunk: ShrunkenDomain,
    n: usize,
}

impl KernelField {
    fn new(spec: &ObjectiveSpec, potential: Vec<f64>, n: usize) -> Result<Self> {
        let kernel = spec
            .kernel_spec()
            .ok_or(Error::InvalidArgument("objective must be the kernel objective"))?;
        Ok(KernelField {
            potential,
            kernel,
            domain: *spec.domain(),
            shrunk: spec.shrunk.expect("kernel objective has a shrunken domain"),
            n,
        })
    }

    fn raw_gradient(&self, z: Point2) -> Point2 {
        let mut g = Point2::ZERO;
        for c in cells_near(&self.domain, z, self.kernel.support_radius()) {
            let (a, b) = self.domain.cell_bounds(c);
            g += cell_mass_gradient(&self.kernel, z, a, b) * self.potential[c];
        }
        g * (1.0 / self.n as f64)
    }

    fn clamped(&self, z: Point2, g: Point2) -> Point2 {
        self.shrunk.clamp_outward(z, g)
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }
}

/// Frozen partition: each site keeps the cell pieces it owns.
#[derive(Clone, Debug)]
pub struct PartitionField {
    pieces: Vec<Vec<(Point2, f64)>>,
    f_kind: CostKind,
}

impl PartitionField {
    fn new(partition: &Partition, target: &GridDensity, f_kind: CostKind) -> Self {
        let d = target.domain();
        let mut pieces = vec![Vec::new(); partition.num_sites()];
        for &(c, i, m) in partition.pieces() {
            pieces[i].push((d.center(c), m));
        }
        PartitionField { pieces, f_kind }
    }
}

impl AgentField for PartitionField {
    fn agent_gradient(&self, i: usize, z: Point2) -> Point2 {
        self.pieces[i]
            .iter()
            .fold(Point2::ZERO, |acc, &(c, m)| acc + self.f_kind.site_gradient(c, z) * m)
    }
}

impl AgentField for KernelField {
    fn agent_gradient(&self, _i: usize, z: Point2) -> Point2 {
        self.clamped(z, self.raw_gradient(z))
    }
}

/// Frozen field of an [`ObjectiveSpec`].
#[derive(Clone, Debug)]
pub enum SpecField {
    Kernel(KernelField),
    Partition(PartitionField),
}

impl AgentField for SpecField {
    fn agent_gradient(&self, i: usize, z: Point2) -> Point2 {
        match self {
            SpecField::Kernel(k) => k.agent_gradient(i, z),
            SpecField::Partition(p) => p.agent_gradient(i, z),
        }
    }
}

impl Objective for ObjectiveSpec {
    type Field = SpecField;

    fn value(&self, x: &[Point2]) -> Result<f64> {
        let config = self.config(x)?;
        match self.kind {
            ObjectiveKind::DistortionHf => eval_hf(&config, self),
            ObjectiveKind::BalancedHbar => eval_hbar(&config, self).map(|(v, _)| v),
            ObjectiveKind::KernelFhN(_) => eval_fhn(&config, self),
        }
    }

    fn gradient(&self, x: &[Point2]) -> Result<Vec<Point2>> {
        let config = self.config(x)?;
        match self.kind {
            ObjectiveKind::DistortionHf => grad_hf(&config, self),
            ObjectiveKind::BalancedHbar => grad_hbar(&config, self),
            ObjectiveKind::KernelFhN(_) => grad_fhn(&config, self),
        }
    }

    fn freeze(&self, x: &[Point2]) -> Result<SpecField> {
        let config = self.config(x)?;
        match self.kind {
            ObjectiveKind::DistortionHf => Ok(SpecField::Partition(PartitionField::new(
                &voronoi(&config, &self.target),
                &self.target,
                self.f_kind,
            ))),
            ObjectiveKind::BalancedHbar => {
                let solved = solve_hbar(&config, self, None)?;
                Ok(SpecField::Partition(PartitionField::new(&solved.partition, &self.target, self.f_kind)))
            }
            ObjectiveKind::KernelFhN(_) => {
                let state = kernel_state(&config, self)?;
                KernelField::new(self, state.solution.dual_source, x.len()).map(SpecField::Kernel)
            }
        }
    }

    fn project(&self, p: Point2) -> Point2 {
        match &self.shrunk {
            Some(s) => s.project(p),
            None => self.domain().clamp(p),
        }
    }

    fn spec(&self) -> Option<&ObjectiveSpec> {
        Some(self)
    }
}

/// `(scale/2) sum_i |x_i - a_i|^2`; a closed-form fixture for the descent schemes.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticToy {
    pub anchors: Vec<Point2>,
    pub scale: f64,
}

impl AgentField for QuadraticToy {
    fn agent_gradient(&self, i: usize, z: Point2) -> Point2 {
        (z - self.anchors[i]) * self.scale
    }
}

impl Objective for QuadraticToy {
    type Field = QuadraticToy;

    fn value(&self, x: &[Point2]) -> Result<f64> {
        if x.len() != self.anchors.len() {
            return Err(Error::InvalidArgument("one anchor per agent"));
        }
        Ok(0.5 * self.scale * x.iter().zip(&self.anchors).map(|(p, a)| p.dist_sq(*a)).sum::<f64>())
    }

    fn gradient(&self, x: &[Point2]) -> Result<Vec<Point2>> {
        if x.len() != self.anchors.len() {
            return Err(Error::InvalidArgument("one anchor per agent"));
        }
        Ok(x.iter().enumerate().map(|(i, p)| self.agent_gradient(i, *p)).collect())
    }

    fn freeze(&self, _x: &[Point2]) -> Result<QuadraticToy> {
        Ok(self.clone())
    }
}

/// Constant objective: zero gradient everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantToy(pub f64);

impl AgentField for ConstantToy {
    fn agent_gradient(&self, _i: usize, _z: Point2) -> Point2 {
        Point2::ZERO
    }
}

impl Objective for ConstantToy {
    type Field = ConstantToy;

    fn value(&self, _x: &[Point2]) -> Result<f64> {
        Ok(self.0)
    }

    fn gradient(&self, x: &[Point2]) -> Result<Vec<Point2>> {
        Ok(vec![Point2::ZERO; x.len()])
    }

    fn freeze(&self, _x: &[Point2]) -> Result<ConstantToy> {
        Ok(*self)
    }
}

/// Random pairs `(x, y)`: `x` uniform in a rectangle, `y = x + d` with
/// `|d_i| <= radius`, both clamped to the rectangle.
#[derive(Clone, Debug)]
pub struct PairSampler {
    lo: Point2,
    hi: Point2,
    n: usize,
    radius: f64,
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(lo: Point2, hi: Point2, n: usize, radius: f64, seed: u64) -> Self {
        PairSampler {
            lo,
            hi,
            n,
            radius,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self) -> (Vec<Point2>, Vec<Point2>) {
        let (lo, hi) = (self.lo, self.hi);
        let clamp = |p: Point2| Point2::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y));
        let mut x = Vec::with_capacity(self.n);
        let mut y = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let p = Point2::new(self.rng.random_range(lo.x..hi.x), self.rng.random_range(lo.y..hi.y));
            let r = self.radius * libm::sqrt(self.rng.random::<f64>());
            let t = self.rng.random_range(0.0..core::f64::consts::TAU);
            x.push(p);
            y.push(clamp(p + Point2::new(r * libm::cos(t), r * libm::sin(t))));
        }
        (x, y)
    }
}

/// Empirical `max |<grad(y) - grad(x), y - x>| / |y - x|^2` over sampled
/// pairs whose identity pairing is cyclically monotone. Pairs the checker
/// rejects are skipped; pairs above its size limit are used unchecked.
pub fn estimate_smoothness<O: Objective>(
    objective: &O,
    mut sampler: impl FnMut() -> (Vec<Point2>, Vec<Point2>),
    trials: usize,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial"));
    }
    let mut best = 0.0f64;
    for _ in 0..trials {
        let (x, y) = sampler();
        if x.len() != y.len() {
            return Err(Error::InvalidArgument("pairs need equal lengths"));
        }
        if x.len() <= MONOTONE_LP_LIMIT && !cyclically_monotone_with(&x, &y, MonotoneMode::Auto)? {
            continue;
        }
        let dx2: f64 = x.iter().zip(&y).map(|(a, b)| a.dist_sq(*b)).sum();
        if dx2 == 0.0 {
            continue;
        }
        let gx = objective.gradient(&x)?;
        let gy = objective.gradient(&y)?;
        let inner: f64 = (0..x.len()).map(|i| (gy[i] - gx[i]).dot(y[i] - x[i])).sum();
        best = best.max(inner.abs() / dx2);
    }
    Ok(best)
}

#[cfg(test)]
mod tests;
