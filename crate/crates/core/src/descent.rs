//! Descent schemes for coverage objectives.
//!
//! * [`agent_prox_step`]: every agent takes a proximal step on its own
//!   position against the current positions of the others (Jacobi).
//! * [`lloyd_prox_step`]: the proximal step on the balanced distortion with
//!   the capacity-constrained partition frozen, which has a closed form.
//! * [`gradient_flow`]: explicit Euler for the particle gradient flow.
//! * [`macro_prox_step`]: the linearized proximal step of a grid density,
//!   realized as a pushforward by the per-cell proximal map.
//!
//! [`run`] drives any of them and records a [`DescentTrace`].

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{Domain, GridDensity, ParticleConfig};
use crate::geom::stacked_dist;
use crate::objectives::{solve_hbar, AgentField, Objective, ObjectiveKind, ObjectiveSpec};
use crate::partition::CapacityWeights;
use crate::transport::{ot_lp, w2_between_grids, CostKind, DiscreteMeasure, GridMethod};
use crate::{Error, Point2, Result};

/// How the implicit per-agent update evaluates its gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Inner {
    /// Coupling frozen at the start of the step; one transport solve per step.
    #[default]
    Frozen,
    /// `d_1 F(z, x_{-i})` recomputed at every inner iterate; one solve per
    /// agent and inner iteration.
    Exact,
}

/// Backtracking gives up after this many halvings of `tau`.
pub const MAX_HALVINGS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Guard {
    /// `tau < 2 / (3 alpha)` is required up front, for a smoothness estimate `alpha`.
    Strict { alpha: f64 },
    /// Halve `tau` until the objective does not increase.
    Backtracking,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentConfig {
    tau: f64,
    pub max_steps: usize,
    pub step_tol: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub seed: u64,
    /// Mass placement of the macroscopic scheme.
    pub deposit: Deposit,
    pub inner: Inner,
    guard: Guard,
}

impl DescentConfig {
    /// Validates `tau` and the tolerances; a strict guard also checks the step bound.
    pub fn new(tau: f64, guard: Guard) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument("tau must be positive"));
        }
        if let Guard::Strict { alpha } = guard {
            if !(alpha >= 0.0) {
                return Err(Error::InvalidArgument("smoothness estimate must be non-negative"));
            }
            let bound = if alpha > 0.0 { 2.0 / (3.0 * alpha) } else { f64::INFINITY };
            if tau >= bound {
                return Err(Error::StepTooLarge { tau, bound });
            }
        }
        Ok(DescentConfig {
            tau,
            max_steps: 500,
            step_tol: 1e-6,
            inner_tol: 1e-10,
            inner_max_iter: 100,
            seed: 0,
            deposit: Deposit::Nearest,
            inner: Inner::Frozen,
            guard,
        })
    }

    /// Default step for the Lloyd scheme.
    pub fn lloyd() -> Self {
        Self::new(0.25, Guard::Strict { alpha: 0.0 }).expect("valid defaults")
    }

    /// `tau = min(0.25, 0.6 / alpha)` under a strict guard.
    pub fn agent_prox(alpha: f64) -> Result<Self> {
        let tau = if alpha > 0.0 { (0.6 / alpha).min(0.25) } else { 0.25 };
        Self::new(tau, Guard::Strict { alpha })
    }

    pub fn with_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn with_step_tol(mut self, step_tol: f64) -> Self {
        self.step_tol = step_tol;
        self
    }

    pub fn with_inner(mut self, inner_tol: f64, inner_max_iter: usize) -> Self {
        self.inner_tol = inner_tol;
        self.inner_max_iter = inner_max_iter;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_inner_mode(mut self, inner: Inner) -> Self {
        self.inner = inner;
        self
    }

    pub fn with_deposit(mut self, deposit: Deposit) -> Self {
        self.deposit = deposit;
        self
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn guard(&self) -> Guard {
        self.guard
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_tol > 0.0) || !(self.inner_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive"));
        }
        Ok(())
    }
}

/// Result of one proximal step over all agents.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentStep {
    pub positions: Vec<Point2>,
    /// Largest inner iteration count over agents.
    pub inner_iters: usize,
    /// Agents whose inner solve stalled and took an explicit step instead.
    pub fallbacks: Vec<usize>,
}

/// Solves `z = x - tau g(z)` by damped fixed-point iteration.
fn prox_fixed_point(
    x: Point2,
    tau: f64,
    grad: impl Fn(Point2) -> Point2,
    project: impl Fn(Point2) -> Point2,
    tol: f64,
    max_iter: usize,
) -> (Point2, usize, bool) {
    let mut z = x;
    let mut theta = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..=max_iter {
        let target = project(x - grad(z) * tau);
        let next = z + (target - z) * theta;
        let change = next.dist(z);
        z = next;
        if change <= tol {
            return (z, k, true);
        }
        if change > last {
            theta *= 0.5;
        }
        last = change;
    }
    (z, max_iter, false)
}

/// Coupling used by one proximal step.
enum Coupling<F> {
    Frozen(F),
    /// Gradient at the start of the step, for the explicit fallback.
    Exact(Vec<Point2>),
}

impl<F> Coupling<F> {
    fn at<O: Objective<Field = F>>(objective: &O, x: &[Point2], inner: Inner) -> Result<Self> {
        Ok(match inner {
            Inner::Frozen => Coupling::Frozen(objective.freeze(x)?),
            Inner::Exact => Coupling::Exact(objective.gradient(x)?),
        })
    }
}

fn prox_with_field<O: Objective>(
    x: &[Point2],
    coupling: &Coupling<O::Field>,
    objective: &O,
    tau: f64,
    dcfg: &DescentConfig,
) -> AgentStep {
    let mut positions = Vec::with_capacity(x.len());
    let mut inner_iters = 0;
    let mut fallbacks = Vec::new();
    for (i, &xi) in x.iter().enumerate() {
        let grad = |z: Point2| -> Point2 {
            match coupling {
                Coupling::Frozen(field) => field.agent_gradient(i, z),
                Coupling::Exact(_) => {
                    let mut y = x.to_vec();
                    y[i] = z;
                    objective
                        .gradient(&y)
                        .map(|g| g[i])
                        .unwrap_or(Point2::new(f64::NAN, f64::NAN))
                }
            }
        };
        let (z, k, ok) = prox_fixed_point(
            xi,
            tau,
            grad,
            |p| objective.project(p),
            dcfg.inner_tol,
            dcfg.inner_max_iter,
        );
        inner_iters = inner_iters.max(k);
        if ok && z.is_finite() {
            positions.push(z);
        } else {
            fallbacks.push(i);
            let g = match coupling {
                Coupling::Frozen(field) => field.agent_gradient(i, xi),
                Coupling::Exact(g0) => g0[i],
            };
            positions.push(objective.project(xi - g * tau));
        }
    }
    AgentStep {
        positions,
        inner_iters,
        fallbacks,
    }
}

/// `x_i^+ = argmin_z |x_i - z|^2 / (2 tau) + F(z, x_{-i})` for all agents at once.
///
/// With [`Inner::Frozen`] the coupling (transport potential or partition) is
/// fixed at `x` and each agent solves its implicit update with only its own
/// kernel or cell moving; [`Inner::Exact`] re-evaluates the full gradient at
/// every inner iterate. Results are projected onto the admissible region.
pub fn agent_prox_step<O: Objective>(config: &[Point2], objective: &O, dcfg: &DescentConfig) -> Result<AgentStep> {
    let start: Vec<Point2> = config.iter().map(|&p| objective.project(p)).collect();
    let coupling = Coupling::at(objective, &start, dcfg.inner)?;
    Ok(prox_with_field(&start, &coupling, objective, dcfg.tau, dcfg))
}

/// Frozen-partition proximal step on the balanced distortion,
/// `x_i^+ = (x_i + s b_i) / (1 + s)` with `s = 2 tau / N`.
pub fn lloyd_prox_step(
    config: &ParticleConfig,
    objective: &ObjectiveSpec,
    dcfg: &DescentConfig,
) -> Result<(ParticleConfig, CapacityWeights)> {
    let (next, weights, _) = lloyd_inner(config, objective, dcfg.tau, None)?;
    Ok((ParticleConfig::new(next, objective.domain())?, weights))
}

/// One Lloyd step; also returns the objective value at `config`.
fn lloyd_inner(
    config: &ParticleConfig,
    objective: &ObjectiveSpec,
    tau: f64,
    omega0: Option<&[f64]>,
) -> Result<(Vec<Point2>, CapacityWeights, f64)> {
    if objective.kind() != ObjectiveKind::BalancedHbar || objective.f_kind() != CostKind::Quadratic {
        return Err(Error::InvalidArgument("the Lloyd scheme needs the quadratic balanced distortion"));
    }
    let solved = solve_hbar(config, objective, omega0)?;
    let value = solved.partition.transport_cost(objective.target(), CostKind::Quadratic);
    let s = 2.0 * tau / config.len() as f64;
    let b = solved.partition.centroid();
    let next = config
        .positions()
        .iter()
        .zip(b)
        .map(|(&x, &bi)| objective.domain().clamp((x + bi * s) * (1.0 / (1.0 + s))))
        .collect();
    Ok((next, solved.weights, value))
}

/// Largest `|x_i - b_i|` for the capacity-constrained partition at `config`.
pub fn centroid_gap(config: &ParticleConfig, objective: &ObjectiveSpec) -> Result<(f64, CapacityWeights)> {
    let solved = solve_hbar(config, objective, None)?;
    let gap = config
        .positions()
        .iter()
        .zip(solved.partition.centroid())
        .fold(0.0f64, |a, (x, b)| a.max(x.dist(*b)));
    Ok((gap, solved.weights))
}

/// How [`macro_prox_step_with`] places the mass leaving a cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Deposit {
    /// The whole cell goes to the minimizing cell center.
    #[default]
    Nearest,
    /// The continuous minimizer of the c-transformed potential receives the
    /// mass, split bilinearly over the four surrounding cell centers.
    Bilinear,
}

/// Grid-density proximal step: the mass of each cell `z` moves to
/// `argmin_y |z - y|^2 / (2 tau) + phi(y)` over cell centers, `phi` being
/// the Kantorovich potential of `mu` toward `target` (ties to the lowest index).
pub fn macro_prox_step(mu: &GridDensity, target: &GridDensity, tau: f64) -> Result<GridDensity> {
    macro_inner(mu, target, tau, Deposit::Nearest).map(|(next, _, _)| next)
}

/// [`macro_prox_step`] with a choice of deposit.
pub fn macro_prox_step_with(mu: &GridDensity, target: &GridDensity, tau: f64, deposit: Deposit) -> Result<GridDensity> {
    macro_inner(mu, target, tau, deposit).map(|(next, _, _)| next)
}

/// Returns the pushforward, `W2^2(mu, target)`, and the moved `L2(mu)` distance.
fn macro_inner(mu: &GridDensity, target: &GridDensity, tau: f64, deposit: Deposit) -> Result<(GridDensity, f64, f64)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("tau must be positive"));
    }
    let sol = w2_between_grids(mu, target, GridMethod::Auto)?;
    let d = mu.domain();
    let centers = d.centers();
    let mut out = vec![0.0; d.num_cells()];
    let mut moved = 0.0;
    match deposit {
        Deposit::Nearest => {
            let inv = 1.0 / (2.0 * tau);
            for c in mu.support() {
                let z = centers[c];
                let best = argmin_cell(&centers, &sol.dual_source, z, inv);
                out[best] += mu.mass()[c];
                moved += mu.mass()[c] * z.dist_sq(centers[best]);
            }
        }
        Deposit::Bilinear => {
            let neg_psi: Vec<f64> = sol.dual_target.iter().map(|p| -p).collect();
            for c in mu.support() {
                let z = centers[c];
                let y = continuous_prox(d, &centers, &neg_psi, z, tau);
                deposit_bilinear(d, y, mu.mass()[c], &mut out);
                moved += mu.mass()[c] * z.dist_sq(y);
            }
        }
    }
    Ok((GridDensity::from_weights(*d, out)?, sol.cost, libm::sqrt(moved)))
}

/// `argmin_y |z - y|^2 / (2 tau) + min_j (|y - t_j|^2 - psi_j)`, given `-psi`.
fn continuous_prox(d: &Domain, centers: &[Point2], neg_psi: &[f64], z: Point2, tau: f64) -> Point2 {
    let inv = 1.0 / (1.0 + 2.0 * tau);
    let t = centers[argmin_cell(centers, neg_psi, z, inv)];
    d.clamp((z + t * (2.0 * tau)) * inv)
}

fn deposit_bilinear(d: &Domain, p: Point2, m: f64, out: &mut [f64]) {
    let axis = |v: f64, lo: f64, h: f64, n: usize| -> (usize, usize, f64) {
        let u = ((v - lo) / h - 0.5).clamp(0.0, (n - 1) as f64);
        let i = (libm::floor(u) as usize).min(n.saturating_sub(2));
        let j = (i + 1).min(n - 1);
        (i, j, u - i as f64)
    };
    let (x0, x1, fx) = axis(p.x, d.lo().x, d.dx(), d.nx());
    let (y0, y1, fy) = axis(p.y, d.lo().y, d.dy(), d.ny());
    out[d.index(x0, y0)] += m * (1.0 - fx) * (1.0 - fy);
    out[d.index(x1, y0)] += m * fx * (1.0 - fy);
    out[d.index(x0, y1)] += m * (1.0 - fx) * fy;
    out[d.index(x1, y1)] += m * fx * fy;
}

/// Particle counterpart of [`macro_prox_step`] for the empirical measure of
/// `points`, with the potential taken as the c-transform of the target duals
/// `psi`: particle `z` picks `j = argmin_j |z - t_j|^2 / (1 + 2 tau) - psi_j`
/// and moves to `(z + 2 tau t_j) / (1 + 2 tau)`.
pub fn particle_prox_step(points: &[Point2], target: &GridDensity, tau: f64) -> Result<Vec<Point2>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("tau must be positive"));
    }
    let sol = ot_lp(
        &DiscreteMeasure::uniform(points.to_vec())?,
        &DiscreteMeasure::from_grid(target),
        CostKind::Quadratic,
    )?;
    let d = target.domain();
    let centers = d.centers();
    let neg_psi: Vec<f64> = sol.dual_target.iter().map(|p| -p).collect();
    Ok(points.iter().map(|&z| continuous_prox(d, &centers, &neg_psi, z, tau)).collect())
}

fn argmin_cell(centers: &[Point2], phi: &[f64], z: Point2, inv: f64) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (k, (y, &py)) in centers.iter().zip(phi).enumerate() {
        let v = inv * z.dist_sq(*y) + py;
        if v < best_v {
            best_v = v;
            best = k;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    AgentProx,
    Lloyd,
    /// Explicit Euler with `dt = tau`.
    Flow,
    Macro,
}

#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Particles(Vec<Point2>),
    Grid(GridDensity),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub state: State,
    pub value: f64,
    /// Distance from the previous state; zero for the initial row.
    pub step_norm: f64,
    pub inner_iters: usize,
    /// Step size used to reach this state.
    pub tau: f64,
    /// Some agent fell back to an explicit step.
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxSteps,
    GuardTriggered,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescentTrace {
    pub steps: Vec<TraceStep>,
    pub terminated: Termination,
}

impl DescentTrace {
    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }

    pub fn last(&self) -> &TraceStep {
        self.steps.last().expect("a trace holds its initial state")
    }

    /// Final particle positions, if the run was on particles.
    pub fn final_positions(&self) -> Option<&[Point2]> {
        match &self.last().state {
            State::Particles(p) => Some(p),
            State::Grid(_) => None,
        }
    }

    /// Number of steps whose value exceeds the previous one by more than `tol`.
    pub fn increases(&self, tol: f64) -> usize {
        self.steps.windows(2).filter(|w| w[1].value > w[0].value + tol).count()
    }
}

fn row(state: State, value: f64, step_norm: f64, inner_iters: usize, tau: f64, fallback: bool) -> TraceStep {
    TraceStep {
        state,
        value,
        step_norm,
        inner_iters,
        tau,
        fallback,
    }
}

/// Iterates `scheme` until the step norm drops to `step_tol`, `max_steps`
/// is reached, or the backtracking guard gives up.
pub fn run<O: Objective>(scheme: Scheme, init: &State, objective: &O, dcfg: &DescentConfig) -> Result<DescentTrace> {
    dcfg.validate()?;
    match (scheme, init) {
        (Scheme::Macro, State::Grid(mu)) => {
            let spec = objective
                .spec()
                .ok_or(Error::InvalidArgument("the macroscopic scheme needs a target density"))?;
            run_macro(mu, spec.target(), dcfg)
        }
        (Scheme::Macro, State::Particles(_)) | (_, State::Grid(_)) => {
            Err(Error::InvalidArgument("scheme and initial state do not match"))
        }
        (Scheme::Lloyd, State::Particles(x)) => {
            let spec = objective
                .spec()
                .ok_or(Error::InvalidArgument("the Lloyd scheme needs the balanced distortion"))?;
            run_lloyd(x, spec, dcfg)
        }
        (Scheme::AgentProx, State::Particles(x)) => run_agent_prox(x, objective, dcfg),
        (Scheme::Flow, State::Particles(x)) => {
            gradient_flow_steps(x, objective, dcfg.tau, dcfg.max_steps, Some(dcfg.step_tol))
        }
    }
}

fn run_macro(mu: &GridDensity, target: &GridDensity, dcfg: &DescentConfig) -> Result<DescentTrace> {
    let mut steps = Vec::with_capacity(dcfg.max_steps + 1);
    let mut current = mu.clone();
    let mut terminated = Termination::MaxSteps;
    let mut norm = 0.0;
    for k in 0..=dcfg.max_steps {
        if k == dcfg.max_steps {
            let value = w2_between_grids(&current, target, GridMethod::Auto)?.cost;
            steps.push(row(State::Grid(current), value, norm, 0, dcfg.tau, false));
            break;
        }
        // the pushforward also yields the value at its input
        let (next, value, moved) = macro_inner(&current, target, dcfg.tau, dcfg.deposit)?;
        steps.push(row(State::Grid(current), value, norm, 0, dcfg.tau, false));
        if k > 0 && norm <= dcfg.step_tol {
            terminated = Termination::Converged;
            break;
        }
        norm = moved;
        current = next;
    }
    Ok(DescentTrace { steps, terminated })
}

fn run_lloyd(x0: &[Point2], spec: &ObjectiveSpec, dcfg: &DescentConfig) -> Result<DescentTrace> {
    let domain = *spec.domain();
    let mut x = ParticleConfig::new(x0.to_vec(), &domain)?;
    let mut steps = Vec::with_capacity(dcfg.max_steps + 1);
    let mut omega: Option<Vec<f64>> = None;
    let mut norm = 0.0;
    let mut terminated = Termination::MaxSteps;
    for k in 0..=dcfg.max_steps {
        let (next, weights, value) = lloyd_inner(&x, spec, dcfg.tau, omega.as_deref())?;
        steps.push(row(State::Particles(x.positions().to_vec()), value, norm, 0, dcfg.tau, false));
        if k > 0 && norm <= dcfg.step_tol {
            terminated = Termination::Converged;
            break;
        }
        if k == dcfg.max_steps {
            break;
        }
        norm = stacked_dist(&next, x.positions());
        omega = Some(weights.omega().to_vec());
        x = ParticleConfig::new(next, &domain)?;
    }
    Ok(DescentTrace { steps, terminated })
}

fn run_agent_prox<O: Objective>(x0: &[Point2], objective: &O, dcfg: &DescentConfig) -> Result<DescentTrace> {
    let mut x: Vec<Point2> = x0.iter().map(|&p| objective.project(p)).collect();
    let mut value = objective.value(&x)?;
    let mut steps = vec![row(State::Particles(x.clone()), value, 0.0, 0, dcfg.tau, false)];
    let backtrack = matches!(dcfg.guard, Guard::Backtracking);
    let mut terminated = Termination::MaxSteps;
    for _ in 0..dcfg.max_steps {
        let coupling = Coupling::at(objective, &x, dcfg.inner)?;
        let mut tau = dcfg.tau;
        let mut halvings = 0;
        let (step, next_value) = loop {
            let step = prox_with_field(&x, &coupling, objective, tau, dcfg);
            let v = objective.value(&step.positions)?;
            if !backtrack || v <= value + 1e-12 * (1.0 + value.abs()) {
                break (step, v);
            }
            if halvings == MAX_HALVINGS {
                return Ok(DescentTrace {
                    steps,
                    terminated: Termination::GuardTriggered,
                });
            }
            tau *= 0.5;
            halvings += 1;
        };
        let norm = stacked_dist(&step.positions, &x);
        x = step.positions;
        value = next_value;
        steps.push(row(
            State::Particles(x.clone()),
            value,
            norm,
            step.inner_iters,
            tau,
            !step.fallbacks.is_empty(),
        ));
        if norm <= dcfg.step_tol {
            terminated = Termination::Converged;
            break;
        }
    }
    Ok(DescentTrace { steps, terminated })
}

/// Explicit Euler for `dx_i/dt = -grad_i F(x)` up to `t_end`.
pub fn gradient_flow<O: Objective>(config: &[Point2], objective: &O, dt: f64, t_end: f64) -> Result<DescentTrace> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidArgument("dt must be positive and t_end non-negative"));
    }
    let steps = libm::ceil(t_end / dt - 1e-9).max(0.0) as usize;
    gradient_flow_steps(config, objective, dt, steps, None)
}

fn gradient_flow_steps<O: Objective>(
    config: &[Point2],
    objective: &O,
    dt: f64,
    max_steps: usize,
    step_tol: Option<f64>,
) -> Result<DescentTrace> {
    let mut x: Vec<Point2> = config.iter().map(|&p| objective.project(p)).collect();
    let mut steps = Vec::with_capacity(max_steps + 1);
    let mut terminated = Termination::MaxSteps;
    let mut norm = 0.0;
    for k in 0..=max_steps {
        let value = objective.value(&x)?;
        steps.push(row(State::Particles(x.clone()), value, norm, 0, dt, false));
        if k == max_steps {
            break;
        }
        let g = objective.gradient(&x)?;
        let next: Vec<Point2> = x.iter().zip(&g).map(|(&p, &gi)| objective.project(p - gi * dt)).collect();
        norm = stacked_dist(&next, &x);
        x = next;
        if step_tol.is_some_and(|t| norm <= t) {
            let value = objective.value(&x)?;
            steps.push(row(State::Particles(x.clone()), value, norm, 0, dt, false));
            terminated = Termination::Converged;
            break;
        }
    }
    Ok(DescentTrace { steps, terminated })
}
