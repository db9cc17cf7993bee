//! Experiment configuration: a flat TOML file with one `[[target]]` table
//! per mixture component.

use std::path::{Path, PathBuf};

use otcover_core::descent::{Deposit, DescentConfig, Guard, Inner, Scheme};
use otcover_core::domain::{make_grid, Domain, GridDensity};
use otcover_core::kernels::KernelSpec;
use otcover_core::objectives::ObjectiveSpec;
use otcover_core::transport::CostKind;
use otcover_core::{Error, Point2};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, HarnessError, Result};

/// Step size used by `tau = "auto"` for the Lloyd scheme; large enough that
/// each step lands on the capacity-constrained centroids.
pub const LLOYD_AUTO_TAU: f64 = 1e6;
/// Step size used by `tau = "auto"` for the macroscopic scheme.
pub const MACRO_AUTO_TAU: f64 = 0.025;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Lloyd,
    AgentProx,
    Flow,
    Macro,
}

impl SchemeName {
    pub fn scheme(self) -> Scheme {
        match self {
            SchemeName::Lloyd => Scheme::Lloyd,
            SchemeName::AgentProx => Scheme::AgentProx,
            SchemeName::Flow => Scheme::Flow,
            SchemeName::Macro => Scheme::Macro,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    /// Voronoi distortion.
    Hf,
    /// Capacity-constrained distortion.
    Hbar,
    /// Transport cost of the kernel-smoothed agent measure.
    Fhn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostName {
    Quadratic,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardName {
    Strict,
    Backtracking,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerName {
    Frozen,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepositName {
    Nearest,
    Bilinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

/// A number, or `"auto"` for a scheme-dependent choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Value(f64),
    Auto(AutoTag),
}

impl Param {
    pub fn value(self) -> Option<f64> {
        match self {
            Param::Value(v) => Some(v),
            Param::Auto(_) => None,
        }
    }
}

/// TOML integers are signed, so seeds above `i64::MAX` are written as strings.
mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => v.serialize(s),
            Err(_) => seed.to_string().serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Str(t) => t
                .parse()
                .map_err(|_| de::Error::custom(format!("seed must be a non-negative integer, got {t:?}"))),
        }
    }
}

/// One Gaussian component of the target mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub mean: [f64; 2],
    /// Row-major covariance.
    pub cov: [[f64; 2]; 2],
    pub weight: f64,
}

impl Component {
    fn pdf(&self, p: Point2) -> f64 {
        let [[a, b], [_, c]] = self.cov;
        let det = a * c - b * b;
        let (dx, dy) = (p.x - self.mean[0], p.y - self.mean[1]);
        let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        self.weight * (-0.5 * q).exp() / (std::f64::consts::TAU * det.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    #[serde(with = "seed_repr")]
    pub seed: u64,
    pub out: PathBuf,
    /// Cells per side.
    pub grid: usize,
    pub domain_lo: [f64; 2],
    pub domain_hi: [f64; 2],
    pub scheme: SchemeName,
    pub objective: ObjectiveName,
    pub cost: CostName,
    pub n_list: Vec<usize>,
    /// Kernel bandwidth, used by `objective = "fhn"`.
    pub h: f64,
    pub tau: Param,
    pub guard: GuardName,
    /// Smoothness constant for the strict guard; `"auto"` estimates it per run.
    pub alpha: Param,
    pub smoothness_trials: usize,
    pub smoothness_radius: f64,
    pub max_steps: usize,
    pub step_tol: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub inner: InnerName,
    pub deposit: DepositName,
    pub target: Vec<Component>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            grid: 64,
            domain_lo: [0.0, 0.0],
            domain_hi: [1.0, 1.0],
            scheme: SchemeName::Lloyd,
            objective: ObjectiveName::Hbar,
            cost: CostName::Quadratic,
            n_list: vec![10, 25, 50, 100],
            h: 0.05,
            tau: Param::Auto(AutoTag::Auto),
            guard: GuardName::Strict,
            alpha: Param::Auto(AutoTag::Auto),
            smoothness_trials: 6,
            smoothness_radius: 0.03,
            max_steps: 500,
            step_tol: 1e-6,
            inner_tol: 1e-10,
            inner_max_iter: 100,
            inner: InnerName::Frozen,
            deposit: DepositName::Bilinear,
            target: vec![
                Component {
                    mean: [0.25, 0.3],
                    cov: [[0.012, 0.004], [0.004, 0.01]],
                    weight: 0.4,
                },
                Component {
                    mean: [0.72, 0.35],
                    cov: [[0.008, -0.002], [-0.002, 0.015]],
                    weight: 0.35,
                },
                Component {
                    mean: [0.5, 0.75],
                    cov: [[0.02, 0.0], [0.0, 0.006]],
                    weight: 0.25,
                },
            ],
        }
    }
}

const HEADER: &str = "\
# otcover experiment configuration
#
# scheme     lloyd | agent_prox | flow | macro
# objective  hf | hbar | fhn   (lloyd needs hbar with quadratic cost)
# cost       quadratic | linear
# guard      strict | backtracking
# inner      frozen | exact    (per-agent implicit step)
# deposit    nearest | bilinear (macro scheme)
# tau        number or \"auto\": lloyd 1e6, agent_prox/flow min(0.25, 0.6/alpha), macro 0.025
# alpha      number or \"auto\": estimated from `smoothness_trials` random pairs
#            within `smoothness_radius`; unused by lloyd and macro
# For the macro scheme each N is the number of uniform samples whose
# histogram is the initial measure.

";

impl ExperimentConfig {
    /// The defaults as a commented config file.
    pub fn default_toml() -> String {
        let body = toml::to_string(&ExperimentConfig::default()).expect("defaults serialize");
        format!("{HEADER}{body}")
    }

    pub fn from_toml(src: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| {
            let line = e.span().map(|s| line_at(src, s.start));
            ConfigError::new(line, e.message().trim_end().to_string())
        })?;
        cfg.validate().map_err(|(key, msg)| ConfigError::new(key_line(src, key), msg))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(Self::from_toml(&src)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field; failures name the offending key.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let fail = |key: &'static str, msg: String| Err((key, msg));
        if self.grid < 2 {
            return fail("grid", format!("grid must have at least 2 cells per side, got {}", self.grid));
        }
        let (lo, hi) = (self.domain_lo, self.domain_hi);
        if !lo.iter().chain(&hi).all(|v| v.is_finite()) || hi[0] <= lo[0] || hi[1] <= lo[1] {
            return fail("domain_hi", "domain_hi must exceed domain_lo in both coordinates".into());
        }
        if self.n_list.is_empty() {
            return fail("n_list", "n_list must not be empty".into());
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n == 0) {
            return fail("n_list", format!("agent counts must be at least 1, got {n}"));
        }
        let mut sorted = self.n_list.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return fail("n_list", "agent counts must be distinct".into());
        }
        if self.target.is_empty() {
            return fail("target", "at least one [[target]] component is required".into());
        }
        for (k, c) in self.target.iter().enumerate() {
            let [[a, b], [b2, d]] = c.cov;
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return fail("target", format!("component {k}: weight must be positive"));
            }
            if !c.mean.iter().all(|v| v.is_finite()) {
                return fail("target", format!("component {k}: mean must be finite"));
            }
            if b != b2 || !(a > 0.0) || !(a * d - b * b > 0.0) {
                return fail("target", format!("component {k}: covariance must be symmetric positive definite"));
            }
        }
        let total: f64 = self.target.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return fail("weight", format!("mixture weights sum to {total}, expected 1"));
        }
        if self.scheme == SchemeName::Lloyd && (self.objective != ObjectiveName::Hbar || self.cost != CostName::Quadratic) {
            return fail("scheme", "the lloyd scheme needs objective = \"hbar\" and cost = \"quadratic\"".into());
        }
        if self.objective == ObjectiveName::Fhn {
            if self.cost != CostName::Quadratic {
                return fail("cost", "objective fhn is a quadratic transport cost".into());
            }
            let half = 0.5 * (hi[0] - lo[0]).min(hi[1] - lo[1]);
            if !(self.h > 0.0) || self.h >= half {
                return fail("h", format!("h must lie in (0, {half})"));
            }
        }
        if let Some(t) = self.tau.value() {
            if !(t > 0.0) || !t.is_finite() {
                return fail("tau", format!("tau must be positive, got {t}"));
            }
        }
        if let Some(a) = self.alpha.value() {
            if !(a >= 0.0) || !a.is_finite() {
                return fail("alpha", format!("alpha must be non-negative, got {a}"));
            }
        }
        if self.smoothness_trials == 0 || !(self.smoothness_radius > 0.0) {
            return fail("smoothness_trials", "smoothness estimation needs trials and a positive radius".into());
        }
        if !(self.step_tol > 0.0) {
            return fail("step_tol", "step_tol must be positive".into());
        }
        if !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            return fail("inner_tol", "inner_tol and inner_max_iter must be positive".into());
        }
        if let (Some(t), Some(a)) = (self.tau.value(), self.alpha.value()) {
            if self.guard == GuardName::Strict && self.uses_alpha() && a > 0.0 && t >= 2.0 / (3.0 * a) {
                return fail("tau", format!("tau = {t} violates the strict bound 2 / (3 alpha) = {}", 2.0 / (3.0 * a)));
            }
        }
        Ok(())
    }

    /// Whether the strict guard of this scheme depends on `alpha`.
    pub fn uses_alpha(&self) -> bool {
        matches!(self.scheme, SchemeName::AgentProx | SchemeName::Flow) && self.guard == GuardName::Strict
    }

    pub fn domain(&self) -> Result<Domain, Error> {
        let p = |v: [f64; 2]| Point2::new(v[0], v[1]);
        Domain::new(p(self.domain_lo), p(self.domain_hi), self.grid, self.grid)
    }

    /// The mixture rasterized at cell centers and normalized.
    pub fn target_density(&self) -> Result<GridDensity, Error> {
        make_grid(self.domain()?, |p| self.target.iter().map(|c| c.pdf(p)).sum())
    }

    pub fn cost_kind(&self) -> CostKind {
        match self.cost {
            CostName::Quadratic => CostKind::Quadratic,
            CostName::Linear => CostKind::Linear,
        }
    }

    pub fn objective_spec(&self, target: GridDensity) -> Result<ObjectiveSpec, Error> {
        Ok(match self.objective {
            ObjectiveName::Hf => ObjectiveSpec::distortion(target, self.cost_kind()),
            ObjectiveName::Hbar => ObjectiveSpec::balanced(target, self.cost_kind()),
            ObjectiveName::Fhn => ObjectiveSpec::kernel(target, KernelSpec::truncated_gaussian(self.h)?)?,
        })
    }

    /// Resolves `tau` for a given smoothness estimate.
    pub fn resolved_tau(&self, alpha: f64) -> f64 {
        if let Some(t) = self.tau.value() {
            return t;
        }
        match self.scheme {
            SchemeName::Lloyd => LLOYD_AUTO_TAU,
            SchemeName::Macro => MACRO_AUTO_TAU,
            SchemeName::AgentProx | SchemeName::Flow => {
                if alpha > 0.0 {
                    (0.6 / alpha).min(0.25)
                } else {
                    0.25
                }
            }
        }
    }

    pub fn descent_config(&self, alpha: f64, seed: u64) -> Result<DescentConfig, Error> {
        let guard = match self.guard {
            GuardName::Strict if self.uses_alpha() => Guard::Strict { alpha },
            GuardName::Strict => Guard::Strict { alpha: 0.0 },
            GuardName::Backtracking => Guard::Backtracking,
        };
        Ok(DescentConfig::new(self.resolved_tau(alpha), guard)?
            .with_steps(self.max_steps)
            .with_step_tol(self.step_tol)
            .with_inner(self.inner_tol, self.inner_max_iter)
            .with_seed(seed)
            .with_inner_mode(match self.inner {
                InnerName::Frozen => Inner::Frozen,
                InnerName::Exact => Inner::Exact,
            })
            .with_deposit(match self.deposit {
                DepositName::Nearest => Deposit::Nearest,
                DepositName::Bilinear => Deposit::Bilinear,
            }))
    }
}

fn line_at(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// First line assigning `key` (or opening the `[[key]]` table).
fn key_line(src: &str, key: &str) -> Option<usize> {
    src.lines().position(|l| {
        let t = l.trim_start();
        if let Some(rest) = t.strip_prefix(key) {
            return rest.trim_start().starts_with('=');
        }
        t.strip_prefix("[[").and_then(|r| r.strip_prefix(key)).is_some_and(|r| r.trim_start().starts_with("]]"))
    })
    .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::from_toml(&ExperimentConfig::default_toml()).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert!(ExperimentConfig::default_toml().contains("tau = \"auto\""));
    }

    #[test]
    fn large_seeds_round_trip() {
        let cfg = ExperimentConfig {
            seed: u64::MAX,
            ..ExperimentConfig::default()
        };
        let text = cfg.to_toml();
        assert!(text.contains("seed = \"18446744073709551615\""));
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_toml("seed = 7\n").unwrap().seed, 7);
        assert!(ExperimentConfig::from_toml("seed = -1\n").is_err());
        assert!(ExperimentConfig::from_toml("seed = \"x\"\n").is_err());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 4\nn_list = [3]\ntau = 2\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.n_list, vec![3]);
        assert_eq!(cfg.tau, Param::Value(2.0));
        assert_eq!(cfg.grid, 64);
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let e = ExperimentConfig::from_toml("seed = 1\ngrid = \"big\"\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = ExperimentConfig::from_toml("seed = 1\n\nbogus = 3\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.contains("bogus"), "{e}");
    }

    #[test]
    fn validation_errors_carry_lines() {
        let e = ExperimentConfig::from_toml("seed = 1\nn_list = []\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let src = "seed = 1\n[[target]]\nmean = [0.5, 0.5]\ncov = [[0.01, 0.0], [0.0, 0.01]]\nweight = 0.9\n";
        let e = ExperimentConfig::from_toml(src).unwrap_err();
        assert_eq!(e.line, Some(5));
        assert!(e.message.contains("sum to 0.9"));
        let e = ExperimentConfig::from_toml("objective = \"fhn\"\n").unwrap_err();
        assert!(e.message.contains("lloyd"));
        assert_eq!(e.line, None);
    }

    #[test]
    fn rejects_bad_fields() {
        for src in [
            "n_list = [0, 3]",
            "n_list = [3, 3]",
            "grid = 1",
            "domain_hi = [0.0, 1.0]",
            "tau = -1",
            "tau = \"soon\"",
            "alpha = -0.5",
            "step_tol = 0",
            "scheme = \"agent_prox\"\nobjective = \"fhn\"\nh = 0.6",
            "scheme = \"agent_prox\"\nobjective = \"fhn\"\ncost = \"linear\"",
            "scheme = \"agent_prox\"\nalpha = 1.0\ntau = 0.7",
            "[[target]]\nmean = [0.5, 0.5]\ncov = [[0.01, 0.02], [0.0, 0.01]]\nweight = 1.0",
            "[[target]]\nmean = [0.5, 0.5]\ncov = [[0.01, 0.0], [0.0, -0.01]]\nweight = 1.0",
        ] {
            assert!(ExperimentConfig::from_toml(src).is_err(), "{src}");
        }
        assert!(ExperimentConfig::from_toml("scheme = \"agent_prox\"\nalpha = 1.0\ntau = 0.6").is_ok());
    }

    #[test]
    fn auto_tau_per_scheme() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.resolved_tau(0.0), LLOYD_AUTO_TAU);
        cfg.scheme = SchemeName::AgentProx;
        assert_eq!(cfg.resolved_tau(0.0), 0.25);
        assert!((cfg.resolved_tau(6.0) - 0.1).abs() < 1e-15);
        cfg.scheme = SchemeName::Macro;
        assert_eq!(cfg.resolved_tau(3.0), MACRO_AUTO_TAU);
        cfg.tau = Param::Value(0.3);
        assert_eq!(cfg.resolved_tau(3.0), 0.3);
    }

    #[test]
    fn target_is_normalized_and_peaks_near_a_mode() {
        let cfg = ExperimentConfig {
            grid: 32,
            ..ExperimentConfig::default()
        };
        let t = cfg.target_density().unwrap();
        assert!((t.total() - 1.0).abs() < 1e-12);
        let p = t.domain().center(t.argmax());
        let near = cfg.target.iter().any(|c| Point2::new(c.mean[0], c.mean[1]).dist(p) < 0.1);
        assert!(near, "{p:?}");
    }

    #[test]
    fn component_pdf_integrates_to_its_weight() {
        let c = &ExperimentConfig::default().target[1];
        let d = Domain::new(Point2::new(-1.0, -1.0), Point2::new(2.0, 2.0), 300, 300).unwrap();
        let total: f64 = (0..d.num_cells()).map(|k| c.pdf(d.center(k)) * d.cell_area()).sum();
        assert!((total - c.weight).abs() < 1e-6, "{total}");
    }
}
