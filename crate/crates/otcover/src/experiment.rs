//! Per-N experiment runs and their artifacts.

use std::path::Path;

use otcover_core::descent::{centroid_gap, run, DescentTrace, State, Termination};
use otcover_core::domain::{histogram, sample, GridDensity, ParticleConfig};
use otcover_core::kernels::in_delta_set;
use otcover_core::objectives::{estimate_smoothness, Objective, ObjectiveSpec, PairSampler};
use otcover_core::{Error, Point2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ObjectiveName, SchemeName};
use crate::error::{HarnessError, Result};
use crate::io;

/// Seed of the run with `n` agents, mixed so neighbouring `n` get unrelated streams.
pub fn run_seed(seed: u64, n: usize) -> u64 {
    let mut z = seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub n: usize,
    pub seed: u64,
    pub tau: f64,
    /// Smoothness constant behind the strict guard, when one was used.
    pub alpha: Option<f64>,
    pub steps: usize,
    pub terminated: String,
    pub initial: f64,
    pub steady_state: f64,
    /// Steps whose objective rose by more than `1e-9`.
    pub increases: usize,
    pub fallback_steps: usize,
    /// Largest distance from an agent to its capacity-constrained centroid.
    pub centroid_gap: Option<f64>,
    pub capacity_residual: Option<f64>,
    /// Separation threshold `2h` of the kernel objective.
    pub delta: Option<f64>,
    pub in_delta_set: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scheme: SchemeName,
    pub objective: ObjectiveName,
    pub grid: usize,
    pub seed: u64,
    /// `N -> steady-state objective`, in `n_list` order.
    #[serde(with = "ordered_map")]
    pub steady_state: Vec<(usize, f64)>,
    pub runs: Vec<RunReport>,
}

mod ordered_map {
    use std::fmt;

    use serde::de::{MapAccess, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[(usize, f64)], s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(v.iter().map(|(n, x)| (n.to_string(), x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(usize, f64)>, D::Error> {
        struct Pairs;
        impl<'de> Visitor<'de> for Pairs {
            type Value = Vec<(usize, f64)>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from agent count to value")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = m.next_entry::<String, f64>()? {
                    out.push((k.parse().map_err(serde::de::Error::custom)?, v));
                }
                Ok(out)
            }
        }
        d.deserialize_map(Pairs)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub trace: DescentTrace,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub target: GridDensity,
    pub runs: Vec<RunOutput>,
}

impl Experiment {
    pub fn summary(&self) -> Summary {
        Summary {
            scheme: self.config.scheme,
            objective: self.config.objective,
            grid: self.config.grid,
            seed: self.config.seed,
            steady_state: self.runs.iter().map(|r| (r.report.n, r.report.steady_state)).collect(),
            runs: self.runs.iter().map(|r| r.report.clone()).collect(),
        }
    }
}

/// Runs every `N` of the config on the current rayon pool; results keep `n_list` order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate().map_err(|(_, msg)| crate::error::ConfigError::new(None, msg))?;
    let target = cfg.target_density()?;
    let spec = cfg.objective_spec(target.clone())?;
    let runs = cfg
        .n_list
        .par_iter()
        .map(|&n| run_one(cfg, &spec, n).map_err(|source| HarnessError::Solver { n, source }))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Experiment {
        config: cfg.clone(),
        target,
        runs,
    })
}

/// [`run_experiment`] on a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<Experiment> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| run_experiment(cfg))
}

fn run_one(cfg: &ExperimentConfig, spec: &ObjectiveSpec, n: usize) -> Result<RunOutput, Error> {
    let seed = run_seed(cfg.seed, n);
    let domain = *spec.domain();
    let agents = sample(&GridDensity::uniform(domain), n, seed)?;
    let alpha = if cfg.uses_alpha() {
        Some(match cfg.alpha.value() {
            Some(a) => a,
            None => {
                let (lo, hi) = match spec.shrunken_domain() {
                    Some(s) => (s.lo(), s.hi()),
                    None => (domain.lo(), domain.hi()),
                };
                let mut pairs = PairSampler::new(lo, hi, n, cfg.smoothness_radius, seed);
                estimate_smoothness(spec, || pairs.sample(), cfg.smoothness_trials)?
            }
        })
    } else {
        None
    };
    let dcfg = cfg.descent_config(alpha.unwrap_or(0.0), seed)?;
    let init = match cfg.scheme {
        SchemeName::Macro => State::Grid(histogram(&agents, &domain)?),
        _ => State::Particles(agents.positions().iter().map(|&p| spec.project(p)).collect()),
    };
    let trace = run(cfg.scheme.scheme(), &init, spec, &dcfg)?;

    let mut report = RunReport {
        n,
        seed,
        tau: dcfg.tau(),
        alpha,
        steps: trace.steps.len() - 1,
        terminated: match trace.terminated {
            Termination::Converged => "converged",
            Termination::MaxSteps => "max_steps",
            Termination::GuardTriggered => "guard_triggered",
        }
        .to_string(),
        initial: trace.steps[0].value,
        steady_state: trace.last().value,
        increases: trace.increases(1e-9),
        fallback_steps: trace.steps.iter().filter(|s| s.fallback).count(),
        centroid_gap: None,
        capacity_residual: None,
        delta: None,
        in_delta_set: None,
    };
    if let Some(x) = trace.final_positions() {
        let config = ParticleConfig::new(x.to_vec(), &domain)?;
        match cfg.objective {
            ObjectiveName::Hbar => {
                let (gap, weights) = centroid_gap(&config, spec)?;
                report.centroid_gap = Some(gap);
                report.capacity_residual = Some(weights.max_residual());
            }
            ObjectiveName::Fhn => {
                report.delta = Some(2.0 * cfg.h);
                report.in_delta_set = Some(in_delta_set(&config, &domain, 2.0 * cfg.h));
            }
            ObjectiveName::Hf => {}
        }
    }
    Ok(RunOutput { report, trace })
}

pub fn trace_path(dir: &Path, n: usize) -> std::path::PathBuf {
    dir.join(format!("trace_N{n}.csv"))
}

pub fn positions_path(dir: &Path, n: usize) -> std::path::PathBuf {
    dir.join(format!("positions_N{n}.csv"))
}

pub fn density_path(dir: &Path, n: usize) -> std::path::PathBuf {
    dir.join(format!("density_N{n}.csv"))
}

/// Writes `target.csv`, `config.toml`, `summary.json` and per-N traces,
/// trajectories, and final positions (or final densities for the macroscopic
/// scheme) into `dir`.
pub fn write_artifacts(exp: &Experiment, dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    io::write_csv(&dir.join("target.csv"), &io::density_rows(&exp.target))?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, exp.config.to_toml()).map_err(|e| HarnessError::io(&cfg_path, e))?;
    for r in &exp.runs {
        let n = r.report.n;
        io::write_csv(&trace_path(dir, n), &io::trace_rows(&r.trace))?;
        match &r.trace.last().state {
            State::Particles(x) => {
                io::write_csv(&positions_path(dir, n), &io::position_rows(x))?;
                io::write_csv(&dir.join(format!("trajectory_N{n}.csv")), &io::trajectory_rows(&r.trace))?;
            }
            State::Grid(g) => io::write_csv(&density_path(dir, n), &io::density_rows(g))?,
        }
    }
    let summary = exp.summary();
    io::write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Agent positions drawn the way [`run_experiment`] initializes a run.
pub fn initial_positions(cfg: &ExperimentConfig, n: usize) -> Result<Vec<Point2>> {
    let d = cfg.domain()?;
    Ok(sample(&GridDensity::uniform(d), n, run_seed(cfg.seed, n))?.into_positions())
}
