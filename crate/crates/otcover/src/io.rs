//! CSV and JSON artifacts. Every CSV is UTF-8 with a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use otcover_core::descent::{DescentTrace, State};
use otcover_core::domain::GridDensity;
use otcover_core::Point2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub value: f64,
    pub step_norm: f64,
    pub tau: f64,
    pub inner_iters: usize,
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionRow {
    pub agent: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub agent: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub cell: usize,
    pub ix: usize,
    pub iy: usize,
    pub x: f64,
    pub y: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    pub step: usize,
    pub value: f64,
}

pub fn trace_rows(trace: &DescentTrace) -> Vec<TraceRow> {
    trace
        .steps
        .iter()
        .enumerate()
        .map(|(step, s)| TraceRow {
            step,
            value: s.value,
            step_norm: s.step_norm,
            tau: s.tau,
            inner_iters: s.inner_iters,
            fallback: s.fallback,
        })
        .collect()
}

pub fn position_rows(points: &[Point2]) -> Vec<PositionRow> {
    points
        .iter()
        .enumerate()
        .map(|(agent, p)| PositionRow { agent, x: p.x, y: p.y })
        .collect()
}

pub fn trajectory_rows(trace: &DescentTrace) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (step, s) in trace.steps.iter().enumerate() {
        if let State::Particles(p) = &s.state {
            rows.extend(p.iter().enumerate().map(|(agent, q)| TrajectoryRow {
                step,
                agent,
                x: q.x,
                y: q.y,
            }));
        }
    }
    rows
}

pub fn density_rows(g: &GridDensity) -> Vec<DensityRow> {
    let d = g.domain();
    g.mass()
        .iter()
        .enumerate()
        .map(|(cell, &mass)| {
            let (ix, iy) = d.coords(cell);
            let c = d.center(cell);
            DensityRow {
                cell,
                ix,
                iy,
                x: c.x,
                y: c.y,
                mass,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.is_file() {
        return Err(HarnessError::MissingArtifacts(path.to_path_buf()));
    }
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let src = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => HarnessError::MissingArtifacts(path.to_path_buf()),
        _ => HarnessError::io(path, e),
    })?;
    serde_json::from_str(&src).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })
}
