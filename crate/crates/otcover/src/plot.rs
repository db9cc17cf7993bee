//! Figures from a run directory: a final-state picture per N over the
//! grayscale target and one objective-versus-step chart for all N.
//!
//! `curves.csv` carries the plotted series and is always written; PNGs need
//! the `plot` feature.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::experiment::{density_path, positions_path, trace_path, Summary};
use crate::io::{self, CurveRow, DensityRow, PositionRow, TraceRow};

/// Line colors, cycled over the runs in summary order.
pub const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

#[derive(Clone, Debug, PartialEq)]
pub struct PlotOutput {
    pub curve_csv: PathBuf,
    pub images: Vec<PathBuf>,
}

/// Final state of one run.
#[derive(Clone, Debug, PartialEq)]
pub enum Final {
    Agents(Vec<PositionRow>),
    Density(Vec<DensityRow>),
}

pub fn plot(run_dir: &Path) -> Result<PlotOutput> {
    let summary: Summary = io::read_json(&run_dir.join("summary.json"))?;
    let target: Vec<DensityRow> = io::read_csv(&run_dir.join("target.csv"))?;
    let mut curves = Vec::new();
    let mut finals = Vec::new();
    for &(n, _) in &summary.steady_state {
        let trace: Vec<TraceRow> = io::read_csv(&trace_path(run_dir, n))?;
        curves.extend(trace.iter().map(|r| CurveRow {
            n,
            step: r.step,
            value: r.value,
        }));
        let pos = positions_path(run_dir, n);
        finals.push(if pos.is_file() {
            Final::Agents(io::read_csv(&pos)?)
        } else {
            Final::Density(io::read_csv(&density_path(run_dir, n))?)
        });
    }
    let curve_csv = run_dir.join("curves.csv");
    io::write_csv(&curve_csv, &curves)?;
    let ns: Vec<usize> = summary.steady_state.iter().map(|p| p.0).collect();
    let images = render(run_dir, &target, &ns, &finals, &curves)?;
    Ok(PlotOutput { curve_csv, images })
}

#[cfg(not(feature = "plot"))]
fn render(_: &Path, _: &[DensityRow], _: &[usize], _: &[Final], _: &[CurveRow]) -> Result<Vec<PathBuf>> {
    Ok(Vec::new())
}

#[cfg(feature = "plot")]
fn render(dir: &Path, target: &[DensityRow], ns: &[usize], finals: &[Final], curves: &[CurveRow]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (&n, fin) in ns.iter().zip(finals) {
        let (img, path) = match fin {
            Final::Agents(p) => (raster::scatter(target, p), dir.join(format!("scatter_N{n}.png"))),
            Final::Density(g) => (raster::density(g), dir.join(format!("density_N{n}.png"))),
        };
        raster::save(&img, &path)?;
        out.push(path);
    }
    let path = dir.join("curves.png");
    raster::save(&raster::curves(ns, curves), &path)?;
    out.push(path);
    Ok(out)
}

#[cfg(feature = "plot")]
mod raster {
    use std::path::Path;

    use image::{Rgb, RgbImage};

    use super::PALETTE;
    use crate::error::{HarnessError, Result};
    use crate::io::{CurveRow, DensityRow, PositionRow};

    const SIDE_PX: u32 = 512;
    const W: u32 = 720;
    const H: u32 = 440;
    const MARGIN: u32 = 40;

    pub fn save(img: &RgbImage, path: &Path) -> Result<()> {
        img.save(path).map_err(|source| HarnessError::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    fn grid_side(rows: &[DensityRow]) -> (u32, u32) {
        let nx = rows.iter().map(|r| r.ix).max().unwrap_or(0) as u32 + 1;
        let ny = rows.iter().map(|r| r.iy).max().unwrap_or(0) as u32 + 1;
        (nx, ny)
    }

    /// Dark cells carry more mass.
    pub fn density(rows: &[DensityRow]) -> RgbImage {
        let (nx, ny) = grid_side(rows);
        let s = (SIDE_PX / nx.max(ny)).max(1);
        let peak = rows.iter().map(|r| r.mass).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
        let mut img = RgbImage::new(nx * s, ny * s);
        for r in rows {
            let v = (255.0 * (1.0 - r.mass / peak)).round().clamp(0.0, 255.0) as u8;
            let (x0, y0) = (r.ix as u32 * s, (ny - 1 - r.iy as u32) * s);
            for dy in 0..s {
                for dx in 0..s {
                    img.put_pixel(x0 + dx, y0 + dy, Rgb([v, v, v]));
                }
            }
        }
        img
    }

    pub fn scatter(target: &[DensityRow], agents: &[PositionRow]) -> RgbImage {
        let mut img = density(target);
        let (nx, ny) = grid_side(target);
        // cell centers give the extent of the domain
        let first = &target[0];
        let last = target.iter().max_by_key(|r| (r.iy, r.ix)).expect("non-empty target");
        let cw = if nx > 1 { (last.x - first.x) / (nx - 1) as f64 } else { 1.0 };
        let ch = if ny > 1 { (last.y - first.y) / (ny - 1) as f64 } else { 1.0 };
        let (lx, ly) = (first.x - 0.5 * cw, first.y - 0.5 * ch);
        let (w, h) = (img.width() as f64, img.height() as f64);
        for a in agents {
            let px = (a.x - lx) / (cw * nx as f64) * w;
            let py = h - (a.y - ly) / (ch * ny as f64) * h;
            disk(&mut img, px, py, 3.5, Rgb([220, 30, 30]));
        }
        img
    }

    fn disk(img: &mut RgbImage, cx: f64, cy: f64, r: f64, c: Rgb<u8>) {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let ri = r.ceil() as i64;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                let (x, y) = (cx.floor() as i64 + dx, cy.floor() as i64 + dy);
                if x >= 0 && y >= 0 && x < w && y < h && ((dx * dx + dy * dy) as f64) <= r * r {
                    img.put_pixel(x as u32, y as u32, c);
                }
            }
        }
    }

    fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            if x >= 0.0 && y >= 0.0 && x < img.width() as f64 && y < img.height() as f64 {
                img.put_pixel(x as u32, y as u32, c);
            }
        }
    }

    /// Objective against step, log-scaled when every value is positive.
    pub fn curves(ns: &[usize], rows: &[CurveRow]) -> RgbImage {
        let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
        let axis = Rgb([0, 0, 0]);
        let (left, right, top, bottom) = (MARGIN as f64, (W - MARGIN) as f64, MARGIN as f64, (H - MARGIN) as f64);
        line(&mut img, (left, bottom), (right, bottom), axis);
        line(&mut img, (left, top), (left, bottom), axis);
        if rows.is_empty() {
            return img;
        }
        let log = rows.iter().all(|r| r.value > 0.0);
        let f = |v: f64| if log { v.log10() } else { v };
        let (mut lo, mut hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
            (a.min(f(r.value)), b.max(f(r.value)))
        });
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let max_step = rows.iter().map(|r| r.step).max().unwrap_or(0).max(1) as f64;
        let to_px = |r: &CurveRow| {
            (
                left + r.step as f64 / max_step * (right - left),
                bottom - (f(r.value) - lo) / (hi - lo) * (bottom - top),
            )
        };
        for (k, &n) in ns.iter().enumerate() {
            let c = Rgb(PALETTE[k % PALETTE.len()]);
            let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.n == n).map(to_px).collect();
            for w in pts.windows(2) {
                line(&mut img, w[0], w[1], c);
            }
            if let Some(&(x, y)) = pts.first() {
                disk(&mut img, x, y, 2.5, c);
            }
        }
        img
    }
}
