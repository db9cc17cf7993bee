//! Log-domain Sinkhorn iterations with epsilon scaling.
//!
//! Potentials follow the convention `pi_ij = a_i b_j exp((f_i + g_j - C_ij) / eps)`,
//! so both are soft c-transforms and stay finite on zero-mass points.

use alloc::vec;
use alloc::vec::Vec;

/// Parameters of the entropic solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornParams {
    /// Final regularization strength, in cost units.
    pub epsilon: f64,
    /// Total iteration budget over all scaling stages.
    pub max_iter: usize,
    /// Target L1 violation of the marginals.
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        SinkhornParams {
            epsilon: 1e-3,
            max_iter: 20_000,
            tol: 1e-9,
        }
    }
}

pub(crate) struct SinkhornOutcome {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub marginal_error: f64,
    pub converged: bool,
}

fn log_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        libm::log(x)
    } else {
        f64::NEG_INFINITY
    }
}

/// `log sum exp` over an iterator, `-inf` for an empty or all `-inf` input.
fn lse<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(values.map(|v| libm::exp(v - max)).sum::<f64>())
}

/// A cost structure that can apply the soft-min operators.
pub(crate) trait SoftMin {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn max_cost(&self) -> f64;
    /// `out_i = LSE_j (w_j - C_ij / eps)`.
    fn lse_rows(&self, w: &[f64], eps: f64, out: &mut [f64]);
    /// `out_j = LSE_i (w_i - C_ij / eps)`.
    fn lse_cols(&self, w: &[f64], eps: f64, out: &mut [f64]);
}

pub(crate) struct DenseCost<'a> {
    pub n: usize,
    pub m: usize,
    pub cost: &'a [f64],
}

impl SoftMin for DenseCost<'_> {
    fn rows(&self) -> usize {
        self.n
    }

    fn cols(&self) -> usize {
        self.m
    }

    fn max_cost(&self) -> f64 {
        self.cost.iter().fold(0.0f64, |a, &c| a.max(c))
    }

    fn lse_rows(&self, w: &[f64], eps: f64, out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.cost[i * self.m..(i + 1) * self.m];
            out[i] = lse(row.iter().zip(w).map(|(c, wj)| wj - c / eps));
        }
    }

    fn lse_cols(&self, w: &[f64], eps: f64, out: &mut [f64]) {
        for j in 0..self.m {
            out[j] = lse((0..self.n).map(|i| w[i] - self.cost[i * self.m + j] / eps));
        }
    }
}

/// Squared Euclidean cost between the cell centers of one regular grid;
/// the kernel factorizes over the axes, so each soft-min costs two 1-D passes.
pub(crate) struct SeparableGridCost<'a> {
    pub xs: &'a [f64],
    pub ys: &'a [f64],
}

impl SeparableGridCost<'_> {
    fn apply(&self, w: &[f64], eps: f64, out: &mut [f64]) {
        // the cost is symmetric, so rows and columns share one operator
        let (nx, ny) = (self.xs.len(), self.ys.len());
        let cx: Vec<f64> = (0..nx * nx)
            .map(|k| {
                let d = self.xs[k / nx] - self.xs[k % nx];
                d * d / eps
            })
            .collect();
        let cy: Vec<f64> = (0..ny * ny)
            .map(|k| {
                let d = self.ys[k / ny] - self.ys[k % ny];
                d * d / eps
            })
            .collect();
        // stage 1: a[jy][ix] = LSE_jx (w[jy][jx] - cx[ix][jx])
        let mut a = vec![0.0; nx * ny];
        for jy in 0..ny {
            let row = &w[jy * nx..(jy + 1) * nx];
            for ix in 0..nx {
                let c = &cx[ix * nx..(ix + 1) * nx];
                a[jy * nx + ix] = lse(row.iter().zip(c).map(|(v, c)| v - c));
            }
        }
        // stage 2: out[iy][ix] = LSE_jy (a[jy][ix] - cy[iy][jy])
        for iy in 0..ny {
            let c = &cy[iy * ny..(iy + 1) * ny];
            for ix in 0..nx {
                out[iy * nx + ix] = lse((0..ny).map(|jy| a[jy * nx + ix] - c[jy]));
            }
        }
    }
}

impl SoftMin for SeparableGridCost<'_> {
    fn rows(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    fn cols(&self) -> usize {
        self.rows()
    }

    fn max_cost(&self) -> f64 {
        let span = |v: &[f64]| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        let (sx, sy) = (span(self.xs), span(self.ys));
        sx * sx + sy * sy
    }

    fn lse_rows(&self, w: &[f64], eps: f64, out: &mut [f64]) {
        self.apply(w, eps, out)
    }

    fn lse_cols(&self, w: &[f64], eps: f64, out: &mut [f64]) {
        self.apply(w, eps, out)
    }
}

pub(crate) fn solve<C: SoftMin>(a: &[f64], b: &[f64], cost: &C, params: &SinkhornParams) -> SinkhornOutcome {
    let (n, m) = (cost.rows(), cost.cols());
    let log_a: Vec<f64> = a.iter().map(|&x| log_or_neg_inf(x)).collect();
    let log_b: Vec<f64> = b.iter().map(|&x| log_or_neg_inf(x)).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut wa = vec![0.0; n];
    let mut wb = vec![0.0; m];
    let mut buf_n = vec![0.0; n];
    let mut buf_m = vec![0.0; m];

    let target = params.epsilon;
    let mut eps = cost.max_cost().max(target);
    let mut iters = 0usize;
    let mut err;
    loop {
        let last_stage = eps <= target;
        let stage_tol = if last_stage { params.tol } else { params.tol.max(1e-3) };
        let mut stage_iters = 0;
        loop {
            // g update from f
            for i in 0..n {
                wa[i] = log_a[i] + f[i] / eps;
            }
            cost.lse_cols(&wa, eps, &mut buf_m);
            // column marginals before the update measure the violation
            err = 0.0;
            for j in 0..m {
                let col = if log_b[j].is_finite() {
                    libm::exp(log_b[j] + g[j] / eps + buf_m[j])
                } else {
                    0.0
                };
                err += (col - b[j]).abs();
                g[j] = -eps * buf_m[j];
            }
            for j in 0..m {
                wb[j] = log_b[j] + g[j] / eps;
            }
            cost.lse_rows(&wb, eps, &mut buf_n);
            for i in 0..n {
                f[i] = -eps * buf_n[i];
            }
            iters += 1;
            stage_iters += 1;
            if err <= stage_tol || iters >= params.max_iter || (!last_stage && stage_iters >= 200) {
                break;
            }
        }
        if last_stage || iters >= params.max_iter {
            break;
        }
        eps = (eps * 0.5).max(target);
    }
    SinkhornOutcome {
        f,
        g,
        marginal_error: err,
        converged: err <= params.tol,
    }
}
