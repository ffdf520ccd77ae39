//! Fractional calculus on `[0, 1]` and the compensated Poisson process as an
//! element of the Besov–Liouville space `I_{β,2}`.
//!
//! Grid functions live on [`TimeGrid`] nodes `k/n`, `k = 1..n`, and are read
//! as piecewise constant on the cells `((k−1)/n, k/n]`. Singular weights
//! `(s − r)^{β−1}` are integrated exactly against that basis.
//!
//! Norms in `I_{β,2}` are taken after applying `D^β`, so a covariance
//! operator is represented by the `L²([0,1]²)` kernel
//! `E[(D^β X)(r) (D^β X)(s)]`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::bounds::{contraction_bound_from, BoundReport};
use crate::chaos_algebra::{covariance, ChaosVector, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::measure_kernels::{contraction_norm_sq, Kernel, MeasureGrid};
use crate::poisson_mc::{smooth_distance_with, RngSpec, SmoothDistance};
use crate::quadrature::integrate;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub n: usize,
    pub nodes: Vec<f64>,
    pub quad_weights: Vec<f64>,
}

impl TimeGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one point".into()));
        }
        let h = 1.0 / n as f64;
        Ok(Self {
            n,
            nodes: (1..=n).map(|k| k as f64 * h).collect(),
            quad_weights: vec![h; n],
        })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Cell `k` is `(a, b]` with `b = nodes[k]`.
    pub fn cell(&self, k: usize) -> (f64, f64) {
        (k as f64 * self.h(), (k + 1) as f64 * self.h())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FracParams {
    pub beta: f64,
    pub lambda: f64,
}

impl FracParams {
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 0.5) {
            return Err(Error::InvalidArgument(format!("beta must lie in (0, 1/2), got {beta}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { beta, lambda })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

fn check_len(values: &[f64], grid: &TimeGrid) -> Result<()> {
    if values.len() != grid.n {
        return Err(Error::ShapeMismatch(format!("{} values on a grid of {}", values.len(), grid.n)));
    }
    Ok(())
}

/// `(I^β_{0+} f)(s) = Γ(β)^{-1} ∫_0^s (s−r)^{β−1} f(r) dr`, or the right-sided
/// `(I^β_{1−} f)(s) = Γ(β)^{-1} ∫_s^1 (r−s)^{β−1} f(r) dr`, at every node.
pub fn frac_integral(values: &[f64], grid: &TimeGrid, beta: f64, side: Side) -> Result<Vec<f64>> {
    check_len(values, grid)?;
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let g = gamma(beta + 1.0);
    let n = grid.n;
    let out = (0..n)
        .map(|k| {
            let s = grid.nodes[k];
            let range = match side {
                Side::Left => 0..k + 1,
                Side::Right => k + 1..n,
            };
            range
                .map(|j| {
                    let (a, b) = grid.cell(j);
                    let w = match side {
                        Side::Left => (s - a).powf(beta) - (s - b).max(0.0).powf(beta),
                        Side::Right => (b - s).powf(beta) - (a - s).max(0.0).powf(beta),
                    };
                    values[j] * w
                })
                .sum::<f64>()
                / g
        })
        .collect();
    Ok(out)
}

/// Riemann–Liouville derivative `D^β g` at the nodes, for `g` linear between
/// `(0, g0)` and the node values:
/// `D^β g(s) = g(0) s^{−β}/Γ(1−β) + Γ(1−β)^{-1} ∫_0^s (s−r)^{−β} g'(r) dr`.
pub fn frac_derivative(values: &[f64], g0: f64, grid: &TimeGrid, beta: f64) -> Result<Vec<f64>> {
    check_len(values, grid)?;
    let g1 = gamma(1.0 - beta);
    let g2 = gamma(2.0 - beta);
    let h = grid.h();
    let slopes: Vec<f64> = (0..grid.n)
        .map(|j| (values[j] - if j == 0 { g0 } else { values[j - 1] }) / h)
        .collect();
    Ok((0..grid.n)
        .map(|k| {
            let s = grid.nodes[k];
            let jump = g0 * s.powf(-beta) / g1;
            let body: f64 = (0..=k)
                .map(|j| {
                    let (a, b) = grid.cell(j);
                    slopes[j] * ((s - a).powf(1.0 - beta) - (s - b).max(0.0).powf(1.0 - beta))
                })
                .sum();
            jump + body / g2
        })
        .collect())
}

/// `(D^β 1_{[a,∞)})(r) = (r−a)₊^{−β} / Γ(1−β)` at the nodes, taken as 0 for `r ≤ a`.
pub fn frac_derivative_indicator(a: f64, beta: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidArgument(format!("jump location must lie in [0, 1], got {a}")));
    }
    let g = gamma(1.0 - beta);
    Ok(grid.nodes.iter().map(|&r| if r > a { (r - a).powf(-beta) / g } else { 0.0 }).collect())
}

/// `(D^β Id)(r) = r^{1−β} / ((1−β) Γ(1−β))`.
pub fn frac_derivative_identity(beta: f64, grid: &TimeGrid) -> Vec<f64> {
    let c = (1.0 - beta) * gamma(1.0 - beta);
    grid.nodes.iter().map(|&r| r.powf(1.0 - beta) / c).collect()
}

/// `∫_0^a u^{−β} (u + d)^{−β} du` for `d > 0`, after `v = u^{1−β}`.
fn bm_offdiag_integral(a: f64, d: f64, beta: f64) -> f64 {
    let e = 1.0 / (1.0 - beta);
    integrate(|v: f64| (v.powf(e) + d).powf(-beta), 0.0, a.powf(1.0 - beta), 1e-13) * e
}

/// `E[(D^β B)(r)(D^β B)(s)] = Γ(1−β)^{-2} ∫_0^{r∧s} (r−x)^{−β}(s−x)^{−β} dx`.
pub fn bm_cov_value(r: f64, s: f64, beta: f64) -> f64 {
    let g2 = gamma(1.0 - beta).powi(2);
    let (a, b) = if r <= s { (r, s) } else { (s, r) };
    if a <= 0.0 {
        return 0.0;
    }
    if b == a {
        return a.powf(1.0 - 2.0 * beta) / ((1.0 - 2.0 * beta) * g2);
    }
    bm_offdiag_integral(a, b - a, beta) / g2
}

/// Brownian covariance kernel on the node grid.
pub fn bm_cov_kernel(params: &FracParams, grid: &TimeGrid) -> DMatrix<f64> {
    let n = grid.n;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = bm_cov_value(grid.nodes[i], grid.nodes[j], params.beta);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Compensated Poisson covariance kernel: the Brownian kernel minus
/// `λ Γ(1−β)^{-2} (1−β)^{-2} (r − r∧s)^{1−β} (s − r∧s)^{1−β}`.
pub fn poisson_cov_kernel(params: &FracParams, grid: &TimeGrid) -> DMatrix<f64> {
    let c = params.lambda / (gamma(1.0 - params.beta).powi(2) * (1.0 - params.beta).powi(2));
    let e = 1.0 - params.beta;
    let mut m = bm_cov_kernel(params, grid);
    for i in 0..grid.n {
        for j in 0..grid.n {
            let (r, s) = (grid.nodes[i], grid.nodes[j]);
            let lo = r.min(s);
            m[(i, j)] -= c * (r - lo).powf(e) * (s - lo).powf(e);
        }
    }
    m
}

/// `L²([0,1]²)` distance between two node kernels.
pub fn hs_on_l2(a: &DMatrix<f64>, b: &DMatrix<f64>, grid: &TimeGrid) -> Result<f64> {
    if a.shape() != b.shape() || a.nrows() != grid.n {
        return Err(Error::ShapeMismatch("kernel matrices do not match the grid".into()));
    }
    let h = grid.h();
    Ok((a - b).iter().map(|v| v * v * h * h).sum::<f64>().sqrt())
}

/// `∫_0^1 (∫_x^1 (t−x)^{−2β} dt)² dx`: the inner integral by exact product
/// integration over `n` cells, the outer by the midpoint rule on the same cells.
pub fn contraction_triple_integral(beta: f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let e = 1.0 - 2.0 * beta;
    (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) * h;
            let inner: f64 = (0..n)
                .map(|j| {
                    let (a, b) = (j as f64 * h, (j + 1) as f64 * h);
                    if b <= x {
                        0.0
                    } else {
                        ((b - x).powf(e) - (a - x).max(0.0).powf(e)) / e
                    }
                })
                .sum();
            inner * inner * h
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub lambda: f64,
    /// `‖f ⋆⁰₁ f‖²`.
    pub norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionRate {
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log ‖f ⋆⁰₁ f‖²` against `log λ`.
    pub slope: f64,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `‖f ⋆⁰₁ f‖² = I(β) / (λ Γ(1−β)⁴)` for each `λ`, with `I(β)` from
/// [`contraction_triple_integral`] at resolution `n`.
pub fn besov_contraction_rate(beta: f64, lambdas: &[f64], n: usize) -> Result<ContractionRate> {
    FracParams::new(beta, 1.0)?;
    if lambdas.len() < 2 || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidArgument("need at least two positive intensities".into()));
    }
    let base = contraction_triple_integral(beta, n) / gamma(1.0 - beta).powi(4);
    let rows: Vec<RateRow> = lambdas.iter().map(|&lambda| RateRow { lambda, norm_sq: base / lambda }).collect();
    let slope = loglog_slope(lambdas, &rows.iter().map(|r| r.norm_sq).collect::<Vec<_>>());
    Ok(ContractionRate { rows, slope })
}

/// `h^{-1/2} ∫_{cell} (t − x)₊^{−β} dt / Γ(1−β)`: coordinate of
/// `D^β 1_{[x,1]}` along the normalised indicator of a time cell.
fn cell_coordinate(x: f64, a: f64, b: f64, beta: f64, h: f64, g1: f64) -> f64 {
    if b <= x {
        return 0.0;
    }
    let e = 1.0 - beta;
    ((b - x).powf(e) - (a - x).max(0.0).powf(e)) / (e * g1 * h.sqrt())
}

/// Order-one kernel of `X_λ = I₁(f)` on `n_jump` jump cells (weights `λ h`)
/// with `n_time` K-coordinates in the cell basis of `L²([0,1])`.
pub fn besov_kernel(params: &FracParams, n_time: usize, n_jump: usize) -> Result<Kernel> {
    if n_jump == 0 {
        return Err(Error::InvalidArgument("jump grid needs at least one cell".into()));
    }
    let tg = TimeGrid::new(n_time)?;
    let hx = 1.0 / n_jump as f64;
    let xs: Vec<f64> = (0..n_jump).map(|j| (j as f64 + 0.5) * hx).collect();
    let grid = Arc::new(MeasureGrid::with_coords(
        (0..n_jump).map(|j| format!("x{j}")).collect(),
        vec![params.lambda * hx; n_jump],
        Some(xs.iter().map(|&x| vec![x]).collect()),
    )?);
    let g1 = gamma(1.0 - params.beta);
    let scale = params.lambda.powf(-0.5);
    Kernel::from_fn(grid, 1, n_time, |atoms, k| {
        let (a, b) = tg.cell(k);
        scale * cell_coordinate(xs[atoms[0]], a, b, params.beta, tg.h(), g1)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BesovRow {
    pub lambda: f64,
    /// `‖f ⋆⁰₁ f‖²` from the discretised kernel.
    pub contraction_norm_sq: f64,
    /// `‖f ⋆⁰₁ f‖`.
    pub contraction_norm: f64,
    /// `½ ‖S_λ − S'‖` from the covariance kernels.
    pub covariance_term: f64,
    pub prefactor: f64,
    pub total_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BesovReport {
    pub beta: f64,
    pub n_time: usize,
    pub n_jump: usize,
    pub rows: Vec<BesovRow>,
    /// Slope of `log ‖f ⋆⁰₁ f‖²` against `log λ`.
    pub norm_sq_slope: f64,
    /// Slope of `log(total bound)` against `log λ`.
    pub bound_slope: f64,
}

/// Contraction bound for `X_λ` at one intensity.
pub fn besov_bound(params: &FracParams, n_time: usize, n_jump: usize) -> Result<(BoundReport, BesovRow)> {
    let f = besov_kernel(params, n_time, n_jump)?;
    let x = ChaosVector::new(vec![f])?;
    let tg = TimeGrid::new(n_time)?;
    let hs = hs_on_l2(&poisson_cov_kernel(params, &tg), &bm_cov_kernel(params, &tg), &tg)?;
    let report = contraction_bound_from(&x, hs)?;
    let norm_sq = contraction_norm_sq(x.kernel(1).unwrap(), x.kernel(1).unwrap(), 1, 0)?;
    let row = BesovRow {
        lambda: params.lambda,
        contraction_norm_sq: norm_sq,
        contraction_norm: norm_sq.sqrt(),
        covariance_term: report.covariance_term,
        prefactor: report.contraction_prefactor.unwrap(),
        total_bound: report.contraction_total().unwrap(),
    };
    Ok((report, row))
}

pub fn besov_pipeline(beta: f64, lambdas: &[f64], n_time: usize, n_jump: usize) -> Result<BesovReport> {
    if lambdas.len() < 2 {
        return Err(Error::InvalidArgument("need at least two intensities".into()));
    }
    let rows = lambdas
        .iter()
        .map(|&l| Ok(besov_bound(&FracParams::new(beta, l)?, n_time, n_jump)?.1))
        .collect::<Result<Vec<_>>>()?;
    let norm_sq_slope = loglog_slope(lambdas, &rows.iter().map(|r| r.contraction_norm_sq).collect::<Vec<_>>());
    let bound_slope = loglog_slope(lambdas, &rows.iter().map(|r| r.total_bound).collect::<Vec<_>>());
    Ok(BesovReport { beta, n_time, n_jump, rows, norm_sq_slope, bound_slope })
}

/// Smooth-distance surrogate between `X_λ` (simulated from its jump times)
/// and the Gaussian with the covariance of the discretised kernel.
pub fn besov_smooth_distance(
    params: &FracParams,
    n_time: usize,
    n_jump: usize,
    dictionary_size: usize,
    reps: usize,
    spec: RngSpec,
) -> Result<SmoothDistance> {
    let f = besov_kernel(params, n_time, n_jump)?;
    let cov: CovarianceMatrix = covariance(&ChaosVector::new(vec![f])?);
    let tg = TimeGrid::new(n_time)?;
    let (beta, lambda) = (params.beta, params.lambda);
    let g1 = gamma(1.0 - beta);
    let scale = lambda.powf(-0.5);
    let h = tg.h();
    let compensator: Vec<f64> = (0..n_time)
        .map(|k| {
            let (a, b) = tg.cell(k);
            lambda * (b.powf(2.0 - beta) - a.powf(2.0 - beta)) / ((1.0 - beta) * (2.0 - beta) * g1 * h.sqrt())
        })
        .collect();
    let count = Poisson::new(lambda).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    smooth_distance_with(
        n_time,
        |rng, out| {
            let n = count.sample(rng) as usize;
            out.iter_mut().zip(&compensator).for_each(|(o, c)| *o = -c);
            for _ in 0..n {
                let t: f64 = rng.random();
                let first = ((t / h) as usize).min(n_time - 1);
                for (k, o) in out.iter_mut().enumerate().skip(first) {
                    let (a, b) = tg.cell(k);
                    *o += cell_coordinate(t, a, b, beta, h, g1);
                }
            }
            out.iter_mut().for_each(|o| *o *= scale);
        },
        &cov,
        dictionary_size,
        reps,
        spec,
    )
}
