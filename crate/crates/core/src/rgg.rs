//! Edge counts of a random geometric graph over growing windows.
//!
//! Points form a Poisson process of intensity `λ` on the box
//! `W = [−a, a]^d`. At time `t` the window is `W_t = t^{1/(2d)} W` and the
//! connection radius is `r_t = t^{1/(2d)} r_λ`, so that `ℓ(W_t) = √t ℓ(W)`.
//! `F(t)` counts ordered pairs `x ≠ y` in `W_t` with `|x − y| < r_t`.
//!
//! The chaos kernels are `f₁(t)(x) = 2λ ℓ(B(x, r_t) ∩ W_t) 1_{W_t}(x)` and
//! `f₂(t)(x, y) = 1{x, y ∈ W_t, |x − y| < r_t}`. They are projected onto
//! uniform cells (cell averages), exactly in `d = 1` and by sub-point
//! quadrature in `d = 2`. In `d = 1` the order-two kernel is stored as a band
//! matrix, which keeps `λ` in the thousands tractable.
//!
//! Time enters as the K-index: with time grid `t_1 < … < t_M` and weights
//! `ω_k = t_k − t_{k−1}`, the K-coordinates of `F̄` are `√ω_k F̄(t_k)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::besov::loglog_slope;
use crate::bounds::{contraction_bound_from, hs_diff, BoundReport, ContractionNorms};
use crate::chaos_algebra::{ChaosVector, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::measure_kernels::{Kernel, MeasureGrid};
use crate::poisson_mc::{run_replications, Estimate, RngSpec};
use crate::quadrature::integrate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    R1,
    R2,
    R3,
}

/// How the connection radius depends on `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum RadiusRule {
    /// `r_λ = radius`.
    Constant { radius: f64 },
    /// `r_λ` chosen so that `λ ψ_{λ,1} = target`.
    LambdaPsi { target: f64 },
    /// `r_λ = c λ^{−γ}`.
    Power { c: f64, gamma: f64 },
}

impl RadiusRule {
    pub fn regime(&self) -> Regime {
        match self {
            RadiusRule::Constant { .. } => Regime::R1,
            RadiusRule::LambdaPsi { .. } => Regime::R2,
            RadiusRule::Power { .. } => Regime::R3,
        }
    }

    pub fn radius(&self, lambda: f64, d: usize) -> f64 {
        match *self {
            RadiusRule::Constant { radius } => radius,
            RadiusRule::LambdaPsi { target } => {
                if d == 1 {
                    target / (2.0 * lambda)
                } else {
                    (target / (PI * lambda)).sqrt()
                }
            }
            RadiusRule::Power { c, gamma } => c * lambda.powf(-gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RggConfig {
    pub d: usize,
    pub lambda: f64,
    /// Half-width `a` of `W = [−a, a]^d`.
    pub half_width: f64,
    pub radius: RadiusRule,
    pub time_grid: Vec<f64>,
}

impl RggConfig {
    pub fn new(d: usize, lambda: f64, half_width: f64, radius: RadiusRule, time_grid: Vec<f64>) -> Result<Self> {
        let cfg = Self { d, lambda, half_width, radius, time_grid };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `d = 1`, `W = [−1, 1]`, `λψ = 1`, times `0.2, 0.4, …, 1.0`.
    pub fn regime2_fixture(lambda: f64) -> Result<Self> {
        Self::new(1, lambda, 1.0, RadiusRule::LambdaPsi { target: 1.0 }, vec![0.2, 0.4, 0.6, 0.8, 1.0])
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.d, lambda, self.half_width, self.radius, self.time_grid.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.d == 1 || self.d == 2) {
            return bad(format!("dimension must be 1 or 2, got {}", self.d));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("intensity must be positive, got {}", self.lambda));
        }
        if !(self.half_width > 0.0) {
            return bad(format!("half-width must be positive, got {}", self.half_width));
        }
        if self.time_grid.is_empty() || self.time_grid.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return bad("time grid values must lie in (0, 1]".into());
        }
        if self.time_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("time grid must be strictly increasing".into());
        }
        let r = self.radius();
        if !(r > 0.0 && r.is_finite()) {
            return bad(format!("connection radius must be positive, got {r}"));
        }
        if r > 2.0 * self.half_width {
            return bad("connection radius exceeds the window diameter".into());
        }
        if let RadiusRule::Power { gamma, .. } = self.radius {
            let (lo, hi) = if self.d == 1 { (1.0, 2.0) } else { (0.5, 1.0) };
            if !(gamma > lo && gamma < hi) {
                return bad(format!("power-law exponent must lie in ({lo}, {hi}) for d = {}", self.d));
            }
        }
        Ok(())
    }

    pub fn regime(&self) -> Regime {
        self.radius.regime()
    }

    pub fn radius(&self) -> f64 {
        self.radius.radius(self.lambda, self.d)
    }

    fn scale(&self, t: f64) -> f64 {
        t.powf(1.0 / (2.0 * self.d as f64))
    }

    pub fn half_width_at(&self, t: f64) -> f64 {
        self.half_width * self.scale(t)
    }

    pub fn radius_at(&self, t: f64) -> f64 {
        self.radius() * self.scale(t)
    }

    /// Quadrature weights `ω_k = t_k − t_{k−1}` with `t_0 = 0`.
    pub fn time_weights(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.time_grid
            .iter()
            .map(|&t| {
                let w = t - prev;
                prev = t;
                w
            })
            .collect()
    }
}

/// `ℓ(B(0, r) ∩ [−2a, 2a]^d)`.
pub fn psi(d: usize, r: f64, a: f64) -> f64 {
    let l = 2.0 * a;
    if d == 1 {
        return 2.0 * r.min(l);
    }
    if r <= l {
        return PI * r * r;
    }
    4.0 * integrate(|x: f64| (r * r - x * x).max(0.0).sqrt().min(l), 0.0, r.min(l), 1e-13)
}

/// `ℓ{(x, y) ∈ [0, L]^d × [0, L]^d : |x − y| < r}`.
pub fn pair_area(d: usize, l: f64, r: f64) -> f64 {
    if d == 1 {
        let r = r.min(l);
        return 2.0 * l * r - r * r;
    }
    if r <= l {
        return PI * l * l * r * r - 8.0 / 3.0 * l * r.powi(3) + 0.5 * r.powi(4);
    }
    // ∫_{|z|<r} Π_k (L − |z_k|)₊ dz over the positive quadrant, times 4
    4.0 * integrate(
        |z1: f64| {
            let top = (r * r - z1 * z1).max(0.0).sqrt().min(l);
            (l - z1) * (l * top - 0.5 * top * top)
        },
        0.0,
        l.min(r),
        1e-13,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeStats {
    pub ell1: f64,
    pub psi1: f64,
    /// `4 ℓ₁ λ³ ψ₁² + ℓ₁ λ² ψ₁`.
    pub sigma_sq: f64,
    /// `4 ℓ₁ λ³ ψ₁² + 2 ℓ₁ λ² ψ₁`, the boundary-free isometry variance of `F(1)`.
    pub sigma_sq_isometry: f64,
    pub lambda_psi: f64,
    pub regime: Regime,
}

impl RegimeStats {
    pub fn new(cfg: &RggConfig) -> Self {
        let ell1 = (2.0 * cfg.half_width).powi(cfg.d as i32);
        let psi1 = psi(cfg.d, cfg.radius(), cfg.half_width);
        let l = cfg.lambda;
        Self {
            ell1,
            psi1,
            sigma_sq: 4.0 * ell1 * l.powi(3) * psi1 * psi1 + ell1 * l * l * psi1,
            sigma_sq_isometry: 4.0 * ell1 * l.powi(3) * psi1 * psi1 + 2.0 * ell1 * l * l * psi1,
            lambda_psi: l * psi1,
            regime: cfg.regime(),
        }
    }

    /// `ℓ_t = √t ℓ₁`.
    pub fn ell(&self, t: f64) -> f64 {
        t.sqrt() * self.ell1
    }

    /// `ψ_{λ,t} = √t ψ_{λ,1}`.
    pub fn psi(&self, t: f64) -> f64 {
        t.sqrt() * self.psi1
    }
}

/// `E F(t) = λ² ℓ{(x, y) ∈ W_t² : |x − y| < r_t}`, boundary included.
pub fn exact_mean(cfg: &RggConfig, t: f64) -> f64 {
    cfg.lambda.powi(2) * pair_area(cfg.d, 2.0 * cfg.half_width_at(t), cfg.radius_at(t))
}

/// `∫_{W_t} ℓ(B(x, r_t) ∩ W_t) ℓ(B(x, r_s) ∩ W_s) dx` in `d = 1`, with `t ≤ s`.
fn overlap_product_1d(cfg: &RggConfig, t: f64, s: f64) -> f64 {
    let (at, as_) = (cfg.half_width_at(t), cfg.half_width_at(s));
    let (rt, rs) = (cfg.radius_at(t), cfg.radius_at(s));
    let len = |x: f64, r: f64, a: f64| ((x + r).min(a) - (x - r).max(-a)).max(0.0);
    let mut breaks = vec![-at, at, -at + rt, at - rt, -as_ + rs, as_ - rs];
    breaks.retain(|b| b.abs() <= at);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks
        .windows(2)
        .map(|w| integrate(|x| len(x, rt, at) * len(x, rs, as_), w[0], w[1], 1e-14))
        .sum()
}

/// `Cov(F(t), F(s)) = ⟨f₁(t), f₁(s)⟩ + 2 ⟨f₂(t), f₂(s)⟩` in `d = 1`.
pub fn exact_covariance_1d(cfg: &RggConfig, t: f64, s: f64) -> Result<f64> {
    if cfg.d != 1 {
        return Err(Error::InvalidArgument("closed-form covariance is available for d = 1 only".into()));
    }
    let (t, s) = (t.min(s), t.max(s));
    let l = cfg.lambda;
    let first = l * 4.0 * l * l * overlap_product_1d(cfg, t, s);
    let second = 2.0 * l * l * pair_area(1, 2.0 * cfg.half_width_at(t), cfg.radius_at(t));
    Ok(first + second)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeCovariance {
    /// Limit covariance `φ(t, s)` of the regime.
    pub limit: f64,
    /// `(4 √(ts(t∧s)) λψ + t∧s) / (4λψ + 1)`.
    pub finite: f64,
}

pub fn regime_covariance(t: f64, s: f64, lambda_psi: f64, regime: Regime) -> Result<RegimeCovariance> {
    if !(t > 0.0 && t <= 1.0 && s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidArgument("times must lie in (0, 1]".into()));
    }
    let m = t.min(s);
    let root = (t * s * m).sqrt();
    let limit = match regime {
        Regime::R1 => root,
        Regime::R2 => (4.0 * root + m) / 5.0,
        Regime::R3 => m,
    };
    let finite = (4.0 * root * lambda_psi + m) / (4.0 * lambda_psi + 1.0);
    Ok(RegimeCovariance { limit, finite })
}

/// `ℓ{(x, y) ∈ [i0, i1] × [j0, j1] : |x − y| < r}`.
pub fn band_area(i: (f64, f64), j: (f64, f64), r: f64) -> f64 {
    if i.1 <= i.0 || j.1 <= j.0 {
        return 0.0;
    }
    let below = |c: f64| {
        // ∫_{i0}^{i1} ℓ{y ∈ [j0, j1] : y > x − c} dx
        let (p1, p2) = (j.0 + c, j.1 + c);
        let full = (i.1.min(p1) - i.0).max(0.0) * (j.1 - j.0);
        let lo = i.0.max(p1);
        let hi = i.1.min(p2);
        let ramp = if hi > lo { (j.1 + c) * (hi - lo) - 0.5 * (hi * hi - lo * lo) } else { 0.0 };
        full + ramp
    };
    (below(r) - below(-r)).max(0.0)
}

fn intersect(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0.max(b.0), a.1.min(b.1))
}

/// Scaled kernels `g_{q,k} = √ω_k f_q(t_k) / σ` on uniform cells in `d = 1`,
/// with the order-two kernel stored as a band.
#[derive(Debug, Clone)]
pub struct BandKernels {
    pub n: usize,
    pub h: f64,
    /// Atom weight `λ h`.
    pub weight: f64,
    pub bandwidth: usize,
    pub times: Vec<f64>,
    /// `g₁` per time, length `n`.
    pub f1: Vec<Vec<f64>>,
    /// `g₂` per time, row `i` holds columns `i − bw ..= i + bw`.
    pub f2: Vec<Vec<f64>>,
}

impl BandKernels {
    fn width(&self) -> usize {
        2 * self.bandwidth + 1
    }

    pub fn f2_get(&self, k: usize, i: usize, j: usize) -> f64 {
        let bw = self.bandwidth;
        if i.abs_diff(j) > bw {
            return 0.0;
        }
        self.f2[k][i * self.width() + (j + bw - i)]
    }

    /// Columns `j` with `|i − j| ≤ bw` inside the grid.
    fn cols(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.bandwidth)..(i + self.bandwidth + 1).min(self.n)
    }

    fn row(&self, k: usize, i: usize) -> &[f64] {
        let w = self.width();
        let start = i * w + (self.cols(i).start + self.bandwidth - i);
        &self.f2[k][start..start + self.cols(i).len()]
    }

    pub fn k_dim(&self) -> usize {
        self.times.len()
    }

    /// `S_{kl} = ⟨g₁_k, g₁_l⟩ + 2 ⟨g₂_k, g₂_l⟩`.
    pub fn covariance(&self) -> CovarianceMatrix {
        let m = self.k_dim();
        let w = self.weight;
        let entries = DMatrix::from_fn(m, m, |k, l| {
            let a: f64 = self.f1[k].iter().zip(&self.f1[l]).map(|(x, y)| x * y).sum::<f64>() * w;
            let b: f64 = self.f2[k].iter().zip(&self.f2[l]).map(|(x, y)| x * y).sum::<f64>() * w * w;
            a + 2.0 * b
        });
        CovarianceMatrix { entries }
    }

    /// Dense kernels on the same cells, for cross-checks on small grids.
    pub fn to_chaos_vector(&self) -> Result<ChaosVector> {
        let grid = Arc::new(MeasureGrid::uniform(self.n, self.weight)?);
        let m = self.k_dim();
        let f1 = Kernel::from_fn(grid.clone(), 1, m, |a, k| self.f1[k][a[0]])?;
        let f2 = Kernel::from_fn(grid, 2, m, |a, k| self.f2_get(k, a[0], a[1]))?.assume_symmetric(1e-12)?;
        ChaosVector::new(vec![f1, f2])
    }

    fn norm_f1_0_1_f1(&self) -> f64 {
        let w = self.weight;
        (0..self.n)
            .map(|x| {
                let s: f64 = self.f1.iter().map(|a| a[x] * a[x]).sum();
                s * s
            })
            .sum::<f64>()
            * w
    }

    fn row_sq(&self) -> Vec<f64> {
        (0..self.n)
            .map(|y| (0..self.k_dim()).map(|k| self.row(k, y).iter().map(|v| v * v).sum::<f64>()).sum())
            .collect()
    }

    fn norm_f1_0_1_f2(&self) -> f64 {
        let w = self.weight;
        let rows = self.row_sq();
        (0..self.n)
            .map(|y| self.f1.iter().map(|a| a[y] * a[y]).sum::<f64>() * rows[y])
            .sum::<f64>()
            * w
            * w
    }

    fn norm_f1_1_1_f2(&self) -> f64 {
        let w = self.weight;
        let mut total = 0.0;
        let mut buf = vec![0.0; self.n];
        for a in &self.f1 {
            for l in 0..self.k_dim() {
                buf.iter_mut().for_each(|v| *v = 0.0);
                for x in 0..self.n {
                    if a[x] == 0.0 {
                        continue;
                    }
                    for (z, b) in self.cols(x).zip(self.row(l, x)) {
                        buf[z] += w * a[x] * b;
                    }
                }
                total += buf.iter().map(|v| v * v).sum::<f64>() * w;
            }
        }
        total
    }

    fn norm_f2_0_1_f2(&self) -> f64 {
        let w = self.weight;
        self.row_sq().iter().map(|r| r * r).sum::<f64>() * w.powi(3)
    }

    fn norm_f2_1_1_f2(&self) -> f64 {
        let w = self.weight;
        let bw = self.bandwidth;
        let pw = 4 * bw + 1;
        let mut total = 0.0;
        let mut prod = vec![0.0; self.n * pw];
        for k in 0..self.k_dim() {
            for l in 0..self.k_dim() {
                // (g₂_k W g₂_l)(y, z) has bandwidth 2 bw
                prod.iter_mut().for_each(|v| *v = 0.0);
                for x in 0..self.n {
                    let rk = self.row(k, x);
                    let rl = self.row(l, x);
                    for (y, bk) in self.cols(x).zip(rk) {
                        if *bk == 0.0 {
                            continue;
                        }
                        for (z, bl) in self.cols(x).zip(rl) {
                            prod[y * pw + (z + 2 * bw - y)] += w * bk * bl;
                        }
                    }
                }
                total += prod.iter().map(|v| v * v).sum::<f64>() * w * w;
            }
        }
        total
    }

    fn norm_f2_0_2_f2(&self) -> f64 {
        let w = self.weight;
        let len = self.f2[0].len();
        (0..len)
            .map(|e| {
                let s: f64 = self.f2.iter().map(|b| b[e] * b[e]).sum();
                s * s
            })
            .sum::<f64>()
            * w
            * w
    }

    fn norm_f2_1_2_f2(&self) -> f64 {
        let w = self.weight;
        let mut total = 0.0;
        let mut buf = vec![0.0; self.n];
        for k in 0..self.k_dim() {
            for l in 0..self.k_dim() {
                buf.iter_mut().for_each(|v| *v = 0.0);
                for x in 0..self.n {
                    for ((y, bk), bl) in self.cols(x).zip(self.row(k, x)).zip(self.row(l, x)) {
                        buf[y] += w * bk * bl;
                    }
                }
                total += buf.iter().map(|v| v * v).sum::<f64>() * w;
            }
        }
        total
    }

    /// The seven contraction norms of an order-(1, 2) chaos vector, keyed by
    /// `(q, p, r, l)` with `q ≤ p`.
    pub fn seven_norms(&self) -> Vec<((usize, usize, usize, usize), f64)> {
        vec![
            ((1, 1, 1, 0), self.norm_f1_0_1_f1()),
            ((1, 2, 1, 0), self.norm_f1_0_1_f2()),
            ((1, 2, 1, 1), self.norm_f1_1_1_f2()),
            ((2, 2, 1, 0), self.norm_f2_0_1_f2()),
            ((2, 2, 1, 1), self.norm_f2_1_1_f2()),
            ((2, 2, 2, 0), self.norm_f2_0_2_f2()),
            ((2, 2, 2, 1), self.norm_f2_1_2_f2()),
        ]
    }
}

/// Band kernels with all norms precomputed.
#[derive(Debug, Clone)]
pub struct BandNorms {
    pub norms: Vec<((usize, usize, usize, usize), f64)>,
    pub second_moment: f64,
}

impl BandNorms {
    pub fn new(k: &BandKernels) -> Self {
        let s = k.covariance();
        Self { norms: k.seven_norms(), second_moment: s.trace() }
    }
}

impl ContractionNorms for BandNorms {
    fn orders(&self) -> Vec<usize> {
        vec![1, 2]
    }

    fn contraction_norm_sq(&self, q: usize, p: usize, r: usize, l: usize) -> Result<f64> {
        let key = (q.min(p), q.max(p), r, l);
        self.norms
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::InvalidArgument(format!("contraction {key:?} is not tabulated")))
    }

    fn second_moment(&self) -> f64 {
        self.second_moment
    }
}

/// Number of cells on `[−a, a]` giving at least `cells_per_radius` cells per `r_λ`.
pub fn cell_count(cfg: &RggConfig, cells_per_radius: usize) -> usize {
    ((2.0 * cfg.half_width * cells_per_radius as f64 / cfg.radius()).ceil() as usize).max(1)
}

/// Cell-averaged kernels in `d = 1`, scaled by `√ω_k / σ`.
pub fn exact_kernels(cfg: &RggConfig, n_cells: usize) -> Result<BandKernels> {
    if cfg.d != 1 {
        return Err(Error::InvalidArgument("band kernels are built for d = 1".into()));
    }
    let stats = RegimeStats::new(cfg);
    let sigma = stats.sigma_sq.sqrt();
    let a = cfg.half_width;
    let h = 2.0 * a / n_cells as f64;
    let bw = (cfg.radius() / h).ceil() as usize + 1;
    let width = 2 * bw + 1;
    let cell = |i: usize| (-a + i as f64 * h, -a + (i + 1) as f64 * h);
    let mut f1 = Vec::new();
    let mut f2 = Vec::new();
    for (&t, &om) in cfg.time_grid.iter().zip(&cfg.time_weights()) {
        let (at, rt) = (cfg.half_width_at(t), cfg.radius_at(t));
        let win = (-at, at);
        let scale = om.sqrt() / sigma;
        let mut band = vec![0.0; n_cells * width];
        let mut first = vec![0.0; n_cells];
        for i in 0..n_cells {
            let ci = intersect(cell(i), win);
            if ci.1 <= ci.0 {
                continue;
            }
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n_cells) {
                let cj = intersect(cell(j), win);
                let v = band_area(ci, cj, rt) / (h * h);
                band[i * width + (j + bw - i)] = scale * v;
                first[i] += 2.0 * cfg.lambda * h * v;
            }
            first[i] *= scale;
        }
        f1.push(first);
        f2.push(band);
    }
    Ok(BandKernels {
        n: n_cells,
        h,
        weight: cfg.lambda * h,
        bandwidth: bw,
        times: cfg.time_grid.clone(),
        f1,
        f2,
    })
}

/// Unscaled cell-averaged `(f₁, f₂)` as dense K-valued kernels, for `d = 1`
/// or `2`, with `cells` cells per axis. In `d = 2` cell-pair averages use
/// `sub × sub` midpoints per cell.
pub fn exact_kernels_dense(cfg: &RggConfig, cells: usize, sub: usize) -> Result<(Kernel, Kernel)> {
    let a = cfg.half_width;
    let h = 2.0 * a / cells as f64;
    let d = cfg.d;
    let n = cells.pow(d as u32);
    let centre = |i: usize, axis: usize| {
        let idx = if d == 1 { i } else if axis == 0 { i / cells } else { i % cells };
        -a + (idx as f64 + 0.5) * h
    };
    let coords: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|ax| centre(i, ax)).collect()).collect();
    let vol = h.powi(d as i32);
    let grid = Arc::new(MeasureGrid::with_coords(
        (0..n).map(|i| format!("c{i}")).collect(),
        vec![cfg.lambda * vol; n],
        Some(coords.clone()),
    )?);
    let m = cfg.time_grid.len();
    let mut f2 = vec![0.0; n * n * m];
    for (k, &t) in cfg.time_grid.iter().enumerate() {
        let (at, rt) = (cfg.half_width_at(t), cfg.radius_at(t));
        let slice = &mut f2[k * n * n..(k + 1) * n * n];
        if d == 1 {
            for i in 0..n {
                let ci = intersect((coords[i][0] - h / 2.0, coords[i][0] + h / 2.0), (-at, at));
                for j in 0..n {
                    let cj = intersect((coords[j][0] - h / 2.0, coords[j][0] + h / 2.0), (-at, at));
                    slice[i * n + j] = band_area(ci, cj, rt) / (h * h);
                }
            }
        } else {
            let offs: Vec<f64> = (0..sub).map(|s| ((s as f64 + 0.5) / sub as f64 - 0.5) * h).collect();
            let pts = |i: usize| -> Vec<[f64; 2]> {
                let mut v = Vec::new();
                for ox in &offs {
                    for oy in &offs {
                        let p = [coords[i][0] + ox, coords[i][1] + oy];
                        if p[0].abs() <= at && p[1].abs() <= at {
                            v.push(p);
                        }
                    }
                }
                v
            };
            let all: Vec<Vec<[f64; 2]>> = (0..n).map(pts).collect();
            let denom = (sub * sub * sub * sub) as f64;
            for i in 0..n {
                for j in i..n {
                    let mut c = 0usize;
                    for p in &all[i] {
                        for q in &all[j] {
                            if (p[0] - q[0]).hypot(p[1] - q[1]) < rt {
                                c += 1;
                            }
                        }
                    }
                    slice[i * n + j] = c as f64 / denom;
                    slice[j * n + i] = c as f64 / denom;
                }
            }
        }
    }
    let f2 = Kernel::new(grid.clone(), 2, m, f2)?.assume_symmetric(1e-12)?;
    let w = cfg.lambda * vol;
    let f1 = Kernel::from_fn(grid, 1, m, |a, k| {
        let row = &f2.slice_values(k)[a[0] * n..(a[0] + 1) * n];
        2.0 * row.iter().sum::<f64>() * w
    })?;
    Ok((f1, f2))
}

/// Ordered-pair edge counts `F(t)` for every time in the grid.
pub fn simulate_edge_count<R: Rng + ?Sized>(cfg: &RggConfig, rng: &mut R) -> Vec<f64> {
    let a = cfg.half_width;
    let mean = cfg.lambda * (2.0 * a).powi(cfg.d as i32);
    let n = Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0);
    let mut pts: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let x = rng.random_range(-a..a);
            let y = if cfg.d == 2 { rng.random_range(-a..a) } else { 0.0 };
            [x, y]
        })
        .collect();
    pts.sort_by(|p, q| p[0].total_cmp(&q[0]));
    count_edges(cfg, &pts)
}

/// Edge counts for a given point set sorted by first coordinate.
pub fn count_edges(cfg: &RggConfig, sorted: &[[f64; 2]]) -> Vec<f64> {
    cfg.time_grid
        .iter()
        .map(|&t| {
            let (at, rt) = (cfg.half_width_at(t), cfg.radius_at(t));
            let inside: Vec<&[f64; 2]> =
                sorted.iter().filter(|p| p[0].abs() <= at && p[1].abs() <= at).collect();
            let mut pairs = 0usize;
            let mut lo = 0;
            for (i, p) in inside.iter().enumerate() {
                while inside[lo][0] <= p[0] - rt {
                    lo += 1;
                }
                for q in &inside[lo..i] {
                    if cfg.d == 1 || (p[0] - q[0]).hypot(p[1] - q[1]) < rt {
                        pairs += 1;
                    }
                }
            }
            2.0 * pairs as f64
        })
        .collect()
}

/// Monte Carlo moments of `F̄(t) = (F(t) − E F(t)) / σ` on the time grid.
#[derive(Debug, Clone)]
pub struct RggMonteCarlo {
    pub reps: usize,
    /// Raw means `E F(t)`.
    pub mean: Vec<Estimate>,
    /// `E[F̄(t_k) F̄(t_l)]`, row-major.
    pub cov: Vec<Estimate>,
}

pub fn rgg_monte_carlo(cfg: &RggConfig, reps: usize, spec: RngSpec) -> Result<RggMonteCarlo> {
    cfg.validate()?;
    let m = cfg.time_grid.len();
    let sigma = RegimeStats::new(cfg).sigma_sq.sqrt();
    let means: Vec<f64> = cfg.time_grid.iter().map(|&t| exact_mean(cfg, t)).collect();
    let acc = run_replications(reps, m + m * m, spec, |rng, row| {
        let f = simulate_edge_count(cfg, rng);
        let fb: Vec<f64> = f.iter().zip(&means).map(|(v, e)| (v - e) / sigma).collect();
        row[..m].copy_from_slice(&f);
        for k in 0..m {
            for l in 0..m {
                row[m + k * m + l] = fb[k] * fb[l];
            }
        }
    });
    Ok(RggMonteCarlo {
        reps,
        mean: (0..m).map(|k| acc.estimate(k)).collect(),
        cov: (0..m * m).map(|i| acc.estimate(m + i)).collect(),
    })
}

/// `√(ω_k ω_l) c(t_k, t_l)` for a covariance function `c`.
pub fn scaled_target(cfg: &RggConfig, c: impl Fn(f64, f64) -> f64) -> CovarianceMatrix {
    let w = cfg.time_weights();
    let t = &cfg.time_grid;
    let m = t.len();
    CovarianceMatrix { entries: DMatrix::from_fn(m, m, |k, l| (w[k] * w[l]).sqrt() * c(t[k], t[l])) }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RggRow {
    pub lambda: f64,
    pub radius: f64,
    pub lambda_psi: f64,
    pub sigma_sq: f64,
    pub n_cells: usize,
    pub second_moment: f64,
    pub beta: f64,
    pub prefactor: f64,
    /// `prefactor · √β`.
    pub contraction_term: f64,
    /// `½ ‖S_fin − S'‖` with `S_fin` from the finite-λ covariance formula.
    pub covariance_term_regime: f64,
    /// `½ ‖S − S'‖` with `S` from the discretised kernels.
    pub covariance_term_kernels: f64,
    /// `contraction_term + covariance_term_regime`.
    pub total_bound: f64,
    /// `‖g₁ ⋆⁰₁ g₁‖²`.
    pub norm_f1_f1: f64,
    pub seven_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RggSweep {
    pub regime: Regime,
    pub rows: Vec<RggRow>,
    pub contraction_slope: f64,
    pub total_slope: f64,
    pub norm_f1_f1_slope: f64,
    /// Slopes of `λ^{−1} ψ^{−1/2}` and `λ^{−2} ψ^{−1}` over the same sweep.
    pub reference_slopes: (f64, f64),
}

/// Contraction bound and covariance terms at one intensity.
pub fn rgg_bound(cfg: &RggConfig, cells_per_radius: usize) -> Result<(BoundReport, RggRow)> {
    cfg.validate()?;
    let stats = RegimeStats::new(cfg);
    let n = cell_count(cfg, cells_per_radius);
    let kernels = exact_kernels(cfg, n)?;
    let norms = BandNorms::new(&kernels);
    let limit = scaled_target(cfg, |t, s| regime_covariance(t, s, stats.lambda_psi, stats.regime).unwrap().limit);
    let finite = scaled_target(cfg, |t, s| regime_covariance(t, s, stats.lambda_psi, stats.regime).unwrap().finite);
    let hs_regime = hs_diff(&finite, &limit)?;
    let hs_kernels = hs_diff(&kernels.covariance(), &limit)?;
    let report = contraction_bound_from(&norms, hs_regime)?;
    let contraction_term = report.contraction_term().unwrap();
    let row = RggRow {
        lambda: cfg.lambda,
        radius: cfg.radius(),
        lambda_psi: stats.lambda_psi,
        sigma_sq: stats.sigma_sq,
        n_cells: n,
        second_moment: norms.second_moment,
        beta: report.beta.unwrap(),
        prefactor: report.contraction_prefactor.unwrap(),
        contraction_term,
        covariance_term_regime: 0.5 * hs_regime,
        covariance_term_kernels: 0.5 * hs_kernels,
        total_bound: contraction_term + 0.5 * hs_regime,
        norm_f1_f1: norms.norms[0].1,
        seven_norms: norms.norms.iter().map(|(_, v)| *v).collect(),
    };
    Ok((report, row))
}

/// Exact bound terms over an intensity sweep.
pub fn rgg_sweep(base: &RggConfig, lambdas: &[f64], cells_per_radius: usize) -> Result<RggSweep> {
    if lambdas.len() < 2 {
        return Err(Error::InvalidArgument("need at least two intensities".into()));
    }
    let rows = lambdas
        .iter()
        .map(|&l| Ok(rgg_bound(&base.with_lambda(l)?, cells_per_radius)?.1))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: &dyn Fn(&RggRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let psis = col(&|r| r.lambda_psi / r.lambda);
    let ref1: Vec<f64> = lambdas.iter().zip(&psis).map(|(l, p)| 1.0 / (l * p.sqrt())).collect();
    let ref2: Vec<f64> = lambdas.iter().zip(&psis).map(|(l, p)| 1.0 / (l * l * p)).collect();
    Ok(RggSweep {
        regime: base.regime(),
        contraction_slope: loglog_slope(lambdas, &col(&|r| r.contraction_term)),
        total_slope: loglog_slope(lambdas, &col(&|r| r.total_bound)),
        norm_f1_f1_slope: loglog_slope(lambdas, &col(&|r| r.norm_f1_f1)),
        reference_slopes: (loglog_slope(lambdas, &ref1), loglog_slope(lambdas, &ref2)),
        rows,
    })
}

/// Largest `|Ĉ_{kl} − c(t_k, t_l)| / SE` over the upper triangle.
pub fn max_covariance_deviation(cfg: &RggConfig, mc: &RggMonteCarlo, c: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let m = cfg.time_grid.len();
    let mut worst_z: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    for k in 0..m {
        for l in k..m {
            let e = mc.cov[k * m + l];
            let target = c(cfg.time_grid[k], cfg.time_grid[l]);
            worst_z = worst_z.max(e.z_score(target));
            worst_abs = worst_abs.max((e.value - target).abs());
        }
    }
    (worst_z, worst_abs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RggReport {
    pub sweep: RggSweep,
    pub mc_lambda: f64,
    pub reps: usize,
    /// `(max z-score, max abs deviation)` against the regime limit `φ`.
    pub cov_dev_limit: (f64, f64),
    /// Same against the finite-λ formula.
    pub cov_dev_finite: (f64, f64),
    /// Same against `Cov(F(t), F(s)) / σ²` from the exact kernels (`d = 1`).
    pub cov_dev_exact: Option<(f64, f64)>,
}

/// Bound sweep plus a Monte Carlo covariance check at `cfg.lambda`.
pub fn rgg_pipeline(
    cfg: &RggConfig,
    lambdas: &[f64],
    cells_per_radius: usize,
    reps: usize,
    spec: RngSpec,
) -> Result<RggReport> {
    let sweep = rgg_sweep(cfg, lambdas, cells_per_radius)?;
    let mc = rgg_monte_carlo(cfg, reps, spec)?;
    let stats = RegimeStats::new(cfg);
    let rc = |t, s| regime_covariance(t, s, stats.lambda_psi, stats.regime).unwrap();
    let cov_dev_limit = max_covariance_deviation(cfg, &mc, |t, s| rc(t, s).limit);
    let cov_dev_finite = max_covariance_deviation(cfg, &mc, |t, s| rc(t, s).finite);
    let cov_dev_exact = if cfg.d == 1 {
        Some(max_covariance_deviation(cfg, &mc, |t, s| {
            exact_covariance_1d(cfg, t, s).unwrap() / stats.sigma_sq
        }))
    } else {
        None
    };
    Ok(RggReport { sweep, mc_lambda: cfg.lambda, reps, cov_dev_limit, cov_dev_finite, cov_dev_exact })
}
