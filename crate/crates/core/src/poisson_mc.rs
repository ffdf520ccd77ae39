//! Monte Carlo on an atomic Poisson space.
//!
//! Replications are split into fixed blocks of [`BLOCK_SIZE`]; block `b` draws
//! from its own ChaCha stream derived from `(seed, stream, b)`, blocks run in
//! parallel, and block statistics are merged pairwise in block order. Results
//! are therefore identical for any number of worker threads.
//!
//! Two evaluators of `I_q(f)` are provided. [`OffDiagonalIntegral`] is the
//! compensated distinct-tuple sum and refuses kernels with diagonal mass.
//! [`ChaosIntegral`] weights each atom of multiplicity `m` by the Charlier
//! polynomial `C_m(N; w)` and is exact for every kernel.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos_algebra::{product_expansion, ChaosVector, CovarianceMatrix};
use crate::combinatorics::{binomial, factorial, falling_factorial};
use crate::error::{Error, Result};
use crate::measure_kernels::{contract, decode, norm_sq, Kernel, MeasureGrid};

pub const BLOCK_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Independent sub-stream, e.g. for a block or a sub-task.
    pub fn child(&self, index: u64) -> RngSpec {
        RngSpec { seed: self.seed, stream: splitmix(self.stream ^ splitmix(index)) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointConfiguration {
    pub counts: Vec<u64>,
}

impl PointConfiguration {
    /// `η̂({z_j}) = counts[j] − w_j`.
    pub fn compensated(&self, grid: &MeasureGrid) -> Vec<f64> {
        self.counts.iter().zip(grid.weights()).map(|(&c, w)| c as f64 - w).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Independent Poisson counts, one distribution per atom.
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    dists: Vec<Option<Poisson<f64>>>,
}

impl PoissonSampler {
    pub fn new(intensities: &[f64]) -> Self {
        Self { dists: intensities.iter().map(|&w| if w > 0.0 { Poisson::new(w).ok() } else { None }).collect() }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, counts: &mut [u64]) {
        for (c, d) in counts.iter_mut().zip(&self.dists) {
            *c = d.as_ref().map_or(0, |d| d.sample(rng) as u64);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PointConfiguration {
        let mut counts = vec![0; self.dists.len()];
        self.sample_into(rng, &mut counts);
        PointConfiguration { counts }
    }
}

pub fn sample_with<R: Rng + ?Sized>(grid: &MeasureGrid, rng: &mut R) -> PointConfiguration {
    PoissonSampler::new(grid.weights()).sample(rng)
}

pub fn sample(grid: &MeasureGrid, spec: RngSpec) -> PointConfiguration {
    sample_with(grid, &mut spec.rng())
}

/// The thinning map `η ↦ η^t`: survival with probability `e^{−t}` plus an
/// independent Poisson count of intensity `(1 − e^{−t}) w`.
#[derive(Debug, Clone)]
pub struct Thinning {
    survive: f64,
    fresh: PoissonSampler,
}

impl Thinning {
    pub fn new(grid: &MeasureGrid, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("thinning time must be >= 0, got {t}")));
        }
        let survive = (-t).exp();
        let fresh: Vec<f64> = grid.weights().iter().map(|w| (1.0 - survive) * w).collect();
        Ok(Self { survive, fresh: PoissonSampler::new(&fresh) })
    }

    pub fn apply_into<R: Rng + ?Sized>(&self, rng: &mut R, counts: &[u64], out: &mut [u64]) {
        self.fresh.sample_into(rng, out);
        for (o, &c) in out.iter_mut().zip(counts) {
            let kept = if self.survive >= 1.0 || c == 0 {
                c
            } else {
                Binomial::new(c, self.survive).expect("valid binomial").sample(rng)
            };
            *o += kept;
        }
    }
}

pub fn thin_pair<R: Rng + ?Sized>(
    cfg: &PointConfiguration,
    t: f64,
    grid: &MeasureGrid,
    rng: &mut R,
) -> Result<PointConfiguration> {
    let th = Thinning::new(grid, t)?;
    let mut out = vec![0; cfg.counts.len()];
    th.apply_into(rng, &cfg.counts, &mut out);
    Ok(PointConfiguration { counts: out })
}

/// Compensated distinct-tuple evaluator of `I_q(f)` for off-diagonal kernels.
#[derive(Debug, Clone)]
pub struct OffDiagonalIntegral {
    q: usize,
    slices: usize,
    atoms: Vec<u32>,
    coeffs: Vec<f64>,
}

impl OffDiagonalIntegral {
    pub fn new(f: &Kernel) -> Result<Self> {
        let f = f.symmetrize();
        if let Some((atoms, value)) = f.first_diagonal_entry(1e-14) {
            return Err(Error::DiagonalSupport { atoms, value });
        }
        let q = f.order();
        let n = f.grid().len();
        let slices = f.n_slices();
        let qf = factorial(q as u32) as f64;
        let mut atoms = Vec::new();
        let mut coeffs = Vec::new();
        let mut digits = vec![0; q];
        for flat in 0..f.slice_len() {
            decode(flat, n, &mut digits);
            if digits.windows(2).any(|w| w[0] >= w[1]) {
                continue;
            }
            let vals: Vec<f64> = (0..slices).map(|k| f.slice_values(k)[flat]).collect();
            if vals.iter().all(|v| *v == 0.0) {
                continue;
            }
            atoms.extend(digits.iter().map(|&d| d as u32));
            coeffs.extend(vals.iter().map(|v| qf * v));
        }
        Ok(Self { q, slices, atoms, coeffs })
    }

    /// Adds `I_q(f)` per slice into `out`, given compensated counts.
    pub fn eval_into(&self, comp: &[f64], out: &mut [f64]) {
        if self.q == 0 {
            for (o, c) in out.iter_mut().zip(&self.coeffs) {
                *o += c;
            }
            return;
        }
        for (tuple, c) in self.atoms.chunks_exact(self.q).zip(self.coeffs.chunks_exact(self.slices)) {
            let prod: f64 = tuple.iter().map(|&a| comp[a as usize]).product();
            for (o, cv) in out.iter_mut().zip(c) {
                *o += cv * prod;
            }
        }
    }
}

/// `C_m(N; w) = Σ_k C(m,k) (−w)^{m−k} N(N−1)…(N−k+1)` for `m = 0..=max_m`.
pub fn charlier(n: u64, w: f64, max_m: usize) -> Vec<f64> {
    (0..=max_m)
        .map(|m| {
            (0..=m)
                .map(|k| binomial(m as u32, k as u32) as f64 * (-w).powi((m - k) as i32) * falling_factorial(n, k))
                .sum()
        })
        .collect()
}

/// Exact evaluator of `I_q(f)` for arbitrary kernels via Charlier products.
#[derive(Debug, Clone)]
pub struct ChaosIntegral {
    q: usize,
    slices: usize,
    /// Per multiset: `(atom, multiplicity)` pairs.
    groups: Vec<Vec<(u32, u8)>>,
    coeffs: Vec<f64>,
}

impl ChaosIntegral {
    pub fn new(f: &Kernel) -> Self {
        let f = f.symmetrize();
        let q = f.order();
        let n = f.grid().len();
        let slices = f.n_slices();
        let qf = factorial(q as u32) as f64;
        let mut groups = Vec::new();
        let mut coeffs = Vec::new();
        let mut digits = vec![0; q];
        for flat in 0..f.slice_len() {
            decode(flat, n, &mut digits);
            if digits.windows(2).any(|w| w[0] > w[1]) {
                continue;
            }
            let vals: Vec<f64> = (0..slices).map(|k| f.slice_values(k)[flat]).collect();
            if q > 0 && vals.iter().all(|v| *v == 0.0) {
                continue;
            }
            let mut group: Vec<(u32, u8)> = Vec::new();
            for &d in &digits {
                match group.last_mut() {
                    Some((a, m)) if *a == d as u32 => *m += 1,
                    _ => group.push((d as u32, 1)),
                }
            }
            // number of distinct orderings of the multiset
            let perms = qf / group.iter().map(|&(_, m)| factorial(m as u32) as f64).product::<f64>();
            groups.push(group);
            coeffs.extend(vals.iter().map(|v| perms * v));
        }
        Self { q, slices, groups, coeffs }
    }

    pub fn order(&self) -> usize {
        self.q
    }

    /// `table[a * (q + 1) + m] = C_m(N_a; w_a)`.
    pub fn charlier_table(&self, cfg: &PointConfiguration, grid: &MeasureGrid) -> Vec<f64> {
        charlier_table(cfg, grid, self.q)
    }

    pub fn eval_with_table(&self, table: &[f64], stride: usize, out: &mut [f64]) {
        for (group, c) in self.groups.iter().zip(self.coeffs.chunks_exact(self.slices)) {
            let prod: f64 = group.iter().map(|&(a, m)| table[a as usize * stride + m as usize]).product();
            for (o, cv) in out.iter_mut().zip(c) {
                *o += cv * prod;
            }
        }
    }
}

pub fn charlier_table(cfg: &PointConfiguration, grid: &MeasureGrid, max_m: usize) -> Vec<f64> {
    cfg.counts
        .iter()
        .zip(grid.weights())
        .flat_map(|(&n, &w)| charlier(n, w, max_m))
        .collect()
}

/// `I_q(f)` per K-slice via the distinct-tuple formula.
pub fn eval_multiple_integral(f: &Kernel, cfg: &PointConfiguration) -> Result<Vec<f64>> {
    let ev = OffDiagonalIntegral::new(f)?;
    let mut out = vec![0.0; f.n_slices()];
    ev.eval_into(&cfg.compensated(f.grid()), &mut out);
    Ok(out)
}

/// `I_q(f)` per K-slice for kernels that may charge diagonals.
pub fn eval_multiple_integral_general(f: &Kernel, cfg: &PointConfiguration) -> Vec<f64> {
    let ev = ChaosIntegral::new(f);
    let table = ev.charlier_table(cfg, f.grid());
    let mut out = vec![0.0; f.n_slices()];
    ev.eval_with_table(&table, f.order() + 1, &mut out);
    out
}

/// `(I_q(f) I_p(g), Σ coef · I_{q+p−r−l}(sym(f ⋆ˡᵣ g)))` for scalar
/// off-diagonal kernels. The right side is evaluated with Charlier products,
/// so contractions that charge diagonals are integrated exactly.
pub fn product_formula_pathwise_check(f: &Kernel, g: &Kernel, cfg: &PointConfiguration) -> Result<(f64, f64)> {
    if f.k_dim() != 0 || g.k_dim() != 0 {
        return Err(Error::ShapeMismatch("pathwise product check takes scalar kernels".into()));
    }
    let lhs = eval_multiple_integral(f, cfg)?[0] * eval_multiple_integral(g, cfg)?[0];
    let (fs, gs) = (f.symmetrize(), g.symmetrize());
    let mut rhs = 0.0;
    for term in product_expansion(f.order(), g.order()) {
        let c = contract(&fs, &gs, term.r, term.l)?;
        rhs += term.coefficient as f64 * eval_multiple_integral_general(&c, cfg)[0];
    }
    Ok((lhs, rhs))
}

/// Running mean and centred second moment for a fixed number of statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StatAccumulator {
    pub n: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl StatAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn merge(mut self, other: StatAccumulator) -> StatAccumulator {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.n += other.n;
        self
    }

    pub fn estimate(&self, i: usize) -> Estimate {
        let n = self.n as f64;
        let var = if self.n > 1 { self.m2[i] / (n - 1.0) } else { f64::NAN };
        Estimate { value: self.mean[i], std_error: (var / n).sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// `|value − target| / std_error`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target).abs() / self.std_error
    }

    pub fn within(&self, target: f64, n_se: f64) -> bool {
        (self.value - target).abs() <= n_se * self.std_error
    }
}

fn pairwise_merge(mut v: Vec<StatAccumulator>) -> StatAccumulator {
    while v.len() > 1 {
        let mut next = Vec::with_capacity(v.len().div_ceil(2));
        let mut it = v.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(b),
                None => a,
            });
        }
        v = next;
    }
    v.pop().expect("at least one block")
}

/// Runs `reps` replications in deterministic blocks; `rep` fills one row of
/// `dim` statistics per replication.
pub fn run_replications<F>(reps: usize, dim: usize, spec: RngSpec, rep: F) -> StatAccumulator
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let blocks = reps.div_ceil(BLOCK_SIZE).max(1);
    let accs: Vec<StatAccumulator> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = reps.saturating_sub(b * BLOCK_SIZE).min(BLOCK_SIZE);
            let mut rng = spec.child(b as u64).rng();
            let mut acc = StatAccumulator::new(dim);
            let mut row = vec![0.0; dim];
            for _ in 0..len {
                row.iter_mut().for_each(|v| *v = 0.0);
                rep(&mut rng, &mut row);
                acc.push(&row);
            }
            acc
        })
        .collect();
    pairwise_merge(accs)
}

/// Evaluates every `F_{q,i}` of a chaos vector on one configuration.
#[derive(Debug, Clone)]
pub struct ChaosVectorEvaluator {
    k: usize,
    max_order: usize,
    evaluators: Vec<ChaosIntegral>,
}

impl ChaosVectorEvaluator {
    pub fn new(x: &ChaosVector) -> Self {
        Self {
            k: x.k_dim(),
            max_order: x.max_order(),
            evaluators: x.kernels().map(|(_, f)| ChaosIntegral::new(f)).collect(),
        }
    }

    pub fn n_orders(&self) -> usize {
        self.evaluators.len()
    }

    /// Writes `F_{q,i}` at `out[o * k + i]` for the `o`-th stored order.
    pub fn eval(&self, cfg: &PointConfiguration, grid: &MeasureGrid, out: &mut [f64]) {
        let table = charlier_table(cfg, grid, self.max_order);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (o, ev) in self.evaluators.iter().enumerate() {
            ev.eval_with_table(&table, self.max_order + 1, &mut out[o * self.k..(o + 1) * self.k]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloMoments {
    pub reps: usize,
    /// `E‖X‖²`.
    pub m2: Estimate,
    /// `E‖X‖⁴`.
    pub m4: Estimate,
    /// `Σ_{p,q} E‖F_p‖²‖F_q‖²`.
    pub m4_orderwise: Estimate,
    /// `E[X_i X_j]`, row-major `k × k`.
    pub s_hat: Vec<Estimate>,
}

impl MonteCarloMoments {
    pub fn s_matrix(&self) -> DMatrix<f64> {
        let k = (self.s_hat.len() as f64).sqrt() as usize;
        DMatrix::from_fn(k, k, |i, j| self.s_hat[i * k + j].value)
    }
}

/// Sample moments of `X`. Means of i.i.d. replications, so the delete-one
/// jackknife standard error coincides with `sd / √reps`.
pub fn mc_moments(x: &ChaosVector, reps: usize, spec: RngSpec) -> Result<MonteCarloMoments> {
    if reps < 2 {
        return Err(Error::InvalidArgument("mc_moments needs reps >= 2".into()));
    }
    let grid = x.grid().clone();
    let sampler = PoissonSampler::new(grid.weights());
    let ev = ChaosVectorEvaluator::new(x);
    let k = x.k_dim();
    let no = ev.n_orders();
    let dim = 3 + k * k;
    let acc = run_replications(reps, dim, spec, |rng, row| {
        let cfg = sampler.sample(rng);
        let mut f = vec![0.0; no * k];
        ev.eval(&cfg, &grid, &mut f);
        let xs: Vec<f64> = (0..k).map(|i| (0..no).map(|o| f[o * k + i]).sum()).collect();
        let n2: f64 = xs.iter().map(|v| v * v).sum();
        let per_order: f64 = (0..no).map(|o| f[o * k..(o + 1) * k].iter().map(|v| v * v).sum::<f64>()).sum();
        row[0] = n2;
        row[1] = n2 * n2;
        row[2] = per_order * per_order;
        for i in 0..k {
            for j in 0..k {
                row[3 + i * k + j] = xs[i] * xs[j];
            }
        }
    });
    Ok(MonteCarloMoments {
        reps,
        m2: acc.estimate(0),
        m4: acc.estimate(1),
        m4_orderwise: acc.estimate(2),
        s_hat: (0..k * k).map(|i| acc.estimate(3 + i)).collect(),
    })
}

/// Joint moments of `(F, G)` for scalar kernels: `E[FG]`, `E[F]`, `E[G]`.
pub fn mc_cross_moment(f: &Kernel, g: &Kernel, reps: usize, spec: RngSpec) -> Result<[Estimate; 3]> {
    let grid = f.grid().clone();
    let sampler = PoissonSampler::new(grid.weights());
    let ef = ChaosIntegral::new(f);
    let eg = ChaosIntegral::new(g);
    let maxm = f.order().max(g.order());
    let acc = run_replications(reps, 3, spec, |rng, row| {
        let cfg = sampler.sample(rng);
        let table = charlier_table(&cfg, &grid, maxm);
        let (mut a, mut b) = ([0.0], [0.0]);
        ef.eval_with_table(&table, maxm + 1, &mut a);
        eg.eval_with_table(&table, maxm + 1, &mut b);
        row[0] = a[0] * b[0];
        row[1] = a[0];
        row[2] = b[0];
    });
    Ok([acc.estimate(0), acc.estimate(1), acc.estimate(2)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairLimitRow {
    pub t: f64,
    /// `(1/t) E[(F^t − F) F]`.
    pub drift: Estimate,
    /// `−q E[F²]`.
    pub drift_limit: f64,
    /// `(1/t) E[(F^t − F)²]`.
    pub square: Estimate,
    /// `2q E[F²]`.
    pub square_limit: f64,
}

/// Pair statistics of `(F, F^t)` for a scalar kernel `f`, one pass per `t`.
fn pair_stats<F>(f: &Kernel, t: f64, reps: usize, spec: RngSpec, dim: usize, stat: F) -> Result<StatAccumulator>
where
    F: Fn(f64, f64, &mut [f64]) + Sync,
{
    if f.k_dim() != 0 {
        return Err(Error::ShapeMismatch("pair statistics take a scalar kernel".into()));
    }
    let grid = f.grid().clone();
    let sampler = PoissonSampler::new(grid.weights());
    let thin = Thinning::new(&grid, t)?;
    let ev = ChaosIntegral::new(f);
    let q = f.order();
    Ok(run_replications(reps, dim, spec, |rng, row| {
        let cfg = sampler.sample(rng);
        let mut moved = vec![0; cfg.counts.len()];
        thin.apply_into(rng, &cfg.counts, &mut moved);
        let moved = PointConfiguration { counts: moved };
        let (mut a, mut b) = ([0.0], [0.0]);
        ev.eval_with_table(&charlier_table(&cfg, &grid, q), q + 1, &mut a);
        ev.eval_with_table(&charlier_table(&moved, &grid, q), q + 1, &mut b);
        stat(a[0], b[0], row);
    }))
}

pub fn pair_limit_check(f: &Kernel, t_list: &[f64], reps: usize, spec: RngSpec) -> Result<Vec<PairLimitRow>> {
    let q = f.order() as f64;
    let ef2 = factorial(f.order() as u32) as f64 * norm_sq(f);
    t_list
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument(format!("pair limits need t > 0, got {t}")));
            }
            let acc = pair_stats(f, t, reps, spec.child(i as u64), 2, |a, b, row| {
                row[0] = (b - a) * a / t;
                row[1] = (b - a) * (b - a) / t;
            })?;
            Ok(PairLimitRow {
                t,
                drift: acc.estimate(0),
                drift_limit: -q * ef2,
                square: acc.estimate(1),
                square_limit: 2.0 * q * ef2,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MehlerRow {
    pub t: f64,
    /// `E[F^t F] / (q! ‖f‖²)`.
    pub ratio: Estimate,
    /// `e^{−qt}`.
    pub target: f64,
    /// `E[F² F^t] − E[F (F^t)²]`, zero under exchangeability.
    pub swap_difference: Estimate,
}

pub fn mehler_check(f: &Kernel, t: f64, reps: usize, spec: RngSpec) -> Result<MehlerRow> {
    let ef2 = factorial(f.order() as u32) as f64 * norm_sq(f);
    let acc = pair_stats(f, t, reps, spec, 2, |a, b, row| {
        row[0] = a * b / ef2;
        row[1] = a * a * b - a * b * b;
    })?;
    Ok(MehlerRow {
        t,
        ratio: acc.estimate(0),
        target: (-(f.order() as f64) * t).exp(),
        swap_difference: acc.estimate(1),
    })
}

/// `(1/t) E‖X^t − X‖⁴` for a chaos vector.
pub fn thinning_fourth_increment(x: &ChaosVector, t: f64, reps: usize, spec: RngSpec) -> Result<Estimate> {
    let grid = x.grid().clone();
    let sampler = PoissonSampler::new(grid.weights());
    let thin = Thinning::new(&grid, t)?;
    let ev = ChaosVectorEvaluator::new(x);
    let (k, no) = (x.k_dim(), ev.n_orders());
    let acc = run_replications(reps, 1, spec, |rng, row| {
        let cfg = sampler.sample(rng);
        let mut moved = vec![0; cfg.counts.len()];
        thin.apply_into(rng, &cfg.counts, &mut moved);
        let moved = PointConfiguration { counts: moved };
        let mut a = vec![0.0; no * k];
        let mut b = vec![0.0; no * k];
        ev.eval(&cfg, &grid, &mut a);
        ev.eval(&moved, &grid, &mut b);
        let d2: f64 = (0..k)
            .map(|i| {
                let d: f64 = (0..no).map(|o| b[o * k + i] - a[o * k + i]).sum();
                d * d
            })
            .sum();
        row[0] = d2 * d2 / t;
    });
    Ok(acc.estimate(0))
}

/// Linear map `L` with `L Lᵀ = cov`, from a clamped eigen-decomposition.
pub fn gaussian_factor(cov: &CovarianceMatrix) -> DMatrix<f64> {
    let sym = (&cov.entries + cov.entries.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Lower-bound surrogate for `d₃`: the largest gap `|Ê h(X) − Ê h(Z)|` over
/// `h(x) = cos(⟨x, u⟩ + b)` with `‖u‖ ≤ 1`. Every such `h` has derivatives
/// of order up to three bounded by 1, so the statistic never exceeds `d₃`
/// apart from sampling error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothDistance {
    pub value: f64,
    /// Standard error of the maximising difference.
    pub std_error: f64,
    pub argmax: usize,
}

pub fn smooth_distance_with<F>(
    dim: usize,
    sample_x: F,
    gauss_cov: &CovarianceMatrix,
    dictionary_size: usize,
    reps: usize,
    spec: RngSpec,
) -> Result<SmoothDistance>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    if dictionary_size == 0 {
        return Err(Error::InvalidArgument("dictionary must be non-empty".into()));
    }
    if gauss_cov.dim() != dim {
        return Err(Error::ShapeMismatch("Gaussian covariance dimension differs from X".into()));
    }
    let mut drng = spec.child(u64::MAX).rng();
    let dict: Vec<(Vec<f64>, f64)> = (0..dictionary_size)
        .map(|_| {
            let dir: Vec<f64> = (0..dim).map(|_| drng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let radius: f64 = drng.random::<f64>().powf(1.0 / dim as f64);
            let u = dir.iter().map(|v| v * radius / norm).collect();
            (u, drng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let factor = gaussian_factor(gauss_cov);
    let acc = run_replications(reps, 2 * dictionary_size, spec, |rng, row| {
        let mut x = vec![0.0; dim];
        sample_x(rng, &mut x);
        let xi: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let z: Vec<f64> = (0..dim).map(|i| (0..dim).map(|j| factor[(i, j)] * xi[j]).sum()).collect();
        for (d, (u, b)) in dict.iter().enumerate() {
            let dot = |v: &[f64]| v.iter().zip(u).map(|(a, c)| a * c).sum::<f64>();
            row[d] = (dot(&x) + b).cos();
            row[dictionary_size + d] = (dot(&z) + b).cos();
        }
    });
    let mut best = SmoothDistance { value: -1.0, std_error: 0.0, argmax: 0 };
    for d in 0..dictionary_size {
        let (ex, ez) = (acc.estimate(d), acc.estimate(dictionary_size + d));
        let diff = (ex.value - ez.value).abs();
        if diff > best.value {
            best = SmoothDistance { value: diff, std_error: ex.std_error.hypot(ez.std_error), argmax: d };
        }
    }
    Ok(best)
}

pub fn empirical_smooth_distance(
    x: &ChaosVector,
    gauss_cov: &CovarianceMatrix,
    dictionary_size: usize,
    reps: usize,
    spec: RngSpec,
) -> Result<SmoothDistance> {
    let grid = x.grid().clone();
    let sampler = PoissonSampler::new(grid.weights());
    let ev = ChaosVectorEvaluator::new(x);
    let (k, no) = (x.k_dim(), ev.n_orders());
    smooth_distance_with(
        k,
        |rng, out| {
            let cfg = sampler.sample(rng);
            let mut f = vec![0.0; no * k];
            ev.eval(&cfg, &grid, &mut f);
            for (i, o) in out.iter_mut().enumerate() {
                *o = (0..no).map(|j| f[j * k + i]).sum();
            }
        },
        gauss_cov,
        dictionary_size,
        reps,
        spec,
    )
}

/// One row of the estimator CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub quantity: String,
    pub estimate: f64,
    pub exact_value: Option<f64>,
    pub std_error: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Writes `quantity,estimate,exact_value,std_error,reps,seed` rows.
pub fn write_estimates_csv<W: Write>(w: W, rows: &[EstimateRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["quantity", "estimate", "exact_value", "std_error", "reps", "seed"])?;
    for r in rows {
        out.write_record([
            r.quantity.clone(),
            format!("{:.17e}", r.estimate),
            r.exact_value.map(|v| format!("{v:.17e}")).unwrap_or_default(),
            format!("{:.17e}", r.std_error),
            r.reps.to_string(),
            r.seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
