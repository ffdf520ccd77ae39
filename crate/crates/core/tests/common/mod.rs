#![allow(dead_code)]

use std::sync::Arc;

use poisson_chaos::chaos_algebra::ChaosVector;
use poisson_chaos::measure_kernels::{Kernel, MeasureGrid};
use poisson_chaos::poisson_mc::PointConfiguration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn grid<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Arc<MeasureGrid> {
    let w = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Arc::new(MeasureGrid::from_weights(w).unwrap())
}

/// Entries uniform on `[−1, 1]`, not symmetrised.
pub fn raw_kernel<R: Rng>(rng: &mut R, grid: &Arc<MeasureGrid>, q: usize, k_dim: usize) -> Kernel {
    Kernel::from_fn(grid.clone(), q, k_dim, |_, _| rng.random_range(-1.0..1.0)).unwrap()
}

pub fn sym_kernel<R: Rng>(rng: &mut R, grid: &Arc<MeasureGrid>, q: usize, k_dim: usize) -> Kernel {
    raw_kernel(rng, grid, q, k_dim).symmetrize()
}

pub fn sym_offdiag_kernel<R: Rng>(rng: &mut R, grid: &Arc<MeasureGrid>, q: usize, k_dim: usize) -> Kernel {
    sym_kernel(rng, grid, q, k_dim).zero_diagonals()
}

/// Orders drawn from `{1, …, max_order}` (at least one), one kernel each.
pub fn chaos_vector<R: Rng>(rng: &mut R, grid: &Arc<MeasureGrid>, max_order: usize, k_dim: usize) -> ChaosVector {
    let mut orders: Vec<usize> = (1..=max_order).filter(|_| rng.random_bool(0.7)).collect();
    if orders.is_empty() {
        orders.push(rng.random_range(1..=max_order));
    }
    let kernels = orders.iter().map(|&q| sym_kernel(rng, grid, q, k_dim)).collect();
    ChaosVector::new(kernels).unwrap()
}

pub fn configuration<R: Rng>(rng: &mut R, grid: &MeasureGrid) -> PointConfiguration {
    let counts = grid
        .weights()
        .iter()
        .map(|&w| Poisson::new(w).unwrap().sample(rng) as u64)
        .collect();
    PointConfiguration { counts }
}
