//! Seeded random kernels and chaos vectors for experiments and checks.

use std::sync::Arc;

use poisson_chaos::chaos_algebra::ChaosVector;
use poisson_chaos::measure_kernels::{Kernel, MeasureGrid};
use poisson_chaos::poisson_mc::PointConfiguration;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn grid(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Arc<MeasureGrid> {
    let w = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Arc::new(MeasureGrid::from_weights(w).expect("weights are positive"))
}

pub fn sym_kernel(rng: &mut ChaCha8Rng, grid: &Arc<MeasureGrid>, q: usize, k_dim: usize) -> Kernel {
    Kernel::from_fn(grid.clone(), q, k_dim, |_, _| rng.random_range(-1.0..1.0))
        .expect("shape is consistent")
        .symmetrize()
}

pub fn sym_offdiag_kernel(rng: &mut ChaCha8Rng, grid: &Arc<MeasureGrid>, q: usize, k_dim: usize) -> Kernel {
    sym_kernel(rng, grid, q, k_dim).zero_diagonals()
}

/// One kernel per order in `orders`.
pub fn chaos_vector_with(rng: &mut ChaCha8Rng, grid: &Arc<MeasureGrid>, orders: &[usize], k_dim: usize) -> ChaosVector {
    let kernels = orders.iter().map(|&q| sym_kernel(rng, grid, q, k_dim)).collect();
    ChaosVector::new(kernels).expect("kernels share grid and k_dim")
}

/// Random non-empty subset of `{1, …, max_order}`.
pub fn chaos_vector(rng: &mut ChaCha8Rng, grid: &Arc<MeasureGrid>, max_order: usize, k_dim: usize) -> ChaosVector {
    let mut orders: Vec<usize> = (1..=max_order).filter(|_| rng.random_bool(0.7)).collect();
    if orders.is_empty() {
        orders.push(rng.random_range(1..=max_order));
    }
    chaos_vector_with(rng, grid, &orders, k_dim)
}

pub fn configuration(rng: &mut ChaCha8Rng, grid: &MeasureGrid) -> PointConfiguration {
    poisson_chaos::poisson_mc::sample_with(grid, rng)
}
