mod common;

use poisson_chaos::chaos_algebra::{fourth_moments, ChaosVector};
use poisson_chaos::measure_kernels::{inner, Kernel};
use poisson_chaos::poisson_mc::{mc_cross_moment, thinning_fourth_increment, RngSpec};
use poisson_chaos::rgg::{exact_covariance_1d, exact_kernels_dense, RadiusRule, RegimeStats, RggConfig};

#[test]
fn integrals_are_centred_and_orders_orthogonal() {
    let mut rng = common::rng(101);
    let g = common::grid(&mut rng, 4, 0.3, 1.2);
    for (q, p) in [(1, 2), (1, 3), (2, 3)] {
        let f = common::sym_offdiag_kernel(&mut rng, &g, q, 0);
        let h = common::sym_offdiag_kernel(&mut rng, &g, p, 0);
        let [fg, ef, eh] = mc_cross_moment(&f, &h, 100_000, RngSpec::new(5, q as u64 * 10 + p as u64)).unwrap();
        assert!(fg.within(0.0, 4.0), "E[I_{q} I_{p}] = {fg:?}");
        assert!(ef.within(0.0, 4.0), "E[I_{q}] = {ef:?}");
        assert!(eh.within(0.0, 4.0), "E[I_{p}] = {eh:?}");
    }
}

#[test]
fn thinning_increment_below_remainder_bound() {
    let mut rng = common::rng(102);
    let g = common::grid(&mut rng, 3, 0.3, 1.0);
    let f1 = common::sym_offdiag_kernel(&mut rng, &g, 1, 2);
    let f2 = common::sym_offdiag_kernel(&mut rng, &g, 2, 2);
    let x = ChaosVector::new(vec![f1, f2]).unwrap();
    let fm = fourth_moments(&x).unwrap();
    let bound: f64 = [1usize, 2]
        .iter()
        .map(|&q| 2f64.powi(3 * q as i32 - 2) * (4 * q - 3) as f64 * fm.order_gap(q))
        .sum();
    let t = 0.02;
    let est = thinning_fourth_increment(&x, t, 100_000, RngSpec::new(6, 0)).unwrap();
    assert!(est.value <= bound * (1.0 + t) + 4.0 * est.std_error, "{est:?} vs {bound}");
}

#[test]
fn rgg_isometry_variance_matches_kernels() {
    let cfg = RggConfig::new(1, 8.0, 1.0, RadiusRule::Constant { radius: 0.2 }, vec![0.5, 1.0]).unwrap();
    let exact = exact_covariance_1d(&cfg, 1.0, 1.0).unwrap();
    for cells in [40, 80] {
        let (f1, f2) = exact_kernels_dense(&cfg, cells, 1).unwrap();
        let (a, b): (Kernel, Kernel) = (f1.slice(1), f2.slice(1));
        let var = inner(&a, &a).unwrap() + 2.0 * inner(&b, &b).unwrap();
        // cell averaging loses O(h) of the variance
        let h = 2.0 / cells as f64;
        assert!(var <= exact * (1.0 + 1e-12) && var >= exact * (1.0 - 2.0 * h), "{cells}: {var} vs {exact}");
    }
    // the boundary-free isometry variance differs from the exact one only by O(r / a)
    let stats = RegimeStats::new(&cfg);
    let rel = (stats.sigma_sq_isometry - exact).abs() / exact;
    assert!(rel < cfg.radius() / cfg.half_width, "{rel}");
}
