//! Acceptance criteria. Run with `--nocapture` to see one PASS/FAIL line each.

mod common;

use std::time::{Duration, Instant};

use poisson_chaos::besov::{besov_contraction_rate, besov_pipeline, hs_on_l2, bm_cov_kernel, poisson_cov_kernel, FracParams, TimeGrid};
use poisson_chaos::bounds::four_moment_bound;
use poisson_chaos::chaos_algebra::{contraction00_identity_check, fourth_moment_expansion, fourth_moments, CovarianceMatrix};
use poisson_chaos::combinatorics::factorial;
use poisson_chaos::error::Error;
use poisson_chaos::measure_kernels::{inner, norm_sq};
use poisson_chaos::poisson_mc::{mc_cross_moment, mc_moments, mehler_check, pair_limit_check, product_formula_pathwise_check, RngSpec};
use poisson_chaos::rgg::{exact_covariance_1d, max_covariance_deviation, regime_covariance, rgg_monte_carlo, rgg_sweep, RegimeStats, RggConfig};
use rand::Rng;

fn report(id: &str, pass: bool, detail: String) {
    println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_01_isometry() {
    let start = Instant::now();
    let mut rng = common::rng(1);
    let mut hits = 0;
    for case in 0..50u64 {
        let n = rng.random_range(2..=10);
        let g = common::grid(&mut rng, n, 0.2, 1.0);
        let (q, p) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let f = common::sym_offdiag_kernel(&mut rng, &g, q, 0);
        let mut h = common::sym_offdiag_kernel(&mut rng, &g, p, 0);
        if q == p {
            // correlate half of the equal-order pairs so the target is far from 0
            h = h.axpy(if case % 2 == 0 { 1.0 } else { 0.0 }, &f).unwrap();
        }
        let target = if q == p { factorial(q as u32) as f64 * inner(&f, &h).unwrap() } else { 0.0 };
        let [fh, _, _] = mc_cross_moment(&f, &h, 200_000, RngSpec::new(1, case)).unwrap();
        if fh.within(target, 3.0) {
            hits += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = hits >= 47 && elapsed < Duration::from_secs(120);
    report("1 (isometry)", pass, format!("{hits}/50 within 3 SE, {elapsed:.1?}"));
    assert!(pass);
}

#[test]
fn criterion_02_pathwise_product_formula() {
    let mut rng = common::rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=5);
        let g = common::grid(&mut rng, n, 0.3, 2.5);
        let (q, p) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let f = common::sym_offdiag_kernel(&mut rng, &g, q, 0);
        let h = common::sym_offdiag_kernel(&mut rng, &g, p, 0);
        let cfg = common::configuration(&mut rng, &g);
        let (lhs, rhs) = product_formula_pathwise_check(&f, &h, &cfg).unwrap();
        worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
    }
    let pass = worst <= 1e-8;
    report("2 (pathwise product formula)", pass, format!("max |lhs − rhs|/(1 + |lhs|) = {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_03_contraction_identity() {
    let mut rng = common::rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=4);
        let g = common::grid(&mut rng, n, 0.3, 2.0);
        let (q, p) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let f = common::sym_kernel(&mut rng, &g, q, 0);
        let h = common::sym_kernel(&mut rng, &g, p, 0);
        let (lhs, rhs) = contraction00_identity_check(&f, &h).unwrap();
        worst = worst.max((lhs - rhs).abs() / lhs.abs());
    }
    let pass = worst <= 1e-10;
    report("3 (contraction identity)", pass, format!("max relative error {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_04_fourth_moment_vs_mc() {
    let mut rng = common::rng(4);
    let mut hits = 0;
    let mut worst_z: f64 = 0.0;
    for case in 0..20u64 {
        let n = rng.random_range(2..=4);
        let k = rng.random_range(1..=3);
        let g = common::grid(&mut rng, n, 0.3, 1.2);
        let x = common::chaos_vector(&mut rng, &g, 2, k);
        let exact = fourth_moment_expansion(&x).unwrap();
        let mc = mc_moments(&x, 1_000_000, RngSpec::new(4, case)).unwrap();
        let z = mc.m4.z_score(exact);
        worst_z = worst_z.max(z);
        if z <= 3.0 {
            hits += 1;
        }
    }
    let pass = hits >= 18;
    report("4 (fourth moment vs MC)", pass, format!("{hits}/20 within 3 SE, max z {worst_z:.2}"));
    assert!(pass);
}

/// The 500 instances shared by criteria 5 and 6.
fn positivity_instances() -> Vec<poisson_chaos::chaos_algebra::ChaosVector> {
    let mut rng = common::rng(5);
    (0..500)
        .map(|_| {
            let n = rng.random_range(1..=4);
            let k = rng.random_range(1..=3);
            let g = common::grid(&mut rng, n, 0.1, 2.0);
            common::chaos_vector(&mut rng, &g, 2, k)
        })
        .collect()
}

#[test]
fn criterion_05_positivity() {
    let mut worst: f64 = f64::INFINITY;
    let mut radicand_errors = 0;
    let mut exact_negative = 0;
    for x in positivity_instances() {
        let fm = fourth_moments(&x).unwrap();
        let orders: Vec<usize> = x.orders().collect();
        let mut gaps = vec![fm.gap_orderwise(), fm.min_pair_gap];
        for &q in &orders {
            gaps.push(fm.order_gap(q));
            gaps.extend(orders.iter().filter(|&&p| p != q).map(|&p| fm.cross_gap(p, q)));
        }
        worst = gaps.into_iter().fold(worst, f64::min);
        if fm.gap() < -1e-9 {
            exact_negative += 1;
        }
        let sp = CovarianceMatrix::identity(x.k_dim());
        if matches!(four_moment_bound(&x, &sp), Err(Error::NegativeRadicand { .. })) {
            radicand_errors += 1;
        }
    }
    let pass = worst >= -1e-9 && radicand_errors == 0;
    report(
        "5 (positivity)",
        pass,
        format!(
            "min gap {worst:.3e}, {radicand_errors} NegativeRadicand; exact-moment gap negative on {exact_negative}/500 (diagnostic)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_bound_ordering() {
    let mut worst = f64::NEG_INFINITY;
    for x in positivity_instances() {
        let sp = CovarianceMatrix::identity(x.k_dim());
        let b = four_moment_bound(&x, &sp).unwrap();
        worst = worst.max(b.moment_term_detailed.unwrap() - b.moment_term_compact.unwrap());
    }
    let pass = worst <= 1e-9;
    report("6 (detailed ≤ compact)", pass, format!("max(detailed − compact) = {worst:.3e}"));
    assert!(pass);
}

#[test]
fn criterion_07_mehler() {
    let mut rng = common::rng(7);
    let g = common::grid(&mut rng, 4, 0.3, 1.0);
    let mut worst_z: f64 = 0.0;
    for q in [1usize, 2] {
        let f = common::sym_offdiag_kernel(&mut rng, &g, q, 0);
        for (i, t) in [0.1, 0.5, 1.0].into_iter().enumerate() {
            let row = mehler_check(&f, t, 200_000, RngSpec::new(7, (q * 10 + i) as u64)).unwrap();
            worst_z = worst_z.max(row.ratio.z_score(row.target));
        }
    }
    let pass = worst_z <= 3.0;
    report("7 (Mehler eigenvalue)", pass, format!("max z {worst_z:.2} over q ∈ {{1,2}}, t ∈ {{0.1,0.5,1}}"));
    assert!(pass);
}

#[test]
fn criterion_08_besov_rate() {
    let start = Instant::now();
    let lambdas = [1e1, 1e2, 1e3, 1e4];
    let beta = 0.25;
    let rate = besov_contraction_rate(beta, &lambdas, 512).unwrap();
    let pipeline = besov_pipeline(beta, &lambdas, 64, 256).unwrap();
    let grid = TimeGrid::new(512).unwrap();
    let params = FracParams::new(beta, 1e3).unwrap();
    let hs = hs_on_l2(&poisson_cov_kernel(&params, &grid), &bm_cov_kernel(&params, &grid), &grid).unwrap();
    let elapsed = start.elapsed();
    let pass = (rate.slope + 1.0).abs() <= 0.01
        && (pipeline.norm_sq_slope + 1.0).abs() <= 0.01
        && hs <= 1e-10
        && elapsed < Duration::from_secs(60);
    report(
        "8 (Besov rate)",
        pass,
        format!(
            "norm² slope {:.4} (closed form) / {:.4} (kernel), root slope {:.4}, HS {hs:.1e}, {elapsed:.1?}",
            rate.slope,
            pipeline.norm_sq_slope,
            pipeline.norm_sq_slope / 2.0
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_rgg_bound_slope() {
    let start = Instant::now();
    let cfg = RggConfig::regime2_fixture(64.0).unwrap();
    let lambdas: Vec<f64> = (4..=10).map(|e| 2f64.powi(e)).collect();
    let sweep = rgg_sweep(&cfg, &lambdas, 4).unwrap();
    let elapsed = start.elapsed();
    let pass = (sweep.total_slope + 0.5).abs() <= 0.1 && elapsed < Duration::from_secs(600);
    report(
        "9 (RGG regime 2, bound slope)",
        pass,
        format!(
            "slope {:.3}, ‖g₁⋆⁰₁g₁‖² slope {:.3}, {elapsed:.1?}",
            sweep.total_slope, sweep.norm_f1_f1_slope
        ),
    );
    assert!(pass);
}

/// The normalisation `σ² = 4ℓλ³ψ² + ℓλ²ψ` drops the factor 2 on the
/// second-order variance, so at `λψ = 1` the covariance of `F̄` converges to
/// `(4√(ts(t∧s)) + 2 t∧s)/5` rather than `φ`. This check is expected to fail.
#[test]
#[ignore = "fails by about 50 SE: the printed normalisation omits Var I₂ = 2‖f₂‖²"]
fn criterion_09_rgg_covariance_vs_phi() {
    let start = Instant::now();
    let cfg = RggConfig::regime2_fixture(64.0).unwrap();
    let mc = rgg_monte_carlo(&cfg, 100_000, RngSpec::new(9, 0)).unwrap();
    let stats = RegimeStats::new(&cfg);
    let (z, dev) = max_covariance_deviation(&cfg, &mc, |t, s| regime_covariance(t, s, stats.lambda_psi, stats.regime).unwrap().limit);
    let elapsed = start.elapsed();
    let pass = z <= 4.0 && elapsed < Duration::from_secs(600);
    report("9 (RGG regime 2, covariance vs φ)", pass, format!("max {z:.1} SE, max |Δ| {dev:.4}, {elapsed:.1?}"));
    assert!(pass);
}

#[test]
fn criterion_09_diagnostic_isometry_covariance() {
    let cfg = RggConfig::regime2_fixture(64.0).unwrap();
    let mc = rgg_monte_carlo(&cfg, 100_000, RngSpec::new(9, 0)).unwrap();
    let sigma_sq = RegimeStats::new(&cfg).sigma_sq;
    let (z, dev) = max_covariance_deviation(&cfg, &mc, |t, s| exact_covariance_1d(&cfg, t, s).unwrap() / sigma_sq);
    println!("INFO criterion 9 diagnostic: covariance vs isometry covariance of the exact kernels: max {z:.2} SE, max |Δ| {dev:.4}");
    assert!(z <= 4.0);
}

#[test]
fn criterion_10_pair_limits() {
    let mut rng = common::rng(10);
    let g = common::grid(&mut rng, 4, 0.3, 1.0);
    let t = 0.01;
    let mut lines = Vec::new();
    let mut pass = true;
    for q in [1usize, 2] {
        let f = common::sym_offdiag_kernel(&mut rng, &g, q, 0);
        let f = f.scaled((factorial(q as u32) as f64 * norm_sq(&f)).powf(-0.5));
        let row = &pair_limit_check(&f, &[t], 1_000_000, RngSpec::new(10, q as u64)).unwrap()[0];
        let ok_drift = (row.drift.value - row.drift_limit).abs() <= 3.0 * row.drift.std_error + 0.05 * t;
        let ok_square = (row.square.value - row.square_limit).abs() <= 3.0 * row.square.std_error + 0.05 * t;
        pass &= ok_drift && ok_square;
        lines.push(format!(
            "q={q}: drift {:.4} ± {:.4} vs {:.1}, square {:.4} ± {:.4} vs {:.1}",
            row.drift.value, row.drift.std_error, row.drift_limit, row.square.value, row.square.std_error, row.square_limit
        ));
    }
    report("10 (exchangeable-pair limits)", pass, lines.join("; "));
    assert!(pass);
}
