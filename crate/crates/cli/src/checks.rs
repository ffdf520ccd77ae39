//! The `verify` suite: every cross-check at a scale set by `--quick`.

use poisson_chaos::besov::{besov_contraction_rate, besov_pipeline, bm_cov_kernel, hs_on_l2, poisson_cov_kernel, FracParams, TimeGrid};
use poisson_chaos::bounds::four_moment_bound;
use poisson_chaos::chaos_algebra::{contraction00_identity_check, fourth_moment_expansion, fourth_moments, CovarianceMatrix};
use poisson_chaos::combinatorics::factorial;
use poisson_chaos::error::{Error, Result};
use poisson_chaos::measure_kernels::{inner, norm_sq};
use poisson_chaos::poisson_mc::{
    mc_cross_moment, mc_moments, mehler_check, pair_limit_check, product_formula_pathwise_check, sample, RngSpec,
};
use poisson_chaos::rgg::{exact_covariance_1d, max_covariance_deviation, rgg_monte_carlo, rgg_sweep, RegimeStats, RggConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::fixtures;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `statistic <= threshold`.
    pub fn at_most(check: &str, statistic: f64, threshold: f64, detail: String) -> Self {
        Self { check: check.into(), statistic, threshold, passed: statistic <= threshold, detail }
    }

    /// Passes when `statistic >= threshold`.
    pub fn at_least(check: &str, statistic: f64, threshold: f64, detail: String) -> Self {
        Self { check: check.into(), statistic, threshold, passed: statistic >= threshold, detail }
    }
}

pub struct Suite {
    pub seed: u64,
    pub reps: usize,
    pub quick: bool,
}

impl Suite {
    fn rng(&self, salt: u64) -> ChaCha8Rng {
        RngSpec::new(self.seed, salt).child(u64::MAX).rng()
    }

    fn spec(&self, salt: u64) -> RngSpec {
        RngSpec::new(self.seed, salt)
    }

    fn pick(&self, quick: usize, full: usize) -> usize {
        if self.quick {
            quick
        } else {
            full
        }
    }

    pub fn run(&self) -> Result<Vec<CheckResult>> {
        Ok(vec![
            self.isometry()?,
            self.product_formula()?,
            self.contraction_identity()?,
            self.fourth_moment()?,
            self.positivity()?,
            self.bound_ordering()?,
            self.mehler()?,
            self.besov()?,
            self.rgg_slope()?,
            self.rgg_covariance()?,
            self.pair_limits()?,
            self.reproducibility(),
        ])
    }

    fn isometry(&self) -> Result<CheckResult> {
        let cases = self.pick(10, 50);
        let mut rng = self.rng(1);
        let mut hits = 0;
        for case in 0..cases {
            let n_atoms = rng.random_range(2..=10);
            let g = fixtures::grid(&mut rng, n_atoms, 0.2, 1.0);
            let (q, p) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let f = fixtures::sym_offdiag_kernel(&mut rng, &g, q, 0);
            let mut h = fixtures::sym_offdiag_kernel(&mut rng, &g, p, 0);
            if q == p && case % 2 == 0 {
                h = h.axpy(1.0, &f)?;
            }
            let target = if q == p { factorial(q as u32) as f64 * inner(&f, &h)? } else { 0.0 };
            let [fh, _, _] = mc_cross_moment(&f, &h, self.reps, self.spec(1).child(case as u64))?;
            hits += usize::from(fh.within(target, 3.0));
        }
        let frac = hits as f64 / cases as f64;
        Ok(CheckResult::at_least("isometry", frac, 0.94, format!("{hits}/{cases} within 3 SE")))
    }

    fn product_formula(&self) -> Result<CheckResult> {
        let mut rng = self.rng(2);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let n_atoms = rng.random_range(2..=5);
            let g = fixtures::grid(&mut rng, n_atoms, 0.3, 2.5);
            let (q, p) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let f = fixtures::sym_offdiag_kernel(&mut rng, &g, q, 0);
            let h = fixtures::sym_offdiag_kernel(&mut rng, &g, p, 0);
            let cfg = fixtures::configuration(&mut rng, &g);
            let (lhs, rhs) = product_formula_pathwise_check(&f, &h, &cfg)?;
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
        Ok(CheckResult::at_most("pathwise_product_formula", worst, 1e-8, "100 pairs, q, p <= 3".into()))
    }

    fn contraction_identity(&self) -> Result<CheckResult> {
        let mut rng = self.rng(3);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let n_atoms = rng.random_range(2..=4);
            let g = fixtures::grid(&mut rng, n_atoms, 0.3, 2.0);
            let (q, p) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let f = fixtures::sym_kernel(&mut rng, &g, q, 0);
            let h = fixtures::sym_kernel(&mut rng, &g, p, 0);
            let (lhs, rhs) = contraction00_identity_check(&f, &h)?;
            worst = worst.max((lhs - rhs).abs() / lhs.abs());
        }
        Ok(CheckResult::at_most("contraction_identity", worst, 1e-10, "100 pairs, relative error".into()))
    }

    fn fourth_moment(&self) -> Result<CheckResult> {
        let cases = self.pick(5, 20);
        let mut rng = self.rng(4);
        // the SE of a fourth-moment estimate is itself noisy at small sample sizes
        let reps = self.reps.max(self.pick(200_000, 1_000_000));
        let mut hits = 0;
        for case in 0..cases {
            let n_atoms = rng.random_range(2..=4);
            let g = fixtures::grid(&mut rng, n_atoms, 0.3, 1.2);
            let k = rng.random_range(1..=3);
            let x = fixtures::chaos_vector(&mut rng, &g, 2, k);
            let exact = fourth_moment_expansion(&x)?;
            let mc = mc_moments(&x, reps, self.spec(4).child(case as u64))?;
            hits += usize::from(mc.m4.within(exact, 3.0));
        }
        let frac = hits as f64 / cases as f64;
        Ok(CheckResult::at_least("fourth_moment_vs_mc", frac, 0.9, format!("{hits}/{cases} within 3 SE")))
    }

    fn instances(&self) -> Vec<poisson_chaos::chaos_algebra::ChaosVector> {
        let mut rng = self.rng(5);
        (0..self.pick(100, 500))
            .map(|_| {
                let n_atoms = rng.random_range(1..=4);
                let g = fixtures::grid(&mut rng, n_atoms, 0.1, 2.0);
                let k = rng.random_range(1..=3);
                fixtures::chaos_vector(&mut rng, &g, 2, k)
            })
            .collect()
    }

    fn positivity(&self) -> Result<CheckResult> {
        let xs = self.instances();
        let mut worst = f64::INFINITY;
        let mut radicand_errors = 0;
        for x in &xs {
            let fm = fourth_moments(x)?;
            let orders: Vec<usize> = x.orders().collect();
            worst = worst.min(fm.gap_orderwise()).min(fm.min_pair_gap);
            for &q in &orders {
                worst = worst.min(fm.order_gap(q));
                for &p in orders.iter().filter(|&&p| p != q) {
                    worst = worst.min(fm.cross_gap(p, q));
                }
            }
            if let Err(Error::NegativeRadicand { .. }) = four_moment_bound(x, &CovarianceMatrix::identity(x.k_dim())) {
                radicand_errors += 1;
            }
        }
        let mut r = CheckResult::at_least(
            "positivity",
            worst,
            -1e-9,
            format!("{} chaos vectors, {radicand_errors} negative radicands", xs.len()),
        );
        r.passed &= radicand_errors == 0;
        Ok(r)
    }

    fn bound_ordering(&self) -> Result<CheckResult> {
        let xs = self.instances();
        let mut worst = f64::NEG_INFINITY;
        for x in &xs {
            let b = four_moment_bound(x, &CovarianceMatrix::identity(x.k_dim()))?;
            worst = worst.max(b.moment_term_detailed.unwrap_or(0.0) - b.moment_term_compact.unwrap_or(0.0));
        }
        Ok(CheckResult::at_most("detailed_le_compact", worst, 1e-9, format!("{} chaos vectors", xs.len())))
    }

    fn mehler(&self) -> Result<CheckResult> {
        let mut rng = self.rng(7);
        let g = fixtures::grid(&mut rng, 4, 0.3, 1.0);
        let mut worst: f64 = 0.0;
        for q in [1usize, 2] {
            let f = fixtures::sym_offdiag_kernel(&mut rng, &g, q, 0);
            for (i, t) in [0.1, 0.5, 1.0].into_iter().enumerate() {
                let row = mehler_check(&f, t, self.reps, self.spec(7).child((q * 10 + i) as u64))?;
                worst = worst.max(row.ratio.z_score(row.target));
            }
        }
        Ok(CheckResult::at_most("mehler_eigenvalue", worst, 4.0, "max z over 6 (q, t) pairs".into()))
    }

    fn besov(&self) -> Result<CheckResult> {
        let lambdas = [1e1, 1e2, 1e3, 1e4];
        let beta = 0.25;
        let rate = besov_contraction_rate(beta, &lambdas, 512)?;
        let pipe = besov_pipeline(beta, &lambdas, self.pick(32, 64), self.pick(64, 256))?;
        let grid = TimeGrid::new(self.pick(128, 512))?;
        let params = FracParams::new(beta, 1e3)?;
        let hs = hs_on_l2(&poisson_cov_kernel(&params, &grid), &bm_cov_kernel(&params, &grid), &grid)?;
        let dev = (rate.slope + 1.0).abs().max((pipe.norm_sq_slope + 1.0).abs());
        let mut r = CheckResult::at_most(
            "besov_rate",
            dev,
            0.01,
            format!("norm² slopes {:.4} / {:.4}, HS {hs:.1e}", rate.slope, pipe.norm_sq_slope),
        );
        r.passed &= hs <= 1e-10;
        Ok(r)
    }

    fn rgg_lambdas(&self) -> Vec<f64> {
        let top = if self.quick { 8 } else { 10 };
        (4..=top).map(|e| 2f64.powi(e)).collect()
    }

    fn rgg_slope(&self) -> Result<CheckResult> {
        let cfg = RggConfig::regime2_fixture(64.0)?;
        let sweep = rgg_sweep(&cfg, &self.rgg_lambdas(), 4)?;
        Ok(CheckResult::at_most(
            "rgg_regime2_bound_slope",
            (sweep.total_slope + 0.5).abs(),
            0.1,
            format!("slope {:.3}", sweep.total_slope),
        ))
    }

    /// Simulation against the isometry covariance of the exact kernels.
    fn rgg_covariance(&self) -> Result<CheckResult> {
        let cfg = RggConfig::regime2_fixture(64.0)?;
        let mc = rgg_monte_carlo(&cfg, self.reps, self.spec(9))?;
        let sigma_sq = RegimeStats::new(&cfg).sigma_sq;
        let (z, dev) = max_covariance_deviation(&cfg, &mc, |t, s| {
            exact_covariance_1d(&cfg, t, s).expect("fixture is one-dimensional") / sigma_sq
        });
        Ok(CheckResult::at_most("rgg_covariance_isometry", z, 4.0, format!("max |Δ| {dev:.4}")))
    }

    fn pair_limits(&self) -> Result<CheckResult> {
        let mut rng = self.rng(10);
        let g = fixtures::grid(&mut rng, 4, 0.3, 1.0);
        let t = 0.01;
        let mut worst: f64 = 0.0;
        for q in [1usize, 2] {
            let f = fixtures::sym_offdiag_kernel(&mut rng, &g, q, 0);
            let f = f.scaled((factorial(q as u32) as f64 * norm_sq(&f)).powf(-0.5));
            let row = &pair_limit_check(&f, &[t], self.reps, self.spec(10).child(q as u64))?[0];
            // excess over the band 3 SE + 5%·t, in units of that band
            let ratio = |e: poisson_chaos::poisson_mc::Estimate, target: f64| {
                (e.value - target).abs() / (3.0 * e.std_error + 0.05 * t)
            };
            worst = worst.max(ratio(row.drift, row.drift_limit)).max(ratio(row.square, row.square_limit));
        }
        Ok(CheckResult::at_most("pair_limits", worst, 1.0, "t = 0.01, deviation / (3 SE + 0.05 t)".into()))
    }

    fn reproducibility(&self) -> CheckResult {
        let mut rng = self.rng(11);
        let g = fixtures::grid(&mut rng, 6, 0.5, 3.0);
        let same = (0..16u64).all(|i| sample(&g, self.spec(11).child(i)) == sample(&g, self.spec(11).child(i)));
        CheckResult::at_least("reproducibility", f64::from(u8::from(same)), 1.0, "identical draws for one seed".into())
    }
}
