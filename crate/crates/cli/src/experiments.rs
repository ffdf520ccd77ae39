//! The `bounds`, `besov` and `rgg` experiments.

use poisson_chaos::besov::{besov_bound, besov_contraction_rate, besov_smooth_distance, FracParams};
use poisson_chaos::bounds::{contraction_bound, four_moment_bound};
use poisson_chaos::chaos_algebra::{covariance, fourth_moments, ChaosVector, CovarianceMatrix};
use poisson_chaos::error::Result;
use poisson_chaos::measure_kernels::{Kernel, KernelJson};
use poisson_chaos::poisson_mc::{mc_moments, write_estimates_csv, EstimateRow, RngSpec};
use poisson_chaos::rgg::{
    exact_covariance_1d, regime_covariance, rgg_monte_carlo, rgg_sweep, RegimeStats, Regime,
};
use serde::Serialize;

use crate::checks::CheckResult;
use crate::config::{BesovParams, BoundsParams, RggParams, Target};
use crate::fixtures;
use crate::output::{csv_rows, csv_with, Artifact};

pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub checks: Vec<CheckResult>,
}

fn load_vector(p: &BoundsParams, seed: u64) -> std::result::Result<ChaosVector, String> {
    if p.kernels.is_empty() {
        let mut rng = RngSpec::new(seed, 100).rng();
        let g = fixtures::grid(&mut rng, p.atoms, 0.2, 1.5);
        return Ok(fixtures::chaos_vector_with(&mut rng, &g, &p.orders, p.k_dim));
    }
    let mut kernels = Vec::new();
    let mut grid = None;
    for path in &p.kernels {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let json: KernelJson =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        // later kernels share the first kernel's grid
        let k: Kernel = match &grid {
            None => json.into_kernel(),
            Some(g) => json.into_kernel_on(std::sync::Arc::clone(g)),
        }
        .map_err(|e| format!("{}: {e}", path.display()))?;
        let k = if k.is_symmetric() { k } else { k.symmetrize() };
        grid.get_or_insert_with(|| k.grid().clone());
        kernels.push(k);
    }
    ChaosVector::new(kernels).map_err(|e| e.to_string())
}

/// Loads the chaos vector up front so that bad kernel files are config errors.
pub fn prepare_bounds(p: &BoundsParams, seed: u64) -> std::result::Result<ChaosVector, String> {
    load_vector(p, seed)
}

pub fn bounds(x: &ChaosVector, p: &BoundsParams, seed: u64, reps: usize) -> Result<Outcome> {
    let s = covariance(x);
    let sp = match p.target {
        Target::Identity => CovarianceMatrix::identity(x.k_dim()),
        Target::Covariance => s.clone(),
    };
    let four = four_moment_bound(x, &sp)?;
    let contraction = contraction_bound(x, &sp)?;
    let fm = fourth_moments(x)?;
    let mc = mc_moments(x, reps, RngSpec::new(seed, 101))?;
    let row = |quantity: &str, e: poisson_chaos::poisson_mc::Estimate, exact: f64| EstimateRow {
        quantity: quantity.into(),
        estimate: e.value,
        exact_value: Some(exact),
        std_error: e.std_error,
        reps,
        seed,
    };
    let rows = vec![
        row("second_moment", mc.m2, fm.m2),
        row("fourth_moment", mc.m4, fm.m4),
        row("fourth_moment_orderwise", mc.m4_orderwise, fm.m4_orderwise()),
    ];
    let checks = vec![
        CheckResult::at_most("second_moment_vs_mc", mc.m2.z_score(fm.m2), 4.0, "z-score".into()),
        CheckResult::at_most("fourth_moment_vs_mc", mc.m4.z_score(fm.m4), 4.0, "z-score".into()),
        CheckResult::at_most(
            "detailed_le_compact",
            four.moment_term_detailed.unwrap_or(0.0) - four.moment_term_compact.unwrap_or(0.0),
            1e-9,
            "moment terms".into(),
        ),
    ];
    let artifacts = vec![
        csv_with("four_moment_bound.csv", seed, |w| four.write_csv(w)).map_err(io_err)?,
        csv_with("contraction_bound.csv", seed, |w| contraction.write_csv(w)).map_err(io_err)?,
        csv_with("moments.csv", seed, |w| write_estimates_csv(w, &rows)).map_err(io_err)?,
    ];
    Ok(Outcome { artifacts, checks })
}

fn io_err(e: String) -> poisson_chaos::error::Error {
    poisson_chaos::error::Error::InvalidArgument(e)
}

#[derive(Serialize)]
struct BesovCsvRow {
    lambda: f64,
    contraction_norm_sq: f64,
    contraction_norm: f64,
    rate_norm_sq: f64,
    hs_diff: f64,
    prefactor: f64,
    total_bound: f64,
    /// Fitted slope of `log ‖f ⋆⁰₁ f‖²` against `log λ` over the whole sweep.
    slope_estimate: f64,
}

#[derive(Serialize)]
struct SmoothRow {
    lambda: f64,
    dictionary: usize,
    reps: usize,
    value: f64,
    std_error: f64,
}

pub fn besov(p: &BesovParams, seed: u64, reps: usize, quick: bool) -> Result<Outcome> {
    let (n_time, n_jump) = if quick { (p.n_time.min(32), p.n_jump.min(64)) } else { (p.n_time, p.n_jump) };
    let rate = besov_contraction_rate(p.beta, &p.lambdas, p.rate_n)?;
    let mut rows = Vec::new();
    for (&lambda, r) in p.lambdas.iter().zip(&rate.rows) {
        let (_, b) = besov_bound(&FracParams::new(p.beta, lambda)?, n_time, n_jump)?;
        rows.push(BesovCsvRow {
            lambda,
            contraction_norm_sq: b.contraction_norm_sq,
            contraction_norm: b.contraction_norm,
            rate_norm_sq: r.norm_sq,
            hs_diff: 2.0 * b.covariance_term,
            prefactor: b.prefactor,
            total_bound: b.total_bound,
            slope_estimate: 0.0,
        });
    }
    let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let kernel_slope =
        poisson_chaos::besov::loglog_slope(&lambdas, &rows.iter().map(|r| r.contraction_norm_sq).collect::<Vec<_>>());
    rows.iter_mut().for_each(|r| r.slope_estimate = kernel_slope);
    let max_cov = rows.iter().map(|r| r.hs_diff).fold(0.0, f64::max);
    let mut checks = vec![
        CheckResult::at_most(
            "besov_norm_sq_slope",
            (rate.slope + 1.0).abs().max((kernel_slope + 1.0).abs()),
            0.01,
            format!("closed form {:.4}, kernel {:.4}", rate.slope, kernel_slope),
        ),
        CheckResult::at_most("besov_hs_diff", max_cov, 1e-10, "‖S_λ − S'‖_HS".into()),
    ];
    let mut artifacts = vec![csv_rows("besov_bound.csv", seed, &rows).map_err(io_err)?];
    if let Some(lambda) = p.smooth_lambda {
        let d = besov_smooth_distance(&FracParams::new(p.beta, lambda)?, n_time, n_jump, p.dictionary, reps, RngSpec::new(seed, 200))?;
        artifacts.push(
            csv_rows(
                "besov_smooth_distance.csv",
                seed,
                &[SmoothRow { lambda, dictionary: p.dictionary, reps, value: d.value, std_error: d.std_error }],
            )
            .map_err(io_err)?,
        );
        checks.push(CheckResult::at_most(
            "besov_smooth_distance_finite",
            if d.value.is_finite() { 0.0 } else { 1.0 },
            0.0,
            format!("{:.4} ± {:.4}", d.value, d.std_error),
        ));
    }
    Ok(Outcome { artifacts, checks })
}

#[derive(Serialize)]
struct RggCsvRow {
    lambda: f64,
    regime: String,
    radius: f64,
    lambda_psi: f64,
    sigma_sq: f64,
    n_cells: usize,
    second_moment: f64,
    beta: f64,
    prefactor: f64,
    contraction_term: f64,
    covariance_term_regime: f64,
    covariance_term_kernels: f64,
    total_bound: f64,
    norm_f1_0_1_f1: f64,
    norm_f1_0_1_f2: f64,
    norm_f1_1_1_f2: f64,
    norm_f2_0_1_f2: f64,
    norm_f2_1_1_f2: f64,
    norm_f2_0_2_f2: f64,
    norm_f2_1_2_f2: f64,
    /// Largest entrywise gap between the finite-λ and limiting covariances.
    cov_max_dev: f64,
    /// Fitted slope of `log(total_bound)` against `log λ` over the sweep.
    slope: f64,
}

#[derive(Serialize)]
struct CovRow {
    t: f64,
    s: f64,
    estimate: f64,
    std_error: f64,
    limit: f64,
    finite_lambda: f64,
    isometry: f64,
}

pub fn rgg(p: &RggParams, seed: u64, reps: usize, quick: bool) -> Result<Outcome> {
    let lambdas: Vec<f64> = if quick { p.lambdas.iter().copied().filter(|l| *l <= 256.0).collect() } else { p.lambdas.clone() };
    let lambdas = if lambdas.len() < 2 { p.lambdas.clone() } else { lambdas };
    let base = p.config(p.mc_lambda).map_err(|e| io_err(e.0))?;
    let sweep = rgg_sweep(&base, &lambdas, p.cells_per_radius)?;
    let cov_max_dev = |grid: &[f64], lambda_psi: f64, regime: Regime| {
        let mut worst: f64 = 0.0;
        for &t in grid {
            for &u in grid {
                if let Ok(c) = regime_covariance(t, u, lambda_psi, regime) {
                    worst = worst.max((c.finite - c.limit).abs());
                }
            }
        }
        worst
    };
    let rows: Vec<RggCsvRow> = sweep
        .rows
        .iter()
        .map(|r| RggCsvRow {
            lambda: r.lambda,
            regime: format!("{:?}", sweep.regime),
            radius: r.radius,
            lambda_psi: r.lambda_psi,
            sigma_sq: r.sigma_sq,
            n_cells: r.n_cells,
            second_moment: r.second_moment,
            beta: r.beta,
            prefactor: r.prefactor,
            contraction_term: r.contraction_term,
            covariance_term_regime: r.covariance_term_regime,
            covariance_term_kernels: r.covariance_term_kernels,
            total_bound: r.total_bound,
            norm_f1_0_1_f1: r.seven_norms[0],
            norm_f1_0_1_f2: r.seven_norms[1],
            norm_f1_1_1_f2: r.seven_norms[2],
            norm_f2_0_1_f2: r.seven_norms[3],
            norm_f2_1_1_f2: r.seven_norms[4],
            norm_f2_0_2_f2: r.seven_norms[5],
            norm_f2_1_2_f2: r.seven_norms[6],
            cov_max_dev: cov_max_dev(&base.time_grid, r.lambda_psi, sweep.regime),
            slope: sweep.total_slope,
        })
        .collect();

    let mc = rgg_monte_carlo(&base, reps, RngSpec::new(seed, 300))?;
    let stats = RegimeStats::new(&base);
    let m = base.time_grid.len();
    let mut cov_rows = Vec::new();
    let mut worst_iso: f64 = 0.0;
    let mut worst_limit: f64 = 0.0;
    for k in 0..m {
        for l in k..m {
            let (t, s) = (base.time_grid[k], base.time_grid[l]);
            let rc = regime_covariance(t, s, stats.lambda_psi, stats.regime)?;
            let iso = exact_covariance_1d(&base, t, s)? / stats.sigma_sq;
            let e = mc.cov[k * m + l];
            worst_iso = worst_iso.max(e.z_score(iso));
            worst_limit = worst_limit.max(e.z_score(rc.limit));
            cov_rows.push(CovRow {
                t,
                s,
                estimate: e.value,
                std_error: e.std_error,
                limit: rc.limit,
                finite_lambda: rc.finite,
                isometry: iso,
            });
        }
    }

    let mut checks = vec![CheckResult::at_most(
        "rgg_covariance_isometry",
        worst_iso,
        4.0,
        format!("max z against the exact-kernel covariance; against the regime limit: {worst_limit:.1}"),
    )];
    if base.regime() == Regime::R2 {
        checks.push(CheckResult::at_most(
            "rgg_regime2_bound_slope",
            (sweep.total_slope + 0.5).abs(),
            0.1,
            format!("slope {:.3}", sweep.total_slope),
        ));
    }

    #[derive(Serialize)]
    struct SlopeRow {
        regime: String,
        contraction_slope: f64,
        total_slope: f64,
        norm_f1_0_1_f1_slope: f64,
        reference_slope_a: f64,
        reference_slope_b: f64,
    }
    let slopes = [SlopeRow {
        regime: format!("{:?}", sweep.regime),
        contraction_slope: sweep.contraction_slope,
        total_slope: sweep.total_slope,
        norm_f1_0_1_f1_slope: sweep.norm_f1_f1_slope,
        reference_slope_a: sweep.reference_slopes.0,
        reference_slope_b: sweep.reference_slopes.1,
    }];
    let artifacts = vec![
        csv_rows("rgg_sweep.csv", seed, &rows).map_err(io_err)?,
        csv_rows("rgg_slopes.csv", seed, &slopes).map_err(io_err)?,
        csv_rows("rgg_covariance.csv", seed, &cov_rows).map_err(io_err)?,
    ];
    Ok(Outcome { artifacts, checks })
}
