mod common;

use nalgebra::DMatrix;
use poisson_chaos::besov::{bm_cov_kernel, frac_derivative, frac_integral, FracParams, Side, TimeGrid};
use poisson_chaos::bounds::{contraction_bound, four_moment_bound};
use poisson_chaos::chaos_algebra::{covariance, fourth_moments, product_expansion, second_moment, CovarianceMatrix};
use poisson_chaos::combinatorics::{binomial, factorial};
use poisson_chaos::measure_kernels::{contract, inner, norm_sq, Kernel};
use poisson_chaos::poisson_mc::{sample, RngSpec};
use poisson_chaos::rgg::{band_area, count_edges, psi, RadiusRule, RggConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn contraction_swaps_slots_and_k_indices(
        seed in any::<u64>(), n in 2usize..4, q in 1usize..4, p in 1usize..4, kf in 0usize..3, kg in 0usize..3,
    ) {
        let mut rng = common::rng(seed);
        let g = common::grid(&mut rng, n, 0.3, 1.5);
        let f = common::sym_kernel(&mut rng, &g, q, kf);
        let h = common::sym_kernel(&mut rng, &g, p, kg);
        let (nf, ng) = (kf.max(1), kg.max(1));
        for r in 0..=q.min(p) {
            for l in 0..=r {
                let fh = contract(&f, &h, r, l).unwrap();
                let hf = contract(&h, &f, r, l).unwrap();
                let shared = r - l;
                let order = fh.order();
                let mut digits = vec![0; order];
                for flat in 0..n.pow(order as u32) {
                    let mut x = flat;
                    for d in digits.iter_mut().rev() {
                        *d = x % n;
                        x /= n;
                    }
                    // [shared | f free | g free] → [shared | g free | f free]
                    let mut swapped = digits[..shared].to_vec();
                    swapped.extend_from_slice(&digits[shared + q - r..]);
                    swapped.extend_from_slice(&digits[shared..shared + q - r]);
                    for i in 0..nf {
                        for j in 0..ng {
                            let a = fh.get(&digits, i * ng + j);
                            let b = hf.get(&swapped, j * nf + i);
                            prop_assert!(rel_close(a, b, 1e-12), "r={} l={}: {} vs {}", r, l, a, b);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn tensor_product_norm_factorises(seed in any::<u64>(), n in 2usize..5, q in 1usize..4, p in 1usize..4) {
        let mut rng = common::rng(seed);
        let g = common::grid(&mut rng, n, 0.2, 2.0);
        let f = common::sym_kernel(&mut rng, &g, q, 0);
        let h = common::sym_kernel(&mut rng, &g, p, 0);
        let t = contract(&f, &h, 0, 0).unwrap();
        prop_assert!(rel_close(inner(&t, &t).unwrap(), inner(&f, &f).unwrap() * inner(&h, &h).unwrap(), 1e-12));
    }

    #[test]
    fn symmetrize_is_a_projection(seed in any::<u64>(), n in 2usize..5, q in 1usize..5, k in 0usize..3) {
        let mut rng = common::rng(seed);
        let g = common::grid(&mut rng, n, 0.2, 2.0);
        let once = common::raw_kernel(&mut rng, &g, q, k).symmetrize();
        // drop the flag so the second pass really averages again
        let unflagged = Kernel::new(g.clone(), q, k, once.values().to_vec()).unwrap();
        let twice = unflagged.symmetrize();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn symmetric_flag_means_permutation_invariance(seed in any::<u64>(), n in 2usize..5, q in 2usize..5) {
        let mut rng = common::rng(seed);
        let g = common::grid(&mut rng, n, 0.2, 2.0);
        let f = common::sym_kernel(&mut rng, &g, q, 2);
        prop_assert!(f.is_symmetric());
        for _ in 0..20 {
            let atoms: Vec<usize> = (0..q).map(|_| rng.random_range(0..n)).collect();
            let mut perm = atoms.clone();
            perm.shuffle(&mut rng);
            for k in 0..2 {
                prop_assert!((f.get(&atoms, k) - f.get(&perm, k)).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn cauchy_schwarz(seed in any::<u64>(), n in 1usize..6, q in 1usize..4) {
        let mut rng = common::rng(seed);
        let g = common::grid(&mut rng, n, 0.1, 3.0);
        let f = common::raw_kernel(&mut rng, &g, q, 0);
        let h = common::raw_kernel(&mut rng, &g, q, 0);
        let fh = inner(&f, &h).unwrap();
        prop_assert!(fh * fh <= norm_sq(&f) * norm_sq(&h) * (1.0 + 1e-12));
    }

    #[test]
    fn json_round_trip(seed in any::<u64>(), n in 1usize..5, q in 1usize..4, k in 0usize..3) {
        let mut rng = common::rng(seed);
        let g = common::grid(&mut rng, n, 0.1, 3.0);
        let f = common::sym_kernel(&mut rng, &g, q, k);
        let back = Kernel::from_json(&f.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.values(), f.values());
        prop_assert_eq!(back.grid().weights(), f.grid().weights());
        prop_assert_eq!(back.is_symmetric(), f.is_symmetric());
    }

    #[test]
    fn expansion_coefficients(q in 1usize..6, p in 1usize..6) {
        for t in product_expansion(q, p) {
            let (r, l) = (t.r as u32, t.l as u32);
            let want = factorial(r) * binomial(q as u32, r) * binomial(p as u32, r) * binomial(r, l);
            prop_assert_eq!(t.coefficient, want);
            prop_assert_eq!(t.result_order, q + p - t.r - t.l);
        }
    }

    #[test]
    fn covariance_is_psd_with_isometric_trace(seed in any::<u64>(), n in 2usize..5, k in 1usize..4) {
        let mut rng = common::rng(seed);
        let g = common::grid(&mut rng, n, 0.2, 2.0);
        let x = common::chaos_vector(&mut rng, &g, 3, k);
        let s = covariance(&x);
        let scale = s.trace().abs().max(1.0);
        prop_assert!(s.min_eigenvalue() >= -1e-10 * scale);
        prop_assert!(rel_close(s.trace(), second_moment(&x), 1e-12));
        prop_assert!((&s.entries - s.entries.transpose()).amax() <= 1e-12 * scale);
    }

    #[test]
    fn fourth_moment_gaps_nonnegative_and_split(seed in any::<u64>(), n in 2usize..4, k in 1usize..3) {
        let mut rng = common::rng(seed);
        let g = common::grid(&mut rng, n, 0.2, 1.5);
        let x = common::chaos_vector(&mut rng, &g, 2, k);
        let fm = fourth_moments(&x).unwrap();
        let scale = fm.m2 * fm.m2;
        prop_assert!(fm.gap_orderwise() >= -1e-9 * scale.max(1.0));
        prop_assert!(fm.min_pair_gap >= -1e-9 * scale.max(1.0));
        prop_assert!(rel_close(fm.gap_orderwise(), fm.gap_orderwise_split(), 1e-10));
    }

    #[test]
    fn beta_scales_with_fourth_power(seed in any::<u64>(), n in 2usize..4, k in 1usize..3) {
        let mut rng = common::rng(seed);
        let g = common::grid(&mut rng, n, 0.2, 1.5);
        let x = common::chaos_vector(&mut rng, &g, 2, k);
        let sp = CovarianceMatrix::identity(x.k_dim());
        let a = contraction_bound(&x, &sp).unwrap();
        let b = contraction_bound(&x.scaled(2.0), &sp).unwrap();
        prop_assert!(rel_close(b.beta.unwrap(), 16.0 * a.beta.unwrap(), 1e-12));
        prop_assert!(rel_close(second_moment(&x.scaled(2.0)), 4.0 * second_moment(&x), 1e-12));
    }

    #[test]
    fn bounds_monotone_in_covariance_distance(seed in any::<u64>(), n in 2usize..4, k in 1usize..3, c in 0.0f64..3.0) {
        let mut rng = common::rng(seed);
        let g = common::grid(&mut rng, n, 0.2, 1.5);
        let x = common::chaos_vector(&mut rng, &g, 2, k);
        let s = covariance(&x);
        let near = CovarianceMatrix { entries: &s.entries + DMatrix::identity(k, k) * c };
        let far = CovarianceMatrix { entries: &s.entries + DMatrix::identity(k, k) * (c + 1.0) };
        let (a, b) = (four_moment_bound(&x, &near).unwrap(), four_moment_bound(&x, &far).unwrap());
        prop_assert!(a.detailed_total().unwrap() <= b.detailed_total().unwrap());
        prop_assert!(a.compact_total().unwrap() <= b.compact_total().unwrap());
        prop_assert!(a.detailed_total().unwrap() <= a.compact_total().unwrap() + 1e-9);
        let (a, b) = (contraction_bound(&x, &near).unwrap(), contraction_bound(&x, &far).unwrap());
        prop_assert!(a.contraction_total().unwrap() <= b.contraction_total().unwrap());
    }

    #[test]
    fn sampling_is_reproducible(seed in any::<u64>(), stream in 0u64..8, n in 1usize..6) {
        let mut rng = common::rng(seed ^ 0x5eed);
        let g = common::grid(&mut rng, n, 0.1, 5.0);
        let spec = RngSpec::new(seed, stream);
        let a = sample(&g, spec);
        prop_assert_eq!(&a.counts, &sample(&g, spec).counts);
        prop_assert_eq!(a.counts.len(), n);
    }

    #[test]
    fn fractional_semigroup(alpha in 0.1f64..0.45, beta in 0.1f64..0.45, c in prop::collection::vec(-1.0f64..1.0, 3)) {
        let grid = TimeGrid::new(512).unwrap();
        let f: Vec<f64> = grid.nodes.iter().map(|&s| c[0] + c[1] * s + c[2] * s * s).collect();
        let ib = frac_integral(&f, &grid, beta, Side::Left).unwrap();
        let iab = frac_integral(&ib, &grid, alpha, Side::Left).unwrap();
        let direct = frac_integral(&f, &grid, alpha + beta, Side::Left).unwrap();
        let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
        let err = iab.iter().zip(&direct).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(err <= 5.0 * grid.h() * scale, "err {}", err);
    }

    #[test]
    fn derivative_inverts_integral(beta in 0.05f64..0.45, c in prop::collection::vec(-1.0f64..1.0, 3)) {
        let grid = TimeGrid::new(512).unwrap();
        let f: Vec<f64> = grid.nodes.iter().map(|&s| c[0] + c[1] * s + c[2] * s * s).collect();
        let back = frac_derivative(&frac_integral(&f, &grid, beta, Side::Left).unwrap(), 0.0, &grid, beta).unwrap();
        let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
        // the error sits at the first nodes and decays like h^{1−β}
        let err = back.iter().zip(&f).skip(8).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(err <= 2.0 * grid.h().powf(1.0 - beta) * scale, "err {}", err);
    }

    #[test]
    fn brownian_kernel_psd(beta in 0.05f64..0.45) {
        let grid = TimeGrid::new(64).unwrap();
        let k = bm_cov_kernel(&FracParams::new(beta, 1.0).unwrap(), &grid);
        let min = k.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-9 * k.amax());
    }

    #[test]
    fn psi_scales_exactly(d in 1usize..3, r in 0.01f64..0.5, a in 0.5f64..2.0, t in 0.01f64..1.0) {
        let cfg = RggConfig::new(d, 10.0, a, RadiusRule::Constant { radius: r }, vec![t, 1.0]).unwrap();
        let ratio = psi(d, cfg.radius_at(t), cfg.half_width_at(t)) / psi(d, cfg.radius_at(1.0), cfg.half_width_at(1.0));
        prop_assert!((ratio - t.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn band_area_symmetric_and_monotone(
        i0 in -1.0f64..1.0, il in 0.0f64..1.0, j0 in -1.0f64..1.0, jl in 0.0f64..1.0, r in 0.0f64..1.0, dr in 0.0f64..0.5,
    ) {
        let (i, j) = ((i0, i0 + il), (j0, j0 + jl));
        let a = band_area(i, j, r);
        prop_assert!((a - band_area(j, i, r)).abs() <= 1e-14);
        prop_assert!(a >= 0.0 && a <= il * jl + 1e-14);
        prop_assert!(band_area(i, j, r + dr) >= a - 1e-14);
    }

    #[test]
    fn edge_count_nondecreasing_in_time(seed in any::<u64>(), d in 1usize..3, lambda in 5.0f64..60.0) {
        let cfg = RggConfig::new(d, lambda, 1.0, RadiusRule::Constant { radius: 0.2 }, vec![0.1, 0.3, 0.5, 0.8, 1.0]).unwrap();
        let mut rng = common::rng(seed);
        let mut pts: Vec<[f64; 2]> = (0..(lambda as usize))
            .map(|_| [rng.random_range(-1.0..1.0), if d == 2 { rng.random_range(-1.0..1.0) } else { 0.0 }])
            .collect();
        pts.sort_by(|p, q| p[0].total_cmp(&q[0]));
        let f = count_edges(&cfg, &pts);
        prop_assert!(f.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(f.iter().all(|v| v % 2.0 == 0.0));
    }
}
