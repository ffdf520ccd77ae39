//! Four-moment and contraction bounds on `d₃(X, Z)` for `Z ~ N(0, S')`.
//!
//! Both bounds are assembled from the exact quantities of
//! [`chaos_algebra`](crate::chaos_algebra). The moment form uses the
//! order-wise fourth moments `E‖F_p‖²‖F_q‖²` and `Σ_q ‖S_q‖²`; the exact gap
//! `E‖X‖⁴ − (E‖X‖²)² − 2‖S‖²` is reported alongside for reference.
//!
//! The compact four-moment constant carries `2^{3N−1}` while the contraction
//! prefactor carries `2^{3N−2}`; each is used as stated for its bound.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::chaos_algebra::{
    coeff_a, coeff_b, coeff_c, fourth_moments, index_set_i, second_moment, ChaosVector, CovarianceMatrix,
};
use crate::error::{Error, Result};
use crate::measure_kernels::contraction_norm_sq;

/// Radicands in `[RADICAND_FLOOR, 0)` are treated as rounding and clamped to 0.
pub const RADICAND_FLOOR: f64 = -1e-9;

pub(crate) fn checked_sqrt(value: f64, term: &str) -> Result<f64> {
    if value.is_nan() || value < RADICAND_FLOOR {
        return Err(Error::NegativeRadicand { term: term.to_string(), value });
    }
    Ok(value.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Covariance,
    OrderGap,
    CrossOrder,
    Remainder,
    Compact,
    SingleChaos,
    BetaA,
    BetaB,
    BetaC,
    Contraction,
}

impl TermKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TermKind::Covariance => "covariance",
            TermKind::OrderGap => "order_gap",
            TermKind::CrossOrder => "cross_order",
            TermKind::Remainder => "remainder",
            TermKind::Compact => "compact",
            TermKind::SingleChaos => "single_chaos",
            TermKind::BetaA => "beta_a",
            TermKind::BetaB => "beta_b",
            TermKind::BetaC => "beta_c",
            TermKind::Contraction => "contraction",
        }
    }
}

/// One summand of a bound. Index fields that do not apply are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTerm {
    pub kind: TermKind,
    pub q: Option<usize>,
    pub p: Option<usize>,
    pub r: Option<usize>,
    pub s: Option<usize>,
    pub l: Option<usize>,
    pub m: Option<usize>,
    pub coefficient: f64,
    pub value: f64,
}

impl BoundTerm {
    fn new(kind: TermKind, coefficient: f64, value: f64) -> Self {
        Self { kind, q: None, p: None, r: None, s: None, l: None, m: None, coefficient, value }
    }

    fn qp(mut self, q: usize, p: usize) -> Self {
        self.q = Some(q);
        self.p = Some(p);
        self
    }

    fn rslm(mut self, r: usize, s: usize, l: usize, m: usize) -> Self {
        self.r = Some(r);
        self.s = Some(s);
        self.l = Some(l);
        self.m = Some(m);
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct BoundReport {
    /// `½‖S − S'‖_HS`.
    pub covariance_term: f64,
    pub moment_term_detailed: Option<f64>,
    pub moment_term_compact: Option<f64>,
    /// Only set when `X` lives in a single chaos.
    pub moment_term_single_chaos: Option<f64>,
    /// Order-wise gap `Σ_{p,q} E‖F_p‖²‖F_q‖² − (E‖X‖²)² − 2Σ_q‖S_q‖²`.
    pub fourth_moment_gap: Option<f64>,
    /// `E‖X‖⁴ − (E‖X‖²)² − 2‖S‖²` with the exact fourth moment.
    pub fourth_moment_gap_exact: Option<f64>,
    pub beta: Option<f64>,
    pub contraction_prefactor: Option<f64>,
    pub terms: Vec<BoundTerm>,
}

impl BoundReport {
    pub fn detailed_total(&self) -> Option<f64> {
        self.moment_term_detailed.map(|m| m + self.covariance_term)
    }

    pub fn compact_total(&self) -> Option<f64> {
        self.moment_term_compact.map(|m| m + self.covariance_term)
    }

    /// `prefactor · √β + ½‖S − S'‖`.
    pub fn contraction_total(&self) -> Option<f64> {
        Some(self.contraction_term()? + self.covariance_term)
    }

    pub fn contraction_term(&self) -> Option<f64> {
        Some(self.contraction_prefactor? * self.beta?.max(0.0).sqrt())
    }

    /// Writes `term_kind,q,p,r,s,l,m,value` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["term_kind", "q", "p", "r", "s", "l", "m", "value"])?;
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        for t in &self.terms {
            out.write_record([
                t.kind.as_str().to_string(),
                opt(t.q),
                opt(t.p),
                opt(t.r),
                opt(t.s),
                opt(t.l),
                opt(t.m),
                format!("{:.17e}", t.value),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn hs_diff(s: &CovarianceMatrix, sp: &CovarianceMatrix) -> Result<f64> {
    if s.entries.shape() != sp.entries.shape() {
        return Err(Error::ShapeMismatch(format!(
            "covariances of dimension {} and {}",
            s.dim(),
            sp.dim()
        )));
    }
    Ok((&s.entries - &sp.entries).iter().map(|v| v * v).sum::<f64>().sqrt())
}

pub fn four_moment_bound(x: &ChaosVector, sp: &CovarianceMatrix) -> Result<BoundReport> {
    let fm = fourth_moments(x)?;
    let cov = 0.5 * hs_diff(&fm.s, sp)?;
    let orders: Vec<usize> = fm.m2_by_order.keys().copied().collect();
    let n = fm.max_order() as f64;
    let mut terms = vec![BoundTerm::new(TermKind::Covariance, 0.5, cov)];

    let mut detailed = 0.0;
    let mut weighted_gaps = 0.0;
    for &q in &orders {
        let gap = fm.order_gap(q);
        let root = checked_sqrt(gap, &format!("order gap q={q}"))?;
        let coef = (2 * q - 1) as f64 / (4 * q) as f64;
        detailed += coef * root;
        terms.push(BoundTerm::new(TermKind::OrderGap, coef, coef * root).qp(q, q));
        weighted_gaps += 2f64.powi(3 * q as i32 - 1) * (4 * q - 3) as f64 * gap.max(0.0);
    }
    for &q in &orders {
        for &p in &orders {
            if p == q {
                continue;
            }
            let root = checked_sqrt(fm.cross_gap(p, q), &format!("cross gap p={p}, q={q}"))?;
            let coef = (p + q - 1) as f64 / (4 * p) as f64;
            detailed += coef * root;
            terms.push(BoundTerm::new(TermKind::CrossOrder, coef, coef * root).qp(q, p));
        }
    }
    let coef = (n * fm.m2).sqrt();
    let remainder = coef * weighted_gaps.sqrt();
    detailed += remainder;
    terms.push(BoundTerm::new(TermKind::Remainder, coef, remainder));

    let gap = fm.gap_orderwise();
    let root = checked_sqrt(gap, "fourth-moment gap")?;
    let coef = n * (2.0 * n - 1.0) / 4.0 + (2f64.powf(3.0 * n - 1.0) * n * (4.0 * n - 3.0) * fm.m2).sqrt();
    let compact = coef * root;
    terms.push(BoundTerm::new(TermKind::Compact, coef, compact));

    let single = if orders.len() == 1 {
        let q = orders[0] as f64;
        let coef = (2.0 * q - 1.0) / (4.0 * q)
            + (2f64.powf(3.0 * q - 1.0) * (4.0 * q - 3.0) * q * fm.m2).sqrt();
        terms.push(BoundTerm::new(TermKind::SingleChaos, coef, coef * root).qp(orders[0], orders[0]));
        Some(coef * root)
    } else {
        None
    };

    Ok(BoundReport {
        covariance_term: cov,
        moment_term_detailed: Some(detailed),
        moment_term_compact: Some(compact),
        moment_term_single_chaos: single,
        fourth_moment_gap: Some(gap),
        fourth_moment_gap_exact: Some(fm.gap()),
        terms,
        ..Default::default()
    })
}

/// Source of the contraction norms `‖f_q ⋆ˡᵣ f_p‖²` summed over K⊗K.
pub trait ContractionNorms {
    /// Chaos orders carrying a kernel.
    fn orders(&self) -> Vec<usize>;
    fn contraction_norm_sq(&self, q: usize, p: usize, r: usize, l: usize) -> Result<f64>;
    /// `E‖X‖²`.
    fn second_moment(&self) -> f64;
}

impl ContractionNorms for ChaosVector {
    fn orders(&self) -> Vec<usize> {
        ChaosVector::orders(self).collect()
    }

    fn contraction_norm_sq(&self, q: usize, p: usize, r: usize, l: usize) -> Result<f64> {
        let missing = |o| Error::InvalidArgument(format!("no kernel of order {o}"));
        let f = self.kernel(q).ok_or_else(|| missing(q))?;
        let g = self.kernel(p).ok_or_else(|| missing(p))?;
        contraction_norm_sq(f, g, r, l)
    }

    fn second_moment(&self) -> f64 {
        second_moment(self)
    }
}

/// Every `(q, p, r, l)` whose norm enters `β`.
pub fn required_contractions(orders: &[usize]) -> Vec<(usize, usize, usize, usize)> {
    let mut out = std::collections::BTreeSet::new();
    for &q in orders {
        for &p in orders {
            let m = q.min(p);
            if q != p {
                out.insert((q, p, m, m));
            }
            for r in 1..m {
                out.insert((q, p, r, r));
            }
            for (r, s, l, mm) in index_set_i(q, p) {
                out.insert((q, p, r, l));
                out.insert((q, p, s, mm));
            }
        }
    }
    out.into_iter().collect()
}

/// `β` and its summands, with norms drawn from `norms`.
pub fn beta_terms<N: ContractionNorms + ?Sized>(norms: &N) -> Result<(f64, Vec<BoundTerm>)> {
    let orders = norms.orders();
    let mut cache = BTreeMap::new();
    for key in required_contractions(&orders) {
        let (q, p, r, l) = key;
        cache.insert(key, norms.contraction_norm_sq(q, p, r, l)?);
    }
    let mut beta = 0.0;
    let mut terms = Vec::new();
    for &q in &orders {
        for &p in &orders {
            let m = q.min(p);
            if q != p {
                let c = coeff_a(p, q, m)? as f64;
                let v = c * cache[&(q, p, m, m)];
                beta += v;
                terms.push(BoundTerm::new(TermKind::BetaA, c, v).qp(q, p).rslm(m, m, m, m));
            }
            for r in 1..m {
                let c = coeff_b(p, q, r)? as f64;
                let v = c * cache[&(q, p, r, r)];
                beta += v;
                terms.push(BoundTerm::new(TermKind::BetaB, c, v).qp(q, p).rslm(r, r, r, r));
            }
            for (r, s, l, mm) in index_set_i(q, p) {
                let c = coeff_c(p, q, l, mm, r, s)? as f64;
                let v = c * cache[&(q, p, r, l)].sqrt() * cache[&(q, p, s, mm)].sqrt();
                beta += v;
                terms.push(BoundTerm::new(TermKind::BetaC, c, v).qp(q, p).rslm(r, s, l, mm));
            }
        }
    }
    Ok((beta, terms))
}

/// `N(2N−1)/4 + √(2^{3N−2} N (4N−3) E‖X‖²)`.
pub fn contraction_prefactor(n: usize, m2: f64) -> f64 {
    let n = n as f64;
    n * (2.0 * n - 1.0) / 4.0 + (2f64.powf(3.0 * n - 2.0) * n * (4.0 * n - 3.0) * m2).sqrt()
}

/// Contraction bound from precomputed norms and a covariance mismatch `‖S − S'‖_HS`.
pub fn contraction_bound_from<N: ContractionNorms + ?Sized>(norms: &N, hs: f64) -> Result<BoundReport> {
    let (beta, mut terms) = beta_terms(norms)?;
    let n = norms.orders().into_iter().max().unwrap_or(0);
    let pre = contraction_prefactor(n, norms.second_moment());
    let cov = 0.5 * hs;
    terms.insert(0, BoundTerm::new(TermKind::Covariance, 0.5, cov));
    terms.push(BoundTerm::new(TermKind::Contraction, pre, pre * beta.max(0.0).sqrt()));
    Ok(BoundReport {
        covariance_term: cov,
        beta: Some(beta),
        contraction_prefactor: Some(pre),
        terms,
        ..Default::default()
    })
}

pub fn contraction_bound(x: &ChaosVector, sp: &CovarianceMatrix) -> Result<BoundReport> {
    let s = crate::chaos_algebra::covariance(x);
    contraction_bound_from(x, hs_diff(&s, sp)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos_algebra::covariance;
    use crate::measure_kernels::{Kernel, MeasureGrid};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_x(seed: u64, orders: &[usize], k: usize) -> ChaosVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Arc::new(MeasureGrid::from_weights((0..3).map(|_| rng.random_range(0.2..1.0)).collect()).unwrap());
        let ks = orders
            .iter()
            .map(|&q| {
                Kernel::from_fn(g.clone(), q, k, |_, _| rng.random_range(-1.0..1.0))
                    .unwrap()
                    .symmetrize()
            })
            .collect();
        ChaosVector::new(ks).unwrap()
    }

    #[test]
    fn hs_examples() {
        let a = CovarianceMatrix::new(DMatrix::from_diagonal_element(2, 2, 0.0)).unwrap();
        assert_eq!(hs_diff(&a, &a).unwrap(), 0.0);
        let d1 = CovarianceMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        let d2 = CovarianceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).unwrap();
        assert!((hs_diff(&d1, &d2).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(hs_diff(&d1, &CovarianceMatrix::zeros(3)).is_err());
    }

    #[test]
    fn radicand_floor() {
        assert_eq!(checked_sqrt(-5e-10, "t").unwrap(), 0.0);
        assert!(matches!(checked_sqrt(-1e-6, "t"), Err(Error::NegativeRadicand { .. })));
    }

    #[test]
    fn single_chaos_coefficient_present() {
        let x = random_x(1, &[1], 2);
        let s = covariance(&x);
        let rep = four_moment_bound(&x, &s).unwrap();
        let t = rep.terms.iter().find(|t| t.kind == TermKind::OrderGap).unwrap();
        assert_eq!(t.coefficient, 0.25);
        assert!(rep.moment_term_single_chaos.is_some());
        assert_eq!(rep.covariance_term, 0.0);
    }

    #[test]
    fn detailed_below_compact() {
        for seed in 0..10 {
            let x = random_x(seed, &[1, 2], 2);
            let rep = four_moment_bound(&x, &CovarianceMatrix::identity(2)).unwrap();
            assert!(rep.detailed_total().unwrap() <= rep.compact_total().unwrap() + 1e-9);
        }
    }

    #[test]
    fn seven_norms_for_orders_one_two() {
        let req = required_contractions(&[1, 2]);
        let mut canon: Vec<_> = req
            .iter()
            .map(|&(q, p, r, l)| (q.min(p), q.max(p), r, l))
            .collect();
        canon.sort();
        canon.dedup();
        assert_eq!(
            canon,
            vec![(1, 1, 1, 0), (1, 2, 1, 0), (1, 2, 1, 1), (2, 2, 1, 0), (2, 2, 1, 1), (2, 2, 2, 0), (2, 2, 2, 1)]
        );
    }

    #[test]
    fn q1_single_chaos_beta_by_hand() {
        let x = random_x(3, &[1], 2);
        let (beta, _) = beta_terms(&x).unwrap();
        let f = x.kernel(1).unwrap();
        let want = contraction_norm_sq(f, f, 1, 0).unwrap();
        assert!((beta - want).abs() < 1e-14 * want);
    }

    #[test]
    fn beta_dominates_gap() {
        for seed in 0..10 {
            let x = random_x(seed, &[1, 2], 2);
            let (beta, _) = beta_terms(&x).unwrap();
            let gap = fourth_moments(&x).unwrap().gap_orderwise();
            assert!(beta >= gap - 1e-9 * beta, "{beta} < {gap}");
        }
    }

    #[test]
    fn beta_scales_quartically() {
        let x = random_x(4, &[1, 2], 2);
        let (b1, _) = beta_terms(&x).unwrap();
        let (b2, _) = beta_terms(&x.scaled(2.0)).unwrap();
        assert!((b2 - 16.0 * b1).abs() < 1e-12 * b2);
    }

    #[test]
    fn disjoint_indicators_kill_shared_contractions() {
        let g = Arc::new(MeasureGrid::uniform(2, 1.0).unwrap());
        let f1 = Kernel::new(g.clone(), 1, 1, vec![1.0, 0.0]).unwrap();
        let f2 = Kernel::new(g, 2, 1, vec![0.0, 0.0, 0.0, 1.0]).unwrap().assume_symmetric(0.0).unwrap();
        let x = ChaosVector::new(vec![f1, f2]).unwrap();
        assert_eq!(x.contraction_norm_sq(1, 2, 1, 0).unwrap(), 0.0);
        assert_eq!(x.contraction_norm_sq(1, 2, 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn csv_header() {
        let x = random_x(5, &[1], 1);
        let rep = contraction_bound(&x, &CovarianceMatrix::zeros(1)).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("term_kind,q,p,r,s,l,m,value\n"));
        assert!(s.contains("beta_c,1,1,1,1,0,0,"));
    }
}
