//! Chaos-level algebra for finite Poisson chaos expansions.
//!
//! Moments are computed from kernels alone via the isometry and the product
//! formula, never by simulation. Two flavours of fourth moment are provided:
//! the exact `E‖X‖⁴` of `X = Σ_q F_q`, and the order-wise sums
//! `E‖F_p‖²‖F_q‖²` that the four-moment and contraction bounds are phrased in.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::combinatorics::{binomial, checked_product, factorial};
use crate::error::{Error, Result};
use crate::measure_kernels::{contract, gram, inner, norm_sq, same_grid, Kernel, MeasureGrid};

/// `X = Σ_{q=1}^N I_q(f_q)` with K-valued symmetric kernels `f_q`.
#[derive(Debug, Clone)]
pub struct ChaosVector {
    grid: Arc<MeasureGrid>,
    k_dim: usize,
    kernels: BTreeMap<usize, Kernel>,
}

impl ChaosVector {
    /// Scalar kernels (`k_dim == 0`) are treated as one-dimensional K.
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        let first = kernels
            .first()
            .ok_or_else(|| Error::InvalidArgument("chaos vector needs at least one kernel".into()))?;
        let grid = first.grid().clone();
        let k_dim = first.n_slices();
        let mut map = BTreeMap::new();
        for k in kernels {
            if k.order() == 0 {
                return Err(Error::InvalidArgument("chaos orders start at 1".into()));
            }
            if !k.is_symmetric() {
                return Err(Error::NotSymmetric);
            }
            if !same_grid(k.grid(), &grid) || k.n_slices() != k_dim {
                return Err(Error::ShapeMismatch("chaos kernels must share grid and k_dim".into()));
            }
            if map.insert(k.order(), k).is_some() {
                return Err(Error::InvalidArgument("duplicate chaos order".into()));
            }
        }
        Ok(Self { grid, k_dim, kernels: map })
    }

    pub fn grid(&self) -> &Arc<MeasureGrid> {
        &self.grid
    }

    pub fn k_dim(&self) -> usize {
        self.k_dim
    }

    /// Highest chaos order `N`.
    pub fn max_order(&self) -> usize {
        *self.kernels.keys().next_back().unwrap()
    }

    pub fn orders(&self) -> impl Iterator<Item = usize> + '_ {
        self.kernels.keys().copied()
    }

    pub fn kernel(&self, q: usize) -> Option<&Kernel> {
        self.kernels.get(&q)
    }

    pub fn kernels(&self) -> impl Iterator<Item = (usize, &Kernel)> {
        self.kernels.iter().map(|(q, k)| (*q, k))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            k_dim: self.k_dim,
            kernels: self.kernels.iter().map(|(q, k)| (*q, k.scaled(c))).collect(),
        }
    }
}

/// Covariance operator in the truncated K basis.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub entries: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::ShapeMismatch("covariance must be square".into()));
        }
        Ok(Self { entries })
    }

    pub fn zeros(k: usize) -> Self {
        Self { entries: DMatrix::zeros(k, k) }
    }

    pub fn identity(k: usize) -> Self {
        Self { entries: DMatrix::identity(k, k) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn hs_norm_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.entries + self.entries.transpose()) * 0.5;
        sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpansionTerm {
    pub r: usize,
    pub l: usize,
    pub coefficient: u128,
    pub result_order: usize,
}

/// Terms of `I_q(f) I_p(g) = Σ_r r! C(q,r) C(p,r) Σ_l C(r,l) I_{q+p-r-l}(f ⋆ˡᵣ g)`.
pub fn product_expansion(q: usize, p: usize) -> Vec<ExpansionTerm> {
    let mut out = Vec::new();
    for r in 0..=q.min(p) {
        let base = factorial(r as u32) * binomial(q as u32, r as u32) * binomial(p as u32, r as u32);
        for l in 0..=r {
            out.push(ExpansionTerm {
                r,
                l,
                coefficient: base * binomial(r as u32, l as u32),
                result_order: q + p - r - l,
            });
        }
    }
    out
}

fn check_rq(p: usize, q: usize, r: usize) -> Result<()> {
    if p == 0 || q == 0 || r > p.min(q) {
        return Err(Error::InvalidArgument(format!("invalid coefficient index p={p}, q={q}, r={r}")));
    }
    Ok(())
}

pub fn coeff_a(p: usize, q: usize, r: usize) -> Result<u128> {
    check_rq(p, q, r)?;
    let (p32, q32, r32) = (p as u32, q as u32, r as u32);
    let first = checked_product(&[factorial(p32), factorial(q32), binomial(q32, r32), binomial(p32, r32)])?;
    let second = checked_product(&[
        factorial(r32),
        factorial(r32),
        binomial(q32, r32),
        binomial(q32, r32),
        binomial(p32, r32),
        binomial(p32, r32),
        factorial(p.abs_diff(q) as u32),
    ])?;
    first
        .checked_add(second)
        .ok_or_else(|| Error::InvalidArgument("coefficient overflow".into()))
}

pub fn coeff_b(p: usize, q: usize, r: usize) -> Result<u128> {
    check_rq(p, q, r)?;
    let (p32, q32, r32) = (p as u32, q as u32, r as u32);
    checked_product(&[factorial(p32), factorial(q32), binomial(q32, r32), binomial(p32, r32)])
}

pub fn coeff_c(p: usize, q: usize, l: usize, m: usize, r: usize, s: usize) -> Result<u128> {
    check_rq(p, q, r)?;
    check_rq(p, q, s)?;
    if l > r || m > s {
        return Err(Error::InvalidArgument(format!("invalid coefficient index l={l}, m={m}")));
    }
    let (p32, q32) = (p as u32, q as u32);
    let (r32, s32, l32, m32) = (r as u32, s as u32, l as u32, m as u32);
    checked_product(&[
        factorial(r32),
        factorial(s32),
        binomial(q32, r32),
        binomial(q32, s32),
        binomial(p32, r32),
        binomial(p32, s32),
        binomial(r32, l32),
        binomial(s32, m32),
        factorial(p32 + q32 - r32 - l32),
    ])
}

/// `(r, s, l, m)` with `r + l = s + m`, excluding both all-zero and all-`q∧p` corners.
pub fn index_set_i(q: usize, p: usize) -> Vec<(usize, usize, usize, usize)> {
    let mm = q.min(p);
    let mut out = Vec::new();
    for r in 0..=mm {
        for s in 0..=mm {
            for l in 0..=r {
                for m in 0..=s {
                    if r + l != s + m || (r, s, l, m) == (0, 0, 0, 0) || (r, s, l, m) == (mm, mm, mm, mm) {
                        continue;
                    }
                    out.push((r, s, l, m));
                }
            }
        }
    }
    out
}

/// Scalar chaos expansion `c + Σ_k I_k(g_k)`.
#[derive(Debug, Clone)]
pub struct ScalarChaos {
    pub constant: f64,
    pub kernels: BTreeMap<usize, Kernel>,
}

impl ScalarChaos {
    pub fn mean(&self) -> f64 {
        self.constant
    }

    /// `E[Y²] = c² + Σ_k k! ‖g_k‖²`.
    pub fn second_moment(&self) -> f64 {
        self.constant * self.constant
            + self.kernels.iter().map(|(k, g)| factorial(*k as u32) as f64 * norm_sq(g)).sum::<f64>()
    }

    pub fn variance(&self) -> f64 {
        self.kernels.iter().map(|(k, g)| factorial(*k as u32) as f64 * norm_sq(g)).sum()
    }

    fn add_scaled(&mut self, c: f64, other: &ScalarChaos) -> Result<()> {
        self.constant += c * other.constant;
        for (k, g) in &other.kernels {
            let entry = match self.kernels.remove(k) {
                Some(e) => e.axpy(c, g)?,
                None => g.scaled(c),
            };
            self.kernels.insert(*k, entry);
        }
        Ok(())
    }
}

fn check_scalar(f: &Kernel) -> Result<()> {
    if f.k_dim() != 0 {
        return Err(Error::ShapeMismatch("expected a scalar kernel".into()));
    }
    Ok(())
}

/// Chaos expansion of `I_q(f) I_p(g)` for scalar kernels; every component is symmetrized.
pub fn product_chaos(f: &Kernel, g: &Kernel) -> Result<ScalarChaos> {
    check_scalar(f)?;
    check_scalar(g)?;
    let (f, g) = (f.symmetrize(), g.symmetrize());
    let mut out = ScalarChaos { constant: 0.0, kernels: BTreeMap::new() };
    for term in product_expansion(f.order(), g.order()) {
        let c = contract(&f, &g, term.r, term.l)?;
        let coef = term.coefficient as f64;
        if term.result_order == 0 {
            out.constant += coef * c.values()[0];
            continue;
        }
        let c = c.symmetrize();
        let entry = match out.kernels.remove(&term.result_order) {
            Some(e) => e.axpy(coef, &c)?,
            None => c.scaled(coef),
        };
        out.kernels.insert(term.result_order, entry);
    }
    Ok(out)
}

/// Chaos expansion of `Γ̃(I_q(f), I_p(g))`: the order-`k` component of the
/// product is weighted by `(q + p - k) / 2`.
pub fn gamma_tilde(f: &Kernel, g: &Kernel) -> Result<ScalarChaos> {
    let (q, p) = (f.order(), g.order());
    let prod = product_chaos(f, g)?;
    let mult = |k: usize| (q + p - k) as f64 / 2.0;
    Ok(ScalarChaos {
        constant: mult(0) * prod.constant,
        kernels: prod.kernels.into_iter().map(|(k, h)| (k, h.scaled(mult(k)))).collect(),
    })
}

/// `S_q` for a single order.
pub fn covariance_of_order(f: &Kernel) -> Result<CovarianceMatrix> {
    let m = gram(f, f)? * factorial(f.order() as u32) as f64;
    CovarianceMatrix::new(m)
}

pub fn covariance(x: &ChaosVector) -> CovarianceMatrix {
    let mut s = CovarianceMatrix::zeros(x.k_dim());
    for (_, f) in x.kernels() {
        s.entries += covariance_of_order(f).expect("kernels share a grid").entries;
    }
    s
}

pub fn second_moment(x: &ChaosVector) -> f64 {
    x.kernels().map(|(q, f)| factorial(q as u32) as f64 * norm_sq(f)).sum()
}

/// `E[I_q(f)² I_p(g)²]` through the contraction expansion with coefficients
/// `coeff_c`, summing over all `(r, s, l, m)` with `r + l = s + m`.
pub fn pair_fourth_moment(f: &Kernel, g: &Kernel) -> Result<f64> {
    check_scalar(f)?;
    check_scalar(g)?;
    let (q, p) = (f.order(), g.order());
    let (f, g) = (f.symmetrize(), g.symmetrize());
    let mut sym = BTreeMap::new();
    for r in 0..=q.min(p) {
        for l in 0..=r {
            sym.insert((r, l), contract(&f, &g, r, l)?.symmetrize());
        }
    }
    let mut total = 0.0;
    for (&(r, l), a) in &sym {
        for (&(s, m), b) in &sym {
            if r + l != s + m {
                continue;
            }
            total += coeff_c_any(p, q, l, m, r, s)? as f64 * inner(a, b)?;
        }
    }
    Ok(total)
}

/// `coeff_c` extended to `r = 0` or `s = 0`, which the contraction bound
/// excludes only through its index set.
fn coeff_c_any(p: usize, q: usize, l: usize, m: usize, r: usize, s: usize) -> Result<u128> {
    let (p32, q32) = (p as u32, q as u32);
    let (r32, s32, l32, m32) = (r as u32, s as u32, l as u32, m as u32);
    checked_product(&[
        factorial(r32),
        factorial(s32),
        binomial(q32, r32),
        binomial(q32, s32),
        binomial(p32, r32),
        binomial(p32, s32),
        binomial(r32, l32),
        binomial(s32, m32),
        factorial(p32 + q32 - r32 - l32),
    ])
}

/// Exact fourth-order moment data of a chaos vector.
#[derive(Debug, Clone)]
pub struct FourthMoments {
    /// `E‖X‖²`.
    pub m2: f64,
    /// `E‖F_q‖²`.
    pub m2_by_order: BTreeMap<usize, f64>,
    pub s: CovarianceMatrix,
    pub s_by_order: BTreeMap<usize, CovarianceMatrix>,
    /// Exact `E‖X‖⁴`.
    pub m4: f64,
    /// `E‖F_p‖²‖F_q‖²`, keyed by `(p, q)` with both orders present.
    pub m4_by_pair: BTreeMap<(usize, usize), f64>,
    /// Smallest per-slice gap `E[F²G²] - E[F²]E[G²] - 2E[FG]²` over all slice pairs.
    pub min_pair_gap: f64,
}

impl FourthMoments {
    pub fn max_order(&self) -> usize {
        *self.m2_by_order.keys().next_back().unwrap()
    }

    /// `E‖F_q‖⁴ - (E‖F_q‖²)² - 2‖S_q‖²`.
    pub fn order_gap(&self, q: usize) -> f64 {
        let m2 = self.m2_by_order[&q];
        self.m4_by_pair[&(q, q)] - m2 * m2 - 2.0 * self.s_by_order[&q].hs_norm_sq()
    }

    /// `E‖F_p‖²‖F_q‖² - E‖F_p‖² E‖F_q‖²`.
    pub fn cross_gap(&self, p: usize, q: usize) -> f64 {
        self.m4_by_pair[&(p, q)] - self.m2_by_order[&p] * self.m2_by_order[&q]
    }

    /// `E‖X‖⁴ - (E‖X‖²)² - 2‖S‖²` with the true covariance.
    pub fn gap(&self) -> f64 {
        self.m4 - self.m2 * self.m2 - 2.0 * self.s.hs_norm_sq()
    }

    /// `Σ_{p,q} E‖F_p‖²‖F_q‖²`, the fourth moment with cross-order products dropped.
    pub fn m4_orderwise(&self) -> f64 {
        self.m4_by_pair.values().sum()
    }

    /// `Σ_{p,q} E‖F_p‖²‖F_q‖² - (E‖X‖²)² - 2 Σ_q ‖S_q‖²`.
    pub fn gap_orderwise(&self) -> f64 {
        let s_sq: f64 = self.s_by_order.values().map(|s| s.hs_norm_sq()).sum();
        self.m4_orderwise() - self.m2 * self.m2 - 2.0 * s_sq
    }

    /// The same quantity split into same-order and cross-order pieces.
    pub fn gap_orderwise_split(&self) -> f64 {
        let orders: Vec<usize> = self.m2_by_order.keys().copied().collect();
        let mut total = 0.0;
        for &q in &orders {
            total += self.order_gap(q);
            for &p in &orders {
                if p != q {
                    total += self.cross_gap(p, q);
                }
            }
        }
        total
    }
}

/// Exact fourth moments of `X`.
///
/// `m4` expands every product `X_i X_j` into chaos and applies the isometry,
/// so cross-order products `F_{q,i} F_{p,j}` with `q != p` are included.
pub fn fourth_moments(x: &ChaosVector) -> Result<FourthMoments> {
    let orders: Vec<usize> = x.orders().collect();
    let k = x.k_dim();
    let slices: BTreeMap<(usize, usize), Kernel> = x
        .kernels()
        .flat_map(|(q, f)| (0..k).map(move |i| ((q, i), f.slice(i))))
        .collect();

    let mut m2_by_order = BTreeMap::new();
    let mut s_by_order = BTreeMap::new();
    let mut s = CovarianceMatrix::zeros(k);
    for (q, f) in x.kernels() {
        let sq = covariance_of_order(f)?;
        m2_by_order.insert(q, sq.trace());
        s.entries += &sq.entries;
        s_by_order.insert(q, sq);
    }
    let m2 = s.trace();

    let mut m4_by_pair: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut min_pair_gap = f64::INFINITY;
    let mut m4 = 0.0;
    for i in 0..k {
        for j in 0..k {
            // (i, j) and (j, i) differ order by order, so every ordered pair is visited
            let mut xij = ScalarChaos { constant: 0.0, kernels: BTreeMap::new() };
            for &q in &orders {
                for &p in &orders {
                    let fq = &slices[&(q, i)];
                    let fp = &slices[&(p, j)];
                    let prod = product_chaos(fq, fp)?;
                    let e_sq = prod.second_moment();
                    *m4_by_pair.entry((q, p)).or_default() += e_sq;
                    let efq = factorial(q as u32) as f64 * norm_sq(fq);
                    let efp = factorial(p as u32) as f64 * norm_sq(fp);
                    let cross = if q == p { factorial(q as u32) as f64 * inner(fq, fp)? } else { 0.0 };
                    min_pair_gap = min_pair_gap.min(e_sq - efq * efp - 2.0 * cross * cross);
                    if j >= i {
                        xij.add_scaled(1.0, &prod)?;
                    }
                }
            }
            if j >= i {
                let mult = if i == j { 1.0 } else { 2.0 };
                m4 += mult * xij.second_moment();
            }
        }
    }
    Ok(FourthMoments { m2, m2_by_order, s, s_by_order, m4, m4_by_pair, min_pair_gap })
}

/// Exact `E‖X‖⁴`.
pub fn fourth_moment_expansion(x: &ChaosVector) -> Result<f64> {
    Ok(fourth_moments(x)?.m4)
}

/// Both sides of `(q+p)! ‖f ⊗̃ g‖² = q!p!‖f‖²‖g‖² + q!²⟨f,g⟩² 1{q=p}
/// + q!p! C(q,m) C(p,m) ‖f ⋆ᵐₘ g‖² 1{q≠p} + Σ_{r=1}^{m-1} q!p! C(q,r) C(p,r) ‖f ⋆ʳᵣ g‖²`
/// with `m = q ∧ p`.
pub fn contraction00_identity_check(f: &Kernel, g: &Kernel) -> Result<(f64, f64)> {
    check_scalar(f)?;
    check_scalar(g)?;
    let (q, p) = (f.order(), g.order());
    let m = q.min(p);
    let (f, g) = (f.symmetrize(), g.symmetrize());
    let lhs = factorial((q + p) as u32) as f64 * norm_sq(&contract(&f, &g, 0, 0)?.symmetrize());
    let qp = (factorial(q as u32) * factorial(p as u32)) as f64;
    let mut rhs = qp * norm_sq(&f) * norm_sq(&g);
    if q == p {
        let fg = inner(&f, &g)?;
        rhs += (factorial(q as u32) as f64).powi(2) * fg * fg;
    } else {
        let c = (binomial(q as u32, m as u32) * binomial(p as u32, m as u32)) as f64;
        rhs += qp * c * norm_sq(&contract(&f, &g, m, m)?);
    }
    for r in 1..m {
        let c = (binomial(q as u32, r as u32) * binomial(p as u32, r as u32)) as f64;
        rhs += qp * c * norm_sq(&contract(&f, &g, r, r)?);
    }
    Ok((lhs, rhs))
}
