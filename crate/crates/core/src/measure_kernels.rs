//! Atomic measure spaces and order-`q` kernel tensors.
//!
//! A [`MeasureGrid`] is a finite set of atoms with positive masses. A
//! [`Kernel`] of order `q` stores one dense `n^q` tensor per K-slice, with
//! atom tuples flattened lexicographically (first slot slowest). Scalar
//! kernels have `k_dim == 0` and a single slice.
//!
//! Contractions follow the usual slot convention: in `f ⋆ˡᵣ g` the first `l`
//! identified slots are integrated against the atom weights, the next `r - l`
//! identified slots stay shared, then come the `q - r` free slots of `f` and
//! the `p - r` free slots of `g`. When both inputs are K-valued the output
//! slice for `(i, j)` sits at index `i * k_g + j`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::combinatorics::permutations;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureGrid {
    atoms: Vec<String>,
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<Vec<f64>>>,
}

impl MeasureGrid {
    pub fn new(atoms: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        Self::with_coords(atoms, weights, None)
    }

    pub fn with_coords(
        atoms: Vec<String>,
        weights: Vec<f64>,
        coords: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidGrid("no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::InvalidGrid(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidGrid(format!("weight {w} is not positive and finite")));
        }
        let mut sorted: Vec<&String> = atoms.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::InvalidGrid("duplicate atom labels".into()));
        }
        if let Some(c) = &coords {
            if c.len() != atoms.len() {
                return Err(Error::InvalidGrid("coordinate count differs from atom count".into()));
            }
        }
        Ok(Self { atoms, weights, coords })
    }

    /// Atoms labelled `z0, z1, ...` with the given weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let atoms = (0..weights.len()).map(|i| format!("z{i}")).collect();
        Self::new(atoms, weights)
    }

    pub fn uniform(n: usize, weight: f64) -> Result<Self> {
        Self::from_weights(vec![weight; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atoms(&self) -> &[String] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> Option<&[Vec<f64>]> {
        self.coords.as_deref()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Π_k w(a_k)` for every flattened tuple of length `q`.
    pub fn product_weights(&self, q: usize) -> Vec<f64> {
        let mut out = vec![1.0];
        for _ in 0..q {
            let mut next = Vec::with_capacity(out.len() * self.len());
            for &a in &out {
                next.extend(self.weights.iter().map(|w| a * w));
            }
            out = next;
        }
        out
    }
}

pub(crate) fn same_grid(a: &Arc<MeasureGrid>, b: &Arc<MeasureGrid>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

pub(crate) fn decode(mut flat: usize, n: usize, digits: &mut [usize]) {
    for d in digits.iter_mut().rev() {
        *d = flat % n;
        flat /= n;
    }
}

pub(crate) fn encode(digits: &[usize], n: usize) -> usize {
    digits.iter().fold(0, |acc, &d| acc * n + d)
}

#[derive(Debug, Clone)]
pub struct Kernel {
    grid: Arc<MeasureGrid>,
    order: usize,
    k_dim: usize,
    symmetric: bool,
    values: Vec<f64>,
}

impl Kernel {
    /// `values` holds `max(k_dim, 1)` consecutive slices of length `n^order`.
    pub fn new(grid: Arc<MeasureGrid>, order: usize, k_dim: usize, values: Vec<f64>) -> Result<Self> {
        let expected = grid.len().pow(order as u32) * k_dim.max(1);
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} values for order {order}, k_dim {k_dim}, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("kernel values must be finite".into()));
        }
        Ok(Self { grid, order, k_dim, symmetric: order <= 1, values })
    }

    pub fn zeros(grid: Arc<MeasureGrid>, order: usize, k_dim: usize) -> Self {
        let len = grid.len().pow(order as u32) * k_dim.max(1);
        Self { grid, order, k_dim, symmetric: true, values: vec![0.0; len] }
    }

    /// Builds a kernel from `value(atoms, k)`; `k` is 0 for scalar kernels.
    pub fn from_fn(
        grid: Arc<MeasureGrid>,
        order: usize,
        k_dim: usize,
        mut value: impl FnMut(&[usize], usize) -> f64,
    ) -> Result<Self> {
        let n = grid.len();
        let len = n.pow(order as u32);
        let mut values = Vec::with_capacity(len * k_dim.max(1));
        let mut digits = vec![0; order];
        for k in 0..k_dim.max(1) {
            for flat in 0..len {
                decode(flat, n, &mut digits);
                values.push(value(&digits, k));
            }
        }
        Self::new(grid, order, k_dim, values)
    }

    /// Stacks scalar kernels of equal order into a K-valued kernel.
    pub fn stack(slices: &[Kernel]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero slices".into()))?;
        let mut values = Vec::with_capacity(first.slice_len() * slices.len());
        for s in slices {
            if s.k_dim != 0 || s.order != first.order || !same_grid(&s.grid, &first.grid) {
                return Err(Error::ShapeMismatch("stacked slices must be scalar, same order and grid".into()));
            }
            values.extend_from_slice(&s.values);
        }
        let mut out = Self::new(first.grid.clone(), first.order, slices.len(), values)?;
        out.symmetric = slices.iter().all(|s| s.symmetric);
        Ok(out)
    }

    pub fn grid(&self) -> &Arc<MeasureGrid> {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k_dim(&self) -> usize {
        self.k_dim
    }

    pub fn n_slices(&self) -> usize {
        self.k_dim.max(1)
    }

    pub fn slice_len(&self) -> usize {
        self.grid.len().pow(self.order as u32)
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Marks the kernel symmetric after checking every slot permutation.
    pub fn assume_symmetric(mut self, tol: f64) -> Result<Self> {
        let sym = self.symmetrize();
        let scale = self.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if self.values.iter().zip(&sym.values).any(|(a, b)| (a - b).abs() > tol * scale) {
            return Err(Error::NotSymmetric);
        }
        self.symmetric = true;
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice_values(&self, k: usize) -> &[f64] {
        let len = self.slice_len();
        &self.values[k * len..(k + 1) * len]
    }

    pub fn slice(&self, k: usize) -> Kernel {
        Kernel {
            grid: self.grid.clone(),
            order: self.order,
            k_dim: 0,
            symmetric: self.symmetric,
            values: self.slice_values(k).to_vec(),
        }
    }

    pub fn get(&self, atoms: &[usize], k: usize) -> f64 {
        self.values[k * self.slice_len() + encode(atoms, self.grid.len())]
    }

    pub fn scaled(&self, c: f64) -> Kernel {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `self + c * other`, slice by slice.
    pub fn axpy(&self, c: f64, other: &Kernel) -> Result<Kernel> {
        if self.order != other.order || self.k_dim != other.k_dim || !same_grid(&self.grid, &other.grid) {
            return Err(Error::ShapeMismatch("axpy needs equal order, k_dim and grid".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        out.symmetric = self.symmetric && other.symmetric;
        Ok(out)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// True when no tuple with a repeated atom carries an entry above `tol`.
    pub fn is_off_diagonal(&self, tol: f64) -> bool {
        self.first_diagonal_entry(tol).is_none()
    }

    pub(crate) fn first_diagonal_entry(&self, tol: f64) -> Option<(Vec<usize>, f64)> {
        if self.order < 2 {
            return None;
        }
        let n = self.grid.len();
        let len = self.slice_len();
        let mut digits = vec![0; self.order];
        for flat in 0..len {
            decode(flat, n, &mut digits);
            if !has_repeat(&digits) {
                continue;
            }
            for k in 0..self.n_slices() {
                let v = self.values[k * len + flat];
                if v.abs() > tol {
                    return Some((digits.clone(), v));
                }
            }
        }
        None
    }

    /// Sets every entry on a diagonal tuple to zero.
    pub fn zero_diagonals(&self) -> Kernel {
        let mut out = self.clone();
        if self.order < 2 {
            return out;
        }
        let n = self.grid.len();
        let len = self.slice_len();
        let mut digits = vec![0; self.order];
        for flat in 0..len {
            decode(flat, n, &mut digits);
            if has_repeat(&digits) {
                for k in 0..self.n_slices() {
                    out.values[k * len + flat] = 0.0;
                }
            }
        }
        out
    }

    /// Average over all permutations of the grid slots, per K-slice.
    pub fn symmetrize(&self) -> Kernel {
        let q = self.order;
        if q <= 1 || self.symmetric {
            let mut out = self.clone();
            out.symmetric = true;
            return out;
        }
        let n = self.grid.len();
        let len = self.slice_len();
        let perms = permutations(q);
        let inv = 1.0 / perms.len() as f64;
        let mut out = vec![0.0; self.values.len()];
        let mut digits = vec![0; q];
        let mut permuted = vec![0; q];
        let mut targets = vec![0; perms.len()];
        for flat in 0..len {
            decode(flat, n, &mut digits);
            for (t, perm) in targets.iter_mut().zip(&perms) {
                for (slot, &src) in permuted.iter_mut().zip(perm) {
                    *slot = digits[src];
                }
                *t = encode(&permuted, n);
            }
            for k in 0..self.n_slices() {
                let base = k * len;
                let s: f64 = targets.iter().map(|&t| self.values[base + t]).sum();
                out[base + flat] = s * inv;
            }
        }
        Kernel { grid: self.grid.clone(), order: q, k_dim: self.k_dim, symmetric: true, values: out }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&KernelJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: KernelJson = serde_json::from_str(s)?;
        raw.into_kernel()
    }
}

pub(crate) fn has_repeat(digits: &[usize]) -> bool {
    (1..digits.len()).any(|i| digits[..i].contains(&digits[i]))
}

/// JSON interchange form of a [`Kernel`].
///
/// `values` is row-major over `(atom_1, ..., atom_q, k)`: the K-index varies
/// fastest, the first atom slot slowest. Scalar kernels omit the K axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelJson {
    pub atoms: Vec<String>,
    pub weights: Vec<f64>,
    pub order: usize,
    pub k_dim: usize,
    #[serde(default)]
    pub symmetric: bool,
    pub values: Vec<f64>,
}

impl From<&Kernel> for KernelJson {
    fn from(k: &Kernel) -> Self {
        let len = k.slice_len();
        let s = k.n_slices();
        let mut values = Vec::with_capacity(k.values.len());
        for flat in 0..len {
            for slice in 0..s {
                values.push(k.values[slice * len + flat]);
            }
        }
        KernelJson {
            atoms: k.grid.atoms.clone(),
            weights: k.grid.weights.clone(),
            order: k.order,
            k_dim: k.k_dim,
            symmetric: k.symmetric,
            values,
        }
    }
}

impl KernelJson {
    pub fn into_kernel(self) -> Result<Kernel> {
        let grid = Arc::new(MeasureGrid::new(self.atoms.clone(), self.weights.clone())?);
        self.into_kernel_on(grid)
    }

    /// Like [`KernelJson::into_kernel`] but reuses an existing grid, which must match.
    pub fn into_kernel_on(self, grid: Arc<MeasureGrid>) -> Result<Kernel> {
        if grid.atoms != self.atoms || grid.weights != self.weights {
            return Err(Error::ShapeMismatch("kernel grid differs from the shared grid".into()));
        }
        let len = grid.len().pow(self.order as u32);
        let s = self.k_dim.max(1);
        if self.values.len() != len * s {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                len * s,
                self.values.len()
            )));
        }
        let mut values = vec![0.0; len * s];
        for flat in 0..len {
            for slice in 0..s {
                values[slice * len + flat] = self.values[flat * s + slice];
            }
        }
        let k = Kernel::new(grid, self.order, self.k_dim, values)?;
        if self.symmetric {
            k.assume_symmetric(1e-12)
        } else {
            Ok(k)
        }
    }
}

fn check_contract_args(f: &Kernel, g: &Kernel, r: usize, l: usize) -> Result<()> {
    if l > r || r > f.order.min(g.order) {
        return Err(Error::InvalidArgument(format!(
            "contraction needs 0 <= l <= r <= min(q, p); got r={r}, l={l}, q={}, p={}",
            f.order, g.order
        )));
    }
    if !same_grid(&f.grid, &g.grid) {
        return Err(Error::ShapeMismatch("contraction of kernels on different grids".into()));
    }
    Ok(())
}

/// Precomputed strides for contracting one slice of `f` with one slice of `g`.
struct ContractPlan {
    q: usize,
    p: usize,
    r: usize,
    l: usize,
    n: usize,
    wx: Vec<f64>,
}

impl ContractPlan {
    fn new(grid: &MeasureGrid, q: usize, p: usize, r: usize, l: usize) -> Self {
        Self { q, p, r, l, n: grid.len(), wx: grid.product_weights(l) }
    }

    fn out_len(&self) -> usize {
        self.n.pow((self.q + self.p - self.r - self.l) as u32)
    }

    fn run(&self, f: &[f64], g: &[f64], out: &mut [f64]) {
        let n = self.n;
        let pw = |e: usize| n.pow(e as u32);
        let ny = pw(self.q - self.l);
        let nz = pw(self.p - self.r);
        let shared_div = pw(self.q - self.r);
        let g_x_stride = pw(self.p - self.l);
        for y in 0..ny {
            let ys = y / shared_div;
            let g_base = ys * nz;
            let row = &mut out[y * nz..(y + 1) * nz];
            row.iter_mut().for_each(|v| *v = 0.0);
            for (x, &w) in self.wx.iter().enumerate() {
                let fv = f[x * ny + y];
                if fv == 0.0 {
                    continue;
                }
                let c = w * fv;
                let gs = &g[x * g_x_stride + g_base..x * g_x_stride + g_base + nz];
                for (o, &gv) in row.iter_mut().zip(gs) {
                    *o += c * gv;
                }
            }
        }
    }
}

/// `f ⋆ˡᵣ g`, not symmetrized.
pub fn contract(f: &Kernel, g: &Kernel, r: usize, l: usize) -> Result<Kernel> {
    check_contract_args(f, g, r, l)?;
    let plan = ContractPlan::new(&f.grid, f.order, g.order, r, l);
    let len = plan.out_len();
    let (kf, kg) = (f.n_slices(), g.n_slices());
    let mut values = vec![0.0; len * kf * kg];
    for i in 0..kf {
        for j in 0..kg {
            let idx = i * kg + j;
            plan.run(f.slice_values(i), g.slice_values(j), &mut values[idx * len..(idx + 1) * len]);
        }
    }
    let k_dim = match (f.k_dim, g.k_dim) {
        (0, 0) => 0,
        (a, 0) => a,
        (0, b) => b,
        (a, b) => a * b,
    };
    let order = f.order + g.order - r - l;
    Ok(Kernel { grid: f.grid.clone(), order, k_dim, symmetric: order <= 1, values })
}

/// `‖f ⋆ˡᵣ g‖²` summed over all K-index pairs, without materializing the
/// full K⊗K-valued contraction.
pub fn contraction_norm_sq(f: &Kernel, g: &Kernel, r: usize, l: usize) -> Result<f64> {
    check_contract_args(f, g, r, l)?;
    let plan = ContractPlan::new(&f.grid, f.order, g.order, r, l);
    let w = f.grid.product_weights(f.order + g.order - r - l);
    let mut buf = vec![0.0; plan.out_len()];
    let mut total = 0.0;
    for i in 0..f.n_slices() {
        for j in 0..g.n_slices() {
            plan.run(f.slice_values(i), g.slice_values(j), &mut buf);
            total += buf.iter().zip(&w).map(|(v, w)| v * v * w).sum::<f64>();
        }
    }
    Ok(total)
}

fn check_inner_args(f: &Kernel, g: &Kernel) -> Result<()> {
    if f.order != g.order || !same_grid(&f.grid, &g.grid) {
        return Err(Error::ShapeMismatch(format!(
            "inner product of orders {} and {} or on different grids",
            f.order, g.order
        )));
    }
    Ok(())
}

fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| x * y * w).sum()
}

/// Inner product in `L²(μ^q) ⊗ K`: the sum of `⟨f_i, g_i⟩` over matching
/// K-slices. For scalar kernels this is the plain `L²(μ^q)` product.
pub fn inner(f: &Kernel, g: &Kernel) -> Result<f64> {
    check_inner_args(f, g)?;
    if f.n_slices() != g.n_slices() {
        return Err(Error::ShapeMismatch(format!("k_dim {} vs {}", f.k_dim, g.k_dim)));
    }
    let w = f.grid.product_weights(f.order);
    Ok((0..f.n_slices())
        .map(|k| weighted_dot(f.slice_values(k), g.slice_values(k), &w))
        .sum())
}

/// Matrix of slice inner products `⟨f_i, g_j⟩`.
pub fn gram(f: &Kernel, g: &Kernel) -> Result<DMatrix<f64>> {
    check_inner_args(f, g)?;
    let w = f.grid.product_weights(f.order);
    let weighted: Vec<Vec<f64>> = (0..f.n_slices())
        .map(|i| f.slice_values(i).iter().zip(&w).map(|(v, w)| v * w).collect())
        .collect();
    Ok(DMatrix::from_fn(f.n_slices(), g.n_slices(), |i, j| {
        weighted[i].iter().zip(g.slice_values(j)).map(|(a, b)| a * b).sum()
    }))
}

pub fn norm_sq(f: &Kernel) -> f64 {
    let w = f.grid.product_weights(f.order);
    (0..f.n_slices())
        .map(|k| weighted_dot(f.slice_values(k), f.slice_values(k), &w))
        .sum()
}
