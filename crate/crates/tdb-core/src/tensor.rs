//! Dense tensor storage, mode-n unfolding/folding, n-mode products and the
//! weighted inner products every other module builds on.
//!
//! Storage is a single contiguous array with the *first* tensor index
//! fastest-varying. Unfoldings place mode-n fibers as rows; the column index
//! runs over the remaining modes in increasing mode order with the earliest
//! remaining mode fastest-varying. All modules share this convention.

use nalgebra::DMatrix;

use crate::error::{Result, TdbError};

/// A dense real tensor of order `p` with explicit dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(!dims.is_empty() && dims.iter().all(|&d| d >= 1));
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            values: vec![0.0; len],
        }
    }

    pub fn from_values(dims: &[usize], values: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || dims.iter().any(|&d| d < 1) {
            return Err(TdbError::ShapeMismatch {
                context: format!("invalid dims {dims:?}"),
            });
        }
        if values.len() != expected {
            return Err(TdbError::ShapeMismatch {
                context: format!(
                    "value count {} does not match dims {:?} (expected {})",
                    values.len(),
                    dims,
                    expected
                ),
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            values,
        })
    }

    /// Build a tensor by evaluating `f` at every multi-index (0-based).
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        let mut idx = vec![0usize; dims.len()];
        for v in t.values.iter_mut() {
            *v = f(&idx);
            // odometer increment, first index fastest
            for (i, d) in idx.iter_mut().zip(dims) {
                *i += 1;
                if *i < *d {
                    break;
                }
                *i = 0;
            }
        }
        t
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Linear offset of a multi-index (first index fastest).
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (&i, &d) in idx.iter().zip(&self.dims).rev() {
            debug_assert!(i < d);
            off = off * d + i;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.values[off] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// Element-wise `self + s * other`.
    pub fn axpy(&mut self, s: f64, other: &DenseTensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(TdbError::ShapeMismatch {
                context: format!("axpy dims {:?} vs {:?}", self.dims, other.dims),
            });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }
}

/// Per-mode diagonal quadrature weights defining all inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeWeights {
    weights: Vec<Vec<f64>>,
}

impl ModeWeights {
    pub fn new(weights: Vec<Vec<f64>>) -> Result<Self> {
        for (n, w) in weights.iter().enumerate() {
            if w.is_empty() || w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(TdbError::ShapeMismatch {
                    context: format!("mode {n} weights must be nonnegative and nonempty"),
                });
            }
            if w.iter().all(|&x| x == 0.0) {
                return Err(TdbError::ShapeMismatch {
                    context: format!("mode {n} weights are all zero"),
                });
            }
        }
        Ok(Self { weights })
    }

    pub fn unit(dims: &[usize]) -> Self {
        Self {
            weights: dims.iter().map(|&d| vec![1.0; d]).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.weights.len()
    }

    pub fn mode(&self, n: usize) -> &[f64] {
        &self.weights[n]
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn check_dims(&self, dims: &[usize]) -> Result<()> {
        if self.weights.len() != dims.len()
            || self.weights.iter().zip(dims).any(|(w, &d)| w.len() != d)
        {
            return Err(TdbError::ShapeMismatch {
                context: format!(
                    "weight lengths {:?} inconsistent with dims {:?}",
                    self.weights.iter().map(|w| w.len()).collect::<Vec<_>>(),
                    dims
                ),
            });
        }
        Ok(())
    }
}

/// The per-mode subspace dimensions (r_1, ..., r_p).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiRank {
    ranks: Vec<usize>,
}

impl MultiRank {
    pub fn new(ranks: Vec<usize>, dims: &[usize]) -> Result<Self> {
        if ranks.len() != dims.len() {
            return Err(TdbError::InvalidRank {
                context: format!("rank count {} vs order {}", ranks.len(), dims.len()),
            });
        }
        for (n, (&r, &d)) in ranks.iter().zip(dims).enumerate() {
            if r < 1 || r > d {
                return Err(TdbError::InvalidRank {
                    context: format!("mode {n}: rank {r} outside [1, {d}]"),
                });
            }
        }
        let mr = Self { ranks };
        if !mr.is_feasible() {
            return Err(TdbError::InvalidRank {
                context: format!(
                    "infeasible multirank {:?}: some r_n exceeds the product of the others",
                    mr.ranks
                ),
            });
        }
        Ok(mr)
    }

    /// r_n <= prod_{m != n} r_m for every n; otherwise the unfolded core
    /// cannot have full row rank.
    pub fn is_feasible(&self) -> bool {
        if self.ranks.len() == 1 {
            return true;
        }
        self.ranks
            .iter()
            .enumerate()
            .all(|(n, &r)| r <= complement_product(&self.ranks, n))
    }

    /// Shrink ranks until the feasibility invariant holds, then revalidate.
    pub fn clamped_feasible(mut ranks: Vec<usize>, dims: &[usize]) -> Result<Self> {
        for r in &mut ranks {
            *r = (*r).max(1);
        }
        for (r, &d) in ranks.iter_mut().zip(dims) {
            *r = (*r).min(d);
        }
        loop {
            let mut changed = false;
            for n in 0..ranks.len() {
                let cap = complement_product(&ranks, n).max(1);
                if ranks[n] > cap {
                    ranks[n] = cap;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Self::new(ranks, dims)
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn core_len(&self) -> usize {
        self.ranks.iter().product()
    }
}

fn complement_product(vals: &[usize], skip: usize) -> usize {
    vals.iter()
        .enumerate()
        .filter(|&(m, _)| m != skip)
        .map(|(_, &v)| v)
        .product()
}

fn check_mode(n: usize, order: usize) -> Result<()> {
    if n >= order {
        return Err(TdbError::ModeOutOfRange { mode: n, order });
    }
    Ok(())
}

/// Split dims around mode n into (inner, N_n, outer) with
/// inner = prod of earlier dims and outer = prod of later dims.
fn mode_split(dims: &[usize], n: usize) -> (usize, usize, usize) {
    let inner: usize = dims[..n].iter().product();
    let outer: usize = dims[n + 1..].iter().product();
    (inner, dims[n], outer)
}

/// Mode-n unfolding: rows indexed by mode n, columns by the remaining modes
/// in increasing mode order with the earliest remaining mode fastest.
pub fn unfold(t: &DenseTensor, n: usize) -> Result<DMatrix<f64>> {
    check_mode(n, t.order())?;
    let (inner, nn, outer) = mode_split(t.dims(), n);
    let mut m = DMatrix::zeros(nn, inner * outer);
    let vals = t.values();
    for b in 0..outer {
        for i in 0..nn {
            let src = inner * (i + nn * b);
            for a in 0..inner {
                m[(i, a + inner * b)] = vals[src + a];
            }
        }
    }
    Ok(m)
}

/// Exact inverse of [`unfold`].
pub fn fold(m: &DMatrix<f64>, n: usize, dims: &[usize]) -> Result<DenseTensor> {
    check_mode(n, dims.len())?;
    let (inner, nn, outer) = mode_split(dims, n);
    if m.nrows() != nn || m.ncols() != inner * outer {
        return Err(TdbError::ShapeMismatch {
            context: format!(
                "fold: matrix {}x{} vs dims {:?} mode {}",
                m.nrows(),
                m.ncols(),
                dims,
                n
            ),
        });
    }
    let mut t = DenseTensor::zeros(dims);
    let vals = t.values_mut();
    for b in 0..outer {
        for i in 0..nn {
            let dst = inner * (i + nn * b);
            for a in 0..inner {
                vals[dst + a] = m[(i, a + inner * b)];
            }
        }
    }
    Ok(t)
}

/// n-mode product T x_n A where A is M x N_n; the result has dims[n] = M.
pub fn mode_product(t: &DenseTensor, a: &DMatrix<f64>, n: usize) -> Result<DenseTensor> {
    check_mode(n, t.order())?;
    if a.ncols() != t.dims()[n] {
        return Err(TdbError::ShapeMismatch {
            context: format!(
                "mode_product: matrix has {} columns, mode {} has extent {}",
                a.ncols(),
                n,
                t.dims()[n]
            ),
        });
    }
    let unfolded = unfold(t, n)?;
    let product = a * unfolded;
    let mut new_dims = t.dims().to_vec();
    new_dims[n] = a.nrows();
    fold(&product, n, &new_dims)
}

/// Weighted inner product sum_i u_i v_i w_i.
pub fn weighted_inner(u: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.len() != w.len() {
        return Err(TdbError::ShapeMismatch {
            context: format!(
                "weighted_inner lengths {} / {} / {}",
                u.len(),
                v.len(),
                w.len()
            ),
        });
    }
    // sequential reduction keeps results deterministic
    let mut acc = 0.0;
    for i in 0..u.len() {
        acc += u[i] * v[i] * w[i];
    }
    Ok(acc)
}

/// Weighted Frobenius norm sqrt( sum T[i]^2 prod_n w^(n)_{i_n} ).
pub fn weighted_frobenius(t: &DenseTensor, weights: &ModeWeights) -> Result<f64> {
    weights.check_dims(t.dims())?;
    let dims = t.dims();
    let p = dims.len();
    let mut idx = vec![0usize; p];
    let mut acc = 0.0;
    for &v in t.values() {
        let mut w = 1.0;
        for n in 0..p {
            w *= weights.mode(n)[idx[n]];
        }
        acc += v * v * w;
        for n in 0..p {
            idx[n] += 1;
            if idx[n] < dims[n] {
                break;
            }
            idx[n] = 0;
        }
    }
    Ok(acc.max(0.0).sqrt())
}

/// diag(w) * A, scaling row i of A by w[i].
pub fn scale_rows(a: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(a.nrows(), w.len());
    let mut out = a.clone();
    for (i, &wi) in w.iter().enumerate() {
        for j in 0..out.ncols() {
            out[(i, j)] *= wi;
        }
    }
    out
}

/// U^T diag(w): the weighted analysis operator of a basis.
pub fn weighted_adjoint(u: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(u.nrows(), w.len());
    let mut out = DMatrix::zeros(u.ncols(), u.nrows());
    for j in 0..u.ncols() {
        for (i, &wi) in w.iter().enumerate() {
            out[(j, i)] = u[(i, j)] * wi;
        }
    }
    out
}
