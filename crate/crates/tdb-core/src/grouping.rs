//! Axis fusion: reshape a d-dimensional tensor into a p-order tensor by
//! merging disjoint groups of axes, so the same decomposition machinery runs
//! at any grouping granularity (p = 2 reduces to the matrix case).
//!
//! Within a fused axis the member axes are taken in increasing original
//! index with the first member fastest-varying; fused weights are the
//! elementwise products of the member weights under that ordering. Fusion is
//! a pure relabeling, so weighted norms are preserved exactly.

use crate::error::{Result, TdbError};
use crate::tensor::{DenseTensor, ModeWeights};

/// A partition of the original axes {0..d-1} into ordered groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    groups: Vec<Vec<usize>>,
    order: usize,
}

impl GroupSpec {
    /// `groups` uses 0-based axis indices; members are normalized to
    /// increasing order. Groups must be disjoint, nonempty, and cover all
    /// `order` axes.
    pub fn new(groups: Vec<Vec<usize>>, order: usize) -> Result<Self> {
        let mut seen = vec![false; order];
        if groups.is_empty() {
            return Err(TdbError::InvalidGroups {
                context: "no groups given".into(),
            });
        }
        let mut groups = groups;
        for g in &mut groups {
            if g.is_empty() {
                return Err(TdbError::InvalidGroups {
                    context: "empty group".into(),
                });
            }
            g.sort_unstable();
            for &axis in g.iter() {
                if axis >= order {
                    return Err(TdbError::InvalidGroups {
                        context: format!("axis {axis} out of range for order {order}"),
                    });
                }
                if seen[axis] {
                    return Err(TdbError::InvalidGroups {
                        context: format!("axis {axis} appears in more than one group"),
                    });
                }
                seen[axis] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(TdbError::InvalidGroups {
                context: "groups do not cover all axes".into(),
            });
        }
        Ok(Self { groups, order })
    }

    /// Singleton groups: fusion is the identity.
    pub fn identity(order: usize) -> Self {
        Self {
            groups: (0..order).map(|a| vec![a]).collect(),
            order,
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn original_order(&self) -> usize {
        self.order
    }

    pub fn fused_order(&self) -> usize {
        self.groups.len()
    }

    pub fn fused_dims(&self, dims: &[usize]) -> Result<Vec<usize>> {
        if dims.len() != self.order {
            return Err(TdbError::ShapeMismatch {
                context: format!(
                    "group spec covers {} axes, tensor has {}",
                    self.order,
                    dims.len()
                ),
            });
        }
        Ok(self
            .groups
            .iter()
            .map(|g| g.iter().map(|&a| dims[a]).product())
            .collect())
    }

    /// Destination stride for every original axis in the fused layout.
    fn fused_strides(&self, dims: &[usize]) -> Result<Vec<usize>> {
        let fused = self.fused_dims(dims)?;
        let mut strides = vec![0usize; self.order];
        let mut group_stride = 1usize;
        for (g, &gdim) in self.groups.iter().zip(&fused) {
            let mut member_stride = group_stride;
            for &axis in g {
                strides[axis] = member_stride;
                member_stride *= dims[axis];
            }
            group_stride *= gdim;
        }
        Ok(strides)
    }
}

/// Reshape `v` into the fused p-order tensor and build the fused weights.
pub fn fuse(
    v: &DenseTensor,
    weights: &ModeWeights,
    spec: &GroupSpec,
) -> Result<(DenseTensor, ModeWeights)> {
    weights.check_dims(v.dims())?;
    let fused_dims = spec.fused_dims(v.dims())?;
    let strides = spec.fused_strides(v.dims())?;
    let dims = v.dims();

    let mut out = DenseTensor::zeros(&fused_dims);
    let out_vals = out.values_mut();
    let mut idx = vec![0usize; dims.len()];
    let mut dest = 0usize;
    for &val in v.values() {
        out_vals[dest] = val;
        for (n, d) in dims.iter().enumerate() {
            idx[n] += 1;
            dest += strides[n];
            if idx[n] < *d {
                break;
            }
            dest -= strides[n] * *d;
            idx[n] = 0;
        }
    }

    let mut fused_weights = Vec::with_capacity(spec.fused_order());
    for (g, &gdim) in spec.groups().iter().zip(&fused_dims) {
        let mut w = vec![0.0; gdim];
        let mut midx = vec![0usize; g.len()];
        for slot in w.iter_mut() {
            let mut prod = 1.0;
            for (k, &axis) in g.iter().enumerate() {
                prod *= weights.mode(axis)[midx[k]];
            }
            *slot = prod;
            for (k, &axis) in g.iter().enumerate() {
                midx[k] += 1;
                if midx[k] < dims[axis] {
                    break;
                }
                midx[k] = 0;
            }
        }
        fused_weights.push(w);
    }
    Ok((out, ModeWeights::new(fused_weights)?))
}

/// Exact inverse of [`fuse`]: scatter the fused tensor back to `dims`.
pub fn unfuse(t: &DenseTensor, spec: &GroupSpec, dims: &[usize]) -> Result<DenseTensor> {
    let fused_dims = spec.fused_dims(dims)?;
    if t.dims() != fused_dims {
        return Err(TdbError::ShapeMismatch {
            context: format!(
                "unfuse: tensor dims {:?}, spec implies {:?}",
                t.dims(),
                fused_dims
            ),
        });
    }
    let strides = spec.fused_strides(dims)?;
    let mut out = DenseTensor::zeros(dims);
    let out_vals = out.values_mut();
    let in_vals = t.values();
    let mut idx = vec![0usize; dims.len()];
    let mut src = 0usize;
    for slot in out_vals.iter_mut() {
        *slot = in_vals[src];
        for (n, d) in dims.iter().enumerate() {
            idx[n] += 1;
            src += strides[n];
            if idx[n] < *d {
                break;
            }
            src -= strides[n] * *d;
            idx[n] = 0;
        }
    }
    Ok(out)
}
