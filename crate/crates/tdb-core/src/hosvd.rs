//! Truncated higher-order SVD under weighted inner products.
//!
//! Used for t=0 initialization, adaptive reinitialization, rank selection,
//! and as the accuracy reference the evolving decomposition is compared
//! against. Mode spectra are computed through the small N_n x N_n Gram
//! matrix of the scaled unfolding rather than a full dense SVD.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, TdbError};
use crate::state::TdbState;
use crate::tensor::{
    mode_product, unfold, weighted_adjoint, DenseTensor, ModeWeights, MultiRank,
};

/// Per-mode singular values (non-increasing) with the corresponding
/// weighted-orthonormal left singular vectors as columns.
#[derive(Debug, Clone)]
pub struct ModeSpectrum {
    pub singular_values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Weight of each unfolding column: the product of the other modes'
/// quadrature weights in unfolding column order.
pub fn column_weights(dims: &[usize], weights: &ModeWeights, n: usize) -> Vec<f64> {
    let rem: Vec<usize> = (0..dims.len()).filter(|&m| m != n).collect();
    let count: usize = rem.iter().map(|&m| dims[m]).product();
    let mut out = Vec::with_capacity(count);
    let mut idx = vec![0usize; rem.len()];
    for _ in 0..count {
        let mut w = 1.0;
        for (pos, &m) in rem.iter().enumerate() {
            w *= weights.mode(m)[idx[pos]];
        }
        out.push(w);
        for (pos, &m) in rem.iter().enumerate() {
            idx[pos] += 1;
            if idx[pos] < dims[m] {
                break;
            }
            idx[pos] = 0;
        }
    }
    out
}

/// Flip each column so its largest-magnitude entry is positive.
pub fn fix_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mut best = 0usize;
        let mut mag = 0.0;
        for i in 0..m.nrows() {
            let a = m[(i, j)].abs();
            if a > mag {
                mag = a;
                best = i;
            }
        }
        if m[(best, j)] < 0.0 {
            for i in 0..m.nrows() {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }
}

/// Top-k weighted singular values and left singular vectors of the mode-n
/// unfolding of `v`.
pub fn mode_svd(v: &DenseTensor, n: usize, weights: &ModeWeights, k: usize) -> Result<ModeSpectrum> {
    weights.check_dims(v.dims())?;
    let nn = *v
        .dims()
        .get(n)
        .ok_or(TdbError::ModeOutOfRange { mode: n, order: v.order() })?;
    if k < 1 || k > nn {
        return Err(TdbError::InvalidRank {
            context: format!("mode {n}: requested {k} singular values, extent is {nn}"),
        });
    }
    if !v.is_finite() {
        return Err(TdbError::NonFinite {
            context: format!("mode_svd input, mode {n}"),
        });
    }

    let row_w = weights.mode(n);
    let sqrt_row: Vec<f64> = row_w.iter().map(|w| w.sqrt()).collect();
    let col_w = column_weights(v.dims(), weights, n);

    let mut a = unfold(v, n)?;
    for c in 0..a.ncols() {
        let sc = col_w[c].sqrt();
        for r in 0..a.nrows() {
            a[(r, c)] *= sqrt_row[r] * sc;
        }
    }
    let gram = &a * a.transpose();

    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..nn).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("eigenvalues are finite")
    });

    let mut singular_values = Vec::with_capacity(k);
    let mut vectors = DMatrix::zeros(nn, k);
    for (out_j, &src_j) in order.iter().take(k).enumerate() {
        // negative round-off eigenvalues are clamped to zero
        singular_values.push(eig.eigenvalues[src_j].max(0.0).sqrt());
        for i in 0..nn {
            // zero-weight rows carry no inner-product mass
            let val = if sqrt_row[i] > 0.0 {
                eig.eigenvectors[(i, src_j)] / sqrt_row[i]
            } else {
                0.0
            };
            vectors[(i, out_j)] = val;
        }
    }
    fix_signs(&mut vectors);
    Ok(ModeSpectrum {
        singular_values,
        vectors,
    })
}

/// Full spectra for every mode.
pub fn full_mode_spectra(v: &DenseTensor, weights: &ModeWeights) -> Result<Vec<ModeSpectrum>> {
    (0..v.order())
        .map(|n| mode_svd(v, n, weights, v.dims()[n]))
        .collect()
}

/// Truncated HOSVD: per-mode top-r_n bases plus the projected core.
pub fn hosvd_truncate(
    v: &DenseTensor,
    weights: &ModeWeights,
    ranks: &MultiRank,
    time: f64,
) -> Result<TdbState> {
    weights.check_dims(v.dims())?;
    let mut bases = Vec::with_capacity(v.order());
    for (n, &r) in ranks.ranks().iter().enumerate() {
        bases.push(mode_svd(v, n, weights, r)?.vectors);
    }
    let mut core = v.clone();
    for (n, u) in bases.iter().enumerate() {
        core = mode_product(&core, &weighted_adjoint(u, weights.mode(n)), n)?;
    }
    TdbState::new(time, core, bases, weights.clone())
}

/// Smallest per-mode ranks capturing at least `gamma_th` percent of the
/// spectral energy, clamped to a feasible multirank.
pub fn ranks_for_energy(
    spectra: &[ModeSpectrum],
    gamma_th: f64,
    dims: &[usize],
) -> Result<MultiRank> {
    if !(0.0 < gamma_th && gamma_th < 100.0) {
        return Err(TdbError::Config(format!(
            "gamma_th must lie in (0, 100), got {gamma_th}"
        )));
    }
    let mut ranks = Vec::with_capacity(spectra.len());
    for (n, spec) in spectra.iter().enumerate() {
        if spec.singular_values.is_empty() {
            return Err(TdbError::Degenerate {
                context: format!("empty spectrum in mode {n}"),
            });
        }
        let total: f64 = spec.singular_values.iter().map(|s| s * s).sum();
        if total == 0.0 {
            ranks.push(1);
            continue;
        }
        let mut cum = 0.0;
        let mut r = spec.singular_values.len();
        for (i, s) in spec.singular_values.iter().enumerate() {
            cum += s * s;
            if cum / total * 100.0 >= gamma_th {
                r = i + 1;
                break;
            }
        }
        ranks.push(r);
    }
    MultiRank::clamped_feasible(ranks, dims)
}
