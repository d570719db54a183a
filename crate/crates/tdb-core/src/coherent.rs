//! Energetically ranked coherent structures extracted from the evolving
//! state via SVD of the unfolded core tensor.
//!
//! Rotating the basis by the left singular vectors of the unfolded core
//! orders the columns by captured energy, which makes them comparable
//! against the instantaneous HOSVD vectors of the full data.

use nalgebra::DMatrix;

use crate::error::{Result, TdbError};
use crate::hosvd::fix_signs;
use crate::state::TdbState;
use crate::tensor::{unfold, DenseTensor};

/// Energy-ordered basis for one mode.
#[derive(Debug, Clone)]
pub struct RankedBasis {
    pub mode: usize,
    /// U^(n) rotated by the left singular vectors of the unfolded core.
    pub rotated: DMatrix<f64>,
    /// Singular values of the mode-n unfolded core, non-increasing.
    pub singular_values: Vec<f64>,
    /// The rotation itself (left singular vectors of the unfolded core).
    pub rotation: DMatrix<f64>,
}

/// Singular values of the mode-n unfolded core. The core lives in the
/// orthonormal coefficient space, so no quadrature weighting applies here.
pub fn core_mode_singular_values(core: &DenseTensor, n: usize) -> Result<Vec<f64>> {
    let unfolded = unfold(core, n)?;
    let svd = unfolded.svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    Ok(sv)
}

/// SVD of the unfolded core; the rotated basis ranks the columns of U^(n)
/// energetically.
pub fn ranked_basis(state: &TdbState, n: usize) -> Result<RankedBasis> {
    if n >= state.order() {
        return Err(TdbError::ModeOutOfRange {
            mode: n,
            order: state.order(),
        });
    }
    let unfolded = unfold(&state.core, n)?;
    let svd = unfolded.svd(true, false);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if max_sv == 0.0 {
        return Err(TdbError::Degenerate {
            context: format!("zero core in ranked_basis, mode {n}"),
        });
    }
    let u = svd.u.expect("svd requested u");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .expect("finite singular values")
    });
    let mut rotation = DMatrix::zeros(u.nrows(), order.len());
    let mut singular_values = Vec::with_capacity(order.len());
    for (out_j, &src_j) in order.iter().enumerate() {
        singular_values.push(svd.singular_values[src_j]);
        for i in 0..u.nrows() {
            rotation[(i, out_j)] = u[(i, src_j)];
        }
    }
    fix_signs(&mut rotation);
    let rotated = &state.bases[n] * &rotation;
    Ok(RankedBasis {
        mode: n,
        rotated,
        singular_values,
        rotation,
    })
}

/// Principal angles (radians, ascending) between the spans of two
/// weighted-orthonormal column sets.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() || a.nrows() != w.len() {
        return Err(TdbError::ShapeMismatch {
            context: format!(
                "principal_angles rows {} / {} / weights {}",
                a.nrows(),
                b.nrows(),
                w.len()
            ),
        });
    }
    let mut cross = DMatrix::zeros(a.ncols(), b.ncols());
    for i in 0..a.ncols() {
        for j in 0..b.ncols() {
            let mut acc = 0.0;
            for k in 0..w.len() {
                acc += a[(k, i)] * b[(k, j)] * w[k];
            }
            cross[(i, j)] = acc;
        }
    }
    let svd = cross.svd(false, false);
    let mut angles: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hosvd::{hosvd_truncate, mode_svd};
    use crate::tensor::{mode_product, weighted_frobenius, ModeWeights, MultiRank};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_tensor(dims: &[usize], seed: u64) -> DenseTensor {
        let mut rng = StdRng::seed_from_u64(seed);
        DenseTensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn diagonal_core_needs_no_rotation() {
        let dims = [6usize, 5, 4];
        let v = random_tensor(&dims, 1);
        let w = ModeWeights::unit(&dims);
        let ranks = MultiRank::new(vec![2, 2, 2], &dims).unwrap();
        let mut state = hosvd_truncate(&v, &w, &ranks, 0.0).unwrap();
        // replace core with a mode-0 diagonal one
        let mut core = DenseTensor::zeros(&[2, 2, 2]);
        core.set(&[0, 0, 0], 5.0);
        core.set(&[1, 1, 0], 2.0);
        state.core = core;
        let rb = ranked_basis(&state, 0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((rb.rotation[(i, j)] - want).abs() < 1e-12);
            }
        }
        assert!((rb.rotated.clone() - &state.bases[0]).amax() < 1e-12);
    }

    #[test]
    fn hosvd_state_core_spectrum_matches_data_spectrum() {
        let dims = [6usize, 5, 4];
        let v = random_tensor(&dims, 7);
        let mut rng = StdRng::seed_from_u64(8);
        let w = ModeWeights::new(
            dims.iter()
                .map(|&d| (0..d).map(|_| rng.random_range(0.3..1.5)).collect())
                .collect(),
        )
        .unwrap();
        let ranks = MultiRank::new(vec![4, 4, 3], &dims).unwrap();
        // use data that is exactly representable at these ranks, so the
        // state's core spectrum must reproduce the full-data spectrum
        let v = hosvd_truncate(&v, &w, &ranks, 0.0).unwrap().reconstruct();
        let state = hosvd_truncate(&v, &w, &ranks, 0.0).unwrap();
        for n in 0..3 {
            let rb = ranked_basis(&state, n).unwrap();
            let full = mode_svd(&v, n, &w, dims[n]).unwrap();
            let tol = 1e-8 * full.singular_values[0];
            for (a, b) in rb.singular_values.iter().zip(&full.singular_values) {
                assert!((a - b).abs() < tol, "mode {n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rotation_absorbed_both_sides_preserves_reconstruction() {
        let dims = [6usize, 5, 4];
        let v = random_tensor(&dims, 17);
        let w = ModeWeights::unit(&dims);
        let ranks = MultiRank::new(vec![3, 3, 2], &dims).unwrap();
        let state = hosvd_truncate(&v, &w, &ranks, 0.0).unwrap();
        let n = 0;
        let rb = ranked_basis(&state, n).unwrap();
        let mut rotated_state = state.clone();
        rotated_state.bases[n] = rb.rotated.clone();
        rotated_state.core =
            mode_product(&state.core, &rb.rotation.transpose(), n).unwrap();
        let diff = state
            .reconstruct()
            .sub(&rotated_state.reconstruct())
            .unwrap();
        assert!(weighted_frobenius(&diff, &w).unwrap() < 1e-12);
    }

    #[test]
    fn core_spectrum_equals_reconstruction_spectrum() {
        let dims = [6usize, 5, 4];
        let v = random_tensor(&dims, 27);
        let w = ModeWeights::unit(&dims);
        let ranks = MultiRank::new(vec![3, 3, 2], &dims).unwrap();
        let state = hosvd_truncate(&v, &w, &ranks, 0.0).unwrap();
        let rec = state.reconstruct();
        for n in 0..3 {
            let core_sv = core_mode_singular_values(&state.core, n).unwrap();
            let rec_sv = mode_svd(&rec, n, &w, dims[n]).unwrap().singular_values;
            for (a, b) in core_sv.iter().zip(&rec_sv) {
                assert!((a - b).abs() < 1e-10 * a.max(1.0));
            }
        }
    }

    #[test]
    fn principal_angles_identity_and_orthogonal() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let w = [1.0, 1.0, 1.0];
        let same = principal_angles(&a, &a, &w).unwrap();
        assert!(same[0] < 1e-12);
        let orth = principal_angles(&a, &b, &w).unwrap();
        assert!((orth[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
