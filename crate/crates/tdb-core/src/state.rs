//! The compressed representation at one instant: a core tensor plus
//! per-mode weighted-orthonormal bases.

use nalgebra::DMatrix;

use crate::error::{Result, TdbError};
use crate::tensor::{mode_product, weighted_adjoint, DenseTensor, ModeWeights, MultiRank};

/// Core tensor T(t), bases U^(n)(t) and the quadrature weights they are
/// orthonormal under.
#[derive(Debug, Clone)]
pub struct TdbState {
    pub time: f64,
    pub core: DenseTensor,
    pub bases: Vec<DMatrix<f64>>,
    pub weights: ModeWeights,
}

impl TdbState {
    pub fn new(
        time: f64,
        core: DenseTensor,
        bases: Vec<DMatrix<f64>>,
        weights: ModeWeights,
    ) -> Result<Self> {
        let p = core.order();
        if bases.len() != p || weights.order() != p {
            return Err(TdbError::ShapeMismatch {
                context: format!(
                    "state: core order {p}, {} bases, {} weight modes",
                    bases.len(),
                    weights.order()
                ),
            });
        }
        for (n, u) in bases.iter().enumerate() {
            if u.ncols() != core.dims()[n] || u.nrows() != weights.mode(n).len() {
                return Err(TdbError::ShapeMismatch {
                    context: format!(
                        "state: basis {} is {}x{}, expected {}x{}",
                        n,
                        u.nrows(),
                        u.ncols(),
                        weights.mode(n).len(),
                        core.dims()[n]
                    ),
                });
            }
        }
        MultiRank::new(core.dims().to_vec(), &bases.iter().map(|u| u.nrows()).collect::<Vec<_>>())?;
        Ok(Self {
            time,
            core,
            bases,
            weights,
        })
    }

    pub fn order(&self) -> usize {
        self.core.order()
    }

    /// Full-space dimensions (N_1, ..., N_p).
    pub fn dims(&self) -> Vec<usize> {
        self.bases.iter().map(|u| u.nrows()).collect()
    }

    pub fn multirank(&self) -> MultiRank {
        MultiRank::new(self.core.dims().to_vec(), &self.dims())
            .expect("state invariant guarantees feasible ranks")
    }

    /// V_TDB = core x_1 U^(1) x_2 ... x_p U^(p).
    pub fn reconstruct(&self) -> DenseTensor {
        let mut t = self.core.clone();
        for (n, u) in self.bases.iter().enumerate() {
            t = mode_product(&t, u, n).expect("state shapes are consistent");
        }
        t
    }

    /// max |U^T W U - I| across all modes.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (n, u) in self.bases.iter().enumerate() {
            let g = weighted_adjoint(u, self.weights.mode(n)) * u;
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((g[(i, j)] - target).abs());
                }
            }
        }
        worst
    }
}
