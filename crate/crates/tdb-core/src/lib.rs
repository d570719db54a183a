//! Streaming compression of time-dependent multidimensional simulation data.
//!
//! Snapshots are decomposed into a small time-dependent core tensor and
//! per-mode weighted-orthonormal bases. Instead of recomputing an SVD per
//! snapshot, the core and bases evolve via closed-form ODEs driven by the
//! data derivative, with HOSVD used only for initialization and for
//! adaptive reinitialization when the reconstruction error threshold is
//! violated. The compressed trajectory is persisted in an append-only
//! binary archive.

pub mod adaptivity;
pub mod archive;
pub mod bench;
pub mod coherent;
pub mod datagen;
pub mod driver;
pub mod error;
pub mod evolve;
pub mod grouping;
pub mod hosvd;
pub mod state;
pub mod tensor;

pub use error::{Result, TdbError};
pub use state::TdbState;
pub use tensor::{DenseTensor, ModeWeights, MultiRank};
