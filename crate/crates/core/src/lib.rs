//! Transfer learning toolkit for binary "generated vs. real" image detectors.
//!
//! The crate is `no_std` (with `alloc`) and contains the algorithmic pieces:
//!
//! * [`loss`]: cross-entropy, L² and starting-point penalties, and the gated
//!   transfer objective.
//! * [`model`]: a small residual classifier with weight standardization,
//!   group normalization, dropout and stochastic depth, including the
//!   hand-written backward pass.
//! * [`augment`]: flip, JPEG round trip, Gaussian blur and intra-class Cutmix.
//! * [`train`]: source pretraining and the teacher/student transfer loop.
//! * [`data`]: a seeded synthetic artifact-image generator and split policies.
//! * [`eval`]: AUROC, forgetting reports and the finite-difference oracle.
//!
//! File formats, checkpoints and the command line live in the `tgd` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{ParameterSet, Role, RoleFilter};
pub use scalar::Scalar;
pub use tensor::Tensor;
