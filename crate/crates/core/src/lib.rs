//! Core of a two-stage all-in-one image restorer: a degradation
//! representation network trained against a hierarchical clustering tree,
//! and a restoration network conditioned on that representation.
//!
//! The crate is `no_std` with `alloc`; enable `std` for the faster
//! matrix kernels and `std::error::Error` impls.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod autonn;
pub mod degrade;
pub mod drn;
pub mod hierarchy;
pub mod image;
pub mod metrics;
pub mod optim;
pub mod restorer;
pub mod scalar;
pub mod selfcheck;
pub mod stats;

pub use degrade::{apply_degradation, DegradationKind, DegradationParams, DegradationSpec};
pub use drn::{Drn, DrnConfig, ReprStage, REPR_DIM};
pub use hierarchy::{DegTree, FlatLabel, TreeAssignment};
pub use image::{Image, ImagePair};
pub use restorer::{AblationVariant, Conditioning, Restorer, RnConfig};
