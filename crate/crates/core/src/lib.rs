//! Fully sparse event-camera object detection.
//!
//! Events are voxelized into a [`SparseTensor3D`](tensor::SparseTensor3D),
//! run through a sparse 3D residual backbone, a sparse feature pyramid, a
//! temporal max-squeeze and a pointwise detection head, then decoded and
//! filtered with NMS. Every dense computation in the crate lives in
//! [`oracle`], which exists only to check the sparse paths.

pub mod boxes;
pub mod detect;
pub mod error;
pub mod eval;
pub mod forensics;
pub mod losses;
pub mod model;
pub mod ops;
pub mod oracle;
pub mod rulebook;
pub mod synth;
pub mod tensor;
pub mod voxel;

pub use error::{Error, FormatError, Result};
pub use tensor::{Shape, SparseTensor3D, VoxelCoord};
