//! Convolution-based probability gradient (CPG) loss for semantic segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense arrays, the `.cpgt` file format, PGM export
//! - [`kernels`]: odd-sized Sobel-family kernel pairs
//! - [`probmaps`]: label maps, one-hot / softmax probability maps, cross-entropy
//! - [`gradfield`]: correlation, its adjoint, boundary masks
//! - [`cpg`]: the CPG loss, its backward pass, and the combined objective
//! - [`metrics`]: IoU, transects, boundary sharpness
//! - [`synthlab`]: synthetic scenes and a small gradient-descent trainer

pub mod cpg;
pub mod error;
pub mod gradfield;
pub mod kernels;
pub mod metrics;
pub mod probmaps;
pub mod synthlab;
pub mod tensor;

pub use cpg::{
    combined_loss, combined_loss_with_target, cpg_backward, cpg_forward, CpgConfig, CpgForward,
    CpgTarget, LossReport,
};
pub use error::{Error, Result};
pub use gradfield::{
    correlate, correlate_raw, correlate_transpose, extract_boundary, extract_boundary_with,
    magnitude_direction, BoundaryMask, Direction, GradField, MaskCollapse,
};
pub use kernels::{generate_kernel, GradKernel};
pub use probmaps::{
    ce_loss, one_hot, softmax, CeVariant, LabelMap, LogitMap, MapShape, ProbKind, ProbMap,
    DEFAULT_IGNORE_INDEX,
};
pub use tensor::{AnyTensor, DType, Tensor};
