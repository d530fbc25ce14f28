//! Dense-tensor neural-network engine: fixed layer-wise forward/backward
//! pairs (no autodiff graph), Adam, and finite-difference verification.

pub mod adam;
pub mod gradcheck;
pub mod lstm;
pub mod ops;
pub mod tensor;

pub use adam::{glorot_uniform, AdamState, Parameter};
pub use tensor::{Element, Tensor};
