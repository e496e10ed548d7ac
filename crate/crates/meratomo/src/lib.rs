//! MERA tomography for 1D critical systems.
//!
//! This crate reconstructs the multi-scale entanglement renormalization
//! (MERA) circuit of a target quantum state from local Pauli measurements,
//! optimizes which physical measurements to perform via renormalized-operator
//! selection, computes measurement budgets, and certifies the reconstruction
//! error from quantities recorded during the procedure.
//!
//! Module map:
//! - [`tensor`]: dense complex tensors, contraction, SVD, Hermitian eigen,
//!   partial trace, container serialization.
//! - [`pauli`]: Pauli strings, expectation values, finite-shot sampling of
//!   tensor-product measurement settings.
//! - [`mera`]: MERA circuit data model (binary/ternary), causal cones,
//!   state evaluation, ascending superoperators.
//! - [`stateprep`]: critical spin-chain ground states (Lanczos), random MERA
//!   states, Haar-perturbed states.
//! - [`select`]: renormalized-operator candidates, greedy determinant
//!   selection, Gram orthogonalization, shot allocation, budgets.
//! - [`tomo`]: layer-by-layer reconstruction engine.
//! - [`certify`]: a-posteriori error bounds and exact fidelities.
//! - [`io`]: tensor container and circuit bundle file formats.

pub mod certify;
pub mod error;
pub mod io;
pub mod mera;
pub mod pauli;
pub mod select;
pub mod stateprep;
pub mod tensor;
pub mod tomo;

pub use error::{Error, Result};
pub use tensor::Tensor;
