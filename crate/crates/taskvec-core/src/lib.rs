// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decomposes collections of task vectors (fine-tuned minus base weights) into
//! a shared component, living in the subspace their column spaces have in
//! common, and per-vector unique components. The shared subspace is found by
//! chaining the column-space projectors of all vectors and eigendecomposing
//! the result; an independent principal-angle route cross-checks it.
//!
//! The crate is `no_std`-compatible (with `alloc`); the default `std` feature
//! enables the fast matrix-multiply backend, and `parallel` adds multi-core
//! trial execution for the synthetic experiments.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod angles;
pub mod decompose;
pub mod error;
mod fmath;
pub mod linalg;
pub mod matrix;
pub mod synth;
pub mod tensor;
pub mod toy;

pub use error::Error;
pub use matrix::Matrix;
pub use tensor::{TaskVector, Tensor};

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
