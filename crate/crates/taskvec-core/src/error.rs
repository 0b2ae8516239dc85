// SPDX-License-Identifier: MIT OR Apache-2.0

//! One error type for the whole crate. Variants name the violated
//! precondition, not the call site; callers that need context attach it.

use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Construction or input data is malformed: non-finite entries, or a
    /// buffer whose length disagrees with the stated dimensions.
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    /// Input to a symmetric eigendecomposition departs from symmetry by more
    /// than the allowed relative tolerance.
    #[error("matrix is not symmetric (relative asymmetry {rel:.3e})")]
    NotSymmetric { rel: f64 },

    /// An iterative factorization failed to converge.
    #[error("{0} did not converge")]
    ConvergenceFailed(&'static str),

    /// Operand shapes are incompatible.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A column projector was requested for an all-zero matrix.
    #[error("task vector is identically zero; its column space is undefined")]
    ZeroTaskVector,

    /// Chaining projectors needs at least two of them.
    #[error("need at least two projectors, got {0}")]
    NeedTwoProjectors(usize),

    /// The ordering passed to a projector chain is not a permutation of its
    /// index range.
    #[error("ordering is not a permutation of 0..{0}")]
    InvalidPermutation(usize),

    /// A threshold parameter is outside its admissible interval.
    #[error("invalid threshold {0}; expected a value in (0, 1]")]
    InvalidThreshold(f64),

    /// Principal angles were requested against a zero subspace.
    #[error("zero matrix spans no subspace")]
    ZeroSubspace,

    /// Task vectors in a set do not share layer names and shapes.
    #[error("layer mismatch: {0}")]
    LayerMismatch(String),

    /// Decomposing a set needs at least two task vectors.
    #[error("need at least two task vectors, got {0}")]
    NeedTwoVectors(usize),

    /// A generator or sweep specification is inconsistent.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// An aggregate operation received an empty sequence.
    #[error("empty input")]
    EmptyInput,

    /// Model-shaped operands disagree in layer structure.
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}")]
    DivergedTraining { step: usize },
}
