//! Single-block selective state space classifier with input-dependent
//! gating, trained by full-batch gradient descent on synthetic structured
//! sequences.
//!
//! Modules follow the data flow:
//!
//! * [`featurespace`]: orthonormal feature dictionary and noisy tokens.
//! * [`datagen`]: majority-voting and locality-structured datasets.
//! * [`model`]: the gated recurrence and the classifier output.
//! * [`gradients`]: analytic gradients, gate-gradient decomposition and
//!   a finite-difference oracle.
//! * [`trainer`]: initialization and gradient descent.
//! * [`diagnostics`]: feature-alignment traces and lucky-neuron sets.

pub mod datagen;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod featurespace;
pub mod gradients;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
