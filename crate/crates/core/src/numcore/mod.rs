//! Dense-network numeric core.
//!
//! Fixed-topology MLPs stored as one flat parameter vector, exact reverse-mode
//! gradients with respect to parameters and inputs, Adam, a central-difference
//! gradient oracle, and a little-endian binary snapshot format.
//!
//! Everything is `f64`. Batched passes go through a GEMM kernel; the
//! single-sample entry points are thin wrappers over a batch of one.

mod adam;
mod fd;
pub mod gradcheck;
mod mlp;
mod snapshot;

pub use adam::{AdamState, Direction};
pub use fd::finite_diff_grad;
pub use mlp::{Activation, NetworkParams, Tape};
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value at index {index} in {context}")]
    NonFinite { index: usize, context: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NumError>;

/// What a [`GradVector`] was differentiated with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradWrt {
    Parameters,
    Inputs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub values: Vec<f64>,
    pub wrt: GradWrt,
}

impl GradVector {
    pub fn params(values: Vec<f64>) -> Self {
        Self { values, wrt: GradWrt::Parameters }
    }

    pub fn inputs(values: Vec<f64>) -> Self {
        Self { values, wrt: GradWrt::Inputs }
    }

    pub fn zeros(len: usize, wrt: GradWrt) -> Self {
        Self { values: vec![0.0; len], wrt }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

/// Normwise relative error `‖a−b‖∞ / max(‖a‖∞, ‖b‖∞)`; zero when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error length mismatch");
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        diff = diff.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
