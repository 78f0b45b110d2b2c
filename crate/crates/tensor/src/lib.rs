//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The crate is deliberately small: everything the training code needs and
//! nothing more.
//!
//! - [`Tensor`]: a dense row-major f64 array (1-D or 2-D in practice).
//! - [`ops`]: eager kernels (matmul, softmax, layer norm, ...). These are the
//!   single source of numeric truth; both traced and untraced forward passes
//!   go through them.
//! - [`Tape`]: a define-by-run graph. A tape is rebuilt for every forward
//!   pass; [`Tape::backward`] walks the recorded nodes in reverse and returns
//!   per-leaf gradients.
//! - [`AdamState`]: Adam with bias correction.
//! - [`checkpoint`]: a single-file parameter snapshot format with a JSON
//!   manifest and raw little-endian payloads; round-trips are bit-exact.
//!
//! Debug builds assert that no forward op produces NaN or Inf.

mod adam;
pub mod checkpoint;
mod error;
pub mod ops;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use error::TensorError;
pub use tape::{Gradients, Tape, Value};
pub use tensor::Tensor;

/// Epsilon used inside layer normalization (variance floor).
pub const LAYER_NORM_EPS: f64 = 1e-5;
