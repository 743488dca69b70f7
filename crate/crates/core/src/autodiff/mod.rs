//! Reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A [`Tape`] records primitives in evaluation order and sweeps them in
//! reverse. One recorded tensor may be marked as the representation
//! boundary: the first half of the backward pass stops there and exposes the
//! per-row gradient, the caller transforms it, and
//! [`Tape::resume_backward`] carries the transformed gradient down into the
//! parameters below. Injecting the captured gradient unchanged reproduces an
//! ordinary backward pass bit for bit.
//!
//! ```
//! use kspace::autodiff::{Tape, Tensor2};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
//! let x = tape.constant(Tensor2::row_vector(vec![1.0, -1.0])).unwrap();
//! let h = tape.matmul(x, w).unwrap();
//! let boundary = tape.mark_boundary(h).unwrap();
//! let loss = tape.sum_all(h).unwrap();
//!
//! tape.backward_from(loss, 1.0).unwrap();
//! let captured = tape.boundary_grad().unwrap().clone();
//! let grads = tape.resume_backward(&boundary, &captured.scaled(2.0)).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[2.0, 2.0, -2.0, -2.0]);
//! ```

mod params;
mod tape;
mod tensor;

pub use params::{BoundParams, ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{sigmoid, BoundaryHandle, GradientMap, Reduce, Tape, Var, LAYER_NORM_EPS};
pub use tensor::{axpy, dot, Tensor2};

pub(crate) use params::hex;
pub(crate) use tape::softmax_in_place;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
