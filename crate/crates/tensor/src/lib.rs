//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! ```
//! use mvkd_tensor::Tensor;
//!
//! let x = Tensor::<f64>::from_f64(&[1.0, -2.0], &[2]).unwrap().requires_grad_leaf();
//! x.square().sum_all().backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, -4.0]);
//! ```

mod element;
mod error;
pub mod gradcheck;
mod heap;
mod ops;
mod rng;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use ops::{Activation, ReduceOp};
pub use rng::{splitmix64, Rng, Stream, StreamRng};
pub use tensor::{grad_enabled, no_grad, Init, Tensor};
