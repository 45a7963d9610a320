//! Reverse-mode differentiable tensor ops for dilated convolutional
//! recurrent networks: dilated 2D convolution, frequency max pooling, batch
//! normalization, dropout, bidirectional LSTM, dense sigmoid output, binary
//! cross-entropy, and the Adam optimizer.
//!
//! All arithmetic is in `f64`. Ops are methods on [`Tape`], which records
//! what is needed to backpropagate from a scalar loss:
//!
//! ```
//! use dcrnn_nn::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

pub mod checkpoint;
mod error;
mod gemm;
pub mod ops;
pub mod optim;
mod tape;
mod tensor;

pub use error::{Error, Result};
pub use ops::conv::DilatedConvSpec;
pub use ops::lstm::LstmVars;
pub use ops::norm::RunningStats;
pub use optim::{Adam, AdamConfig};
pub use tape::{Mode, Tape, Var};
pub use tensor::Tensor;
