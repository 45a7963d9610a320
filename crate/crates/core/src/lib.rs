//! Sound event detection with baseline and dilated convolutional recurrent
//! networks: log mel features, CRNN assembly, training, frame-based F1 and
//! error rate, synthetic corpora and the dilation-rate ablation.
//!
//! ```
//! use dcrnn_core::model::{receptive_field, DilationSchedule};
//!
//! let s: DilationSchedule = "1-2-4".parse().unwrap();
//! assert_eq!(receptive_field(3, s.rates()).unwrap(), 15);
//! ```

pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Result, SedError};
