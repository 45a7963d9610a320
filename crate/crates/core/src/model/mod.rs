//! CRNN assembly from a declarative configuration, parameter counting and
//! receptive-field analysis.

mod config;
mod crnn;
mod receptive;

pub use config::{
    auto_pools, ConvLayerConfig, DilationSchedule, ModelConfig, DEFAULT_KERNEL, DESK_FILTERS, PAPER_FILTERS,
};
pub use crnn::{Crnn, Forward, ParamCount};
pub use receptive::{empirical_receptive_field, probe_model, receptive_field};
