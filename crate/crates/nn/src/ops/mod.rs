mod basic;
pub mod conv;
mod dense;
mod dropout;
pub mod lstm;
pub mod loss;
pub mod norm;
pub mod pool;
