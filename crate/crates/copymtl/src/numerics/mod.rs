//! Differentiable numeric core: dense arrays, a reverse-mode tape,
//! LSTM cell, Adam, and a finite-difference gradient checker.

pub mod adam;
pub mod array;
pub mod gradcheck;
pub mod lstm;
pub mod params;
pub mod rng;
pub mod tape;

pub use adam::AdamState;
pub use array::DenseArray;
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use lstm::LstmWeights;
pub use params::{Param, ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{NodeId, Tape};
