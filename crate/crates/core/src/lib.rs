pub mod checkpoint;
pub mod cooc;
pub mod corpus;
pub mod evaluation;
pub mod explain;
pub mod fixtures;
pub mod itemrepr;
pub mod model;
pub mod numcore;
pub mod ratio;
pub mod sessionmodel;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use numcore::{Scalar, Tape, Tensor, Var};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
