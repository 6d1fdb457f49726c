#![no_std]
#[cfg(test)]
extern crate std;
extern crate alloc;

pub mod analysis;
pub mod barrier;
pub mod controller;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod model;
pub mod plant;
pub mod sim;
pub mod sqp;
pub mod topology;

pub use error::{Error, Result};
pub use model::{Configuration, Truss};
