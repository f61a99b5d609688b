pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod nn;
pub mod sharing;
pub mod synthetic;
pub mod tasks;
pub mod tensor;
pub mod training;
pub mod verify;

pub use autodiff::{ParamId, ParamStore, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
