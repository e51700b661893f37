pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gtbuild;
pub mod imgeo;
pub mod interactive;
pub mod losses;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{no_grad, Scalar, Tensor};
