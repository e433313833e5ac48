pub mod attention;
pub mod autograd;
pub mod config;
pub mod diffusion;
pub mod dump;
pub mod error;
pub mod filter;
pub mod fixtures;
pub mod image;
pub mod instruct;
pub mod mask;
pub mod model;
pub mod providers;
pub mod param;
pub mod rng;
pub mod task;
pub mod tensor;
pub mod text;
pub mod toy;

pub use error::{Error, Result};
pub use tensor::Tensor;
