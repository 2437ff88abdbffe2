//! Bayesian switching deep vector-autoregressive latent model.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod distributions;
pub mod error;
pub mod forecast;
pub mod inference;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod presets;
pub mod simulate;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
