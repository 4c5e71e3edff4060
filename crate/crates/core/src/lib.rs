//! Meta-learned diagonal-plus-low-rank Mahalanobis covariances for calibrated
//! few-shot classification.

pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nets;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Tensor, Tape, Var};
