//! SENet: a masked asymmetric vision-transformer encoder-decoder for
//! camouflaged and salient object detection, together with its losses,
//! metrics, synthetic data and training loops.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
