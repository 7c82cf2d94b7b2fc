//! Hybrid video compression: a conventional lossy codec plus losslessly
//! coded reference frames, restored on the decoder side by a two-step
//! neural network.

pub mod codecs;
pub mod container;
pub mod error;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod restoration;
pub mod scenedetect;
pub mod training;
pub mod videoio;

pub use error::{Error, Result};
