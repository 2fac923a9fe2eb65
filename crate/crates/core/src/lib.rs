//! Scaleogram-based emotion recognition experiments on multichannel EEG.
//!
//! The pipeline turns each channel of a trial into a Morlet CWT scaleogram,
//! rasterizes it, and feeds the stacked channel images to a compact vision
//! transformer with Linformer attention. The [`training`] module runs the
//! k-fold protocol on top.
//!
//! Data-parallel loops go through [`exec::Exec`]; the `parallel` feature
//! (default) backs them with rayon.

pub mod channels;
pub mod cwt;
pub mod data_io;
pub mod error;
pub mod exec;
pub mod model;
pub mod rng;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
pub use exec::Exec;
