//! Desk-scale chest radiograph pipeline: a small reverse-mode autodiff
//! engine, a UNet lung segmenter, a seven-convolution nodule classifier,
//! synthetic paired phantoms, the four preprocessing variants, training
//! curves and a multi-worker timing benchmark.

pub mod bench;
pub mod cli;
pub mod error;
pub mod image;
pub mod io;
pub mod model;
pub mod phantom;
pub mod tensor;
pub mod train;
pub mod variants;

pub use error::{Error, Result};
