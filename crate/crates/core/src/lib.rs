//! Gaussian head avatars anchored to a template mesh through its UV layout,
//! rendered by tile-based gaussian splatting and fitted by gradient descent.

pub mod cli;
pub mod cloud;
pub mod error;
pub mod fit;
pub mod loss;
pub mod math;
pub mod mesh;
pub mod render;

pub use error::{Error, Result};
