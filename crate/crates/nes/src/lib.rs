//! Std-side companion to `nes-core`: file formats, scene synthesis on disk,
//! training/eval drivers, and the `nes` CLI surface.

pub mod checkpoint;
pub mod cli;
pub mod drivers;
pub mod error;
pub mod imgio;
pub mod manifest;
pub mod synth;

pub use error::{Error, Result};
