//! File formats, checkpoints, and command-line plumbing around `hsg-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod graph_io;
pub mod manifest;
pub mod scene_io;

pub use error::{Error, Result};
