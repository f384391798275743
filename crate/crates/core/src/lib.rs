//! Visual question answering by program synthesis.
//!
//! A code language model writes a short program for each question; the
//! program runs in a sandboxed interpreter whose visual primitives call
//! model backends. Programs that fail fall back to answering from image
//! captions directly.

pub mod backends;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod gradcam;
pub mod harness;
pub mod instance;
pub mod primitives;
pub mod proglang;
pub mod prompting;
pub mod retrieval;

/// Mixed into cache keys so responses are never replayed across versions.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
