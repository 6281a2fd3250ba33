//! Sampling and analysis of diffusion-model h-space vectors.
//!
//! The crate covers the full path from prompts to findings: capture
//! bottleneck activations ([`backend`]), archive them ([`store`]), drive
//! seed-paired sampling grids ([`sampling`]), measure concept gaps and anchor
//! rankings ([`geometry`]), map clusters ([`clustering`]), validate against
//! generated images ([`validation`]) and prepare prompt corpora ([`ingest`]).

pub mod backend;
pub mod clustering;
pub mod error;
pub mod geometry;
pub mod ids;
pub mod ingest;
pub mod sampling;
pub mod store;
pub mod validation;
mod rng;

pub use error::{Error, ErrorKind, Result};
