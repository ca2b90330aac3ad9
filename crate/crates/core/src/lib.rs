//! Knowledge-graph embeddings with a searchable recurrent path cell.

pub mod autodiff;
pub mod cell;
mod codec;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod pipeline;
pub mod search;
pub mod seed;
pub mod train;
pub mod tune;
pub mod walk;

pub use error::{Error, Result};
