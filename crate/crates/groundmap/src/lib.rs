//! File formats, LLM endpoints, the grounding reasoner and the pipeline
//! stages behind the `groundmap` command line tool.

pub mod annotations;
pub mod archive;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod graph_io;
pub mod llm;
pub mod manifest;
pub mod pipeline;
pub mod ply;
pub mod reasoner;
pub mod sequence;

pub use error::{Error, Result};
