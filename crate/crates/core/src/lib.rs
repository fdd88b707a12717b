//! Allocation-only core of the object-centric mapping and grounding engine.
//!
//! The crate is `no_std` with `alloc`. Files, networks and language models
//! are handled by the `groundmap` companion crate.
//!
//! Pipeline stages, in order:
//!
//! 1. [`ingest`]: filter 2D mask proposals, back-project them into world
//!    points, denoise with [`dbscan`], pool descriptors from feature grids.
//! 2. [`object_map`]: associate per-frame detections to persistent objects
//!    by descriptor similarity, fuse descriptors, merge duplicates.
//! 3. [`view_select`]: pick each object's best view by clustering the
//!    observing cameras and maximizing the splatted mask area.
//! 4. [`scene_graph`]: build nodes and metric/semantic spatial relations.
//! 5. [`semantic_query`] and [`eval`]: open-vocabulary labeling and metrics.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod camera;
pub mod dbscan;
pub mod descriptor;
mod error;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod mask;
pub mod object_map;
pub mod scene_graph;
pub mod semantic_query;
pub mod spatial;
pub mod view_select;

pub use error::{Error, Result};
pub use geometry::{Aabb3, Point3};
