//! Distantly supervised relation extraction over a universal graph.
//!
//! A universal graph joins knowledge-graph triplets and textual edges
//! (sentences mentioning two entities) over one entity set. Multi-hop paths
//! through it become extra evidence next to the sentence bag of each target
//! entity pair. The model encodes sentences and paths with CNN-Max, attends
//! over each bag with a TransE-derived query, and is trained with optional
//! path-type staged pretraining and complexity-ranked path attention.

pub mod complexity;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod training;

pub mod cli;
mod textio;

pub use error::{Error, Result};
