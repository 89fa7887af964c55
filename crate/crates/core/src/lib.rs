//! GNN layer inference as FIFO-connected dataflow pipelines.
//!
//! The crate provides sequential reference layers for GCN, GraphSage, GIN,
//! GAT, MoNet and GatedGCN; a streaming engine that runs each layer as a
//! stage graph joined by bounded FIFOs; a cycle-level simulator and a
//! closed-form initiation-interval model of the same stage graphs; and a
//! trace-based workload characterizer.

pub mod characterize;
pub mod dataflow;
pub mod error;
pub mod graph;
pub mod ii;
pub mod model;
pub mod perf;
pub mod reference;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{CsrGraph, DegreeStats, EdgeList, NodeRange};
pub use model::{Dims, ModelKind};
pub use tensor::{FeatureMatrix, Matrix};
