//! Tool-sequence recommendation from execution-transition graphs.
//!
//! The crate mines a directed, weighted tool-transition graph from successful
//! agent trajectories and uses it in a two-stage pipeline:
//!
//! 1. [`retrieval`] builds a candidate tool set for a query from a semantic
//!    pool, graph-guided bridging and greedy hybrid sequencing.
//! 2. [`rerank`] orders that fixed set, either with the learned pairwise
//!    reranker or with one of the non-learned baselines.
//!
//! [`metrics`] scores predictions against gold sequences (set metrics,
//! Kendall-τ, ordered precision, transition and first-tool accuracy) and runs
//! paired bootstrap comparisons. [`community`] validates graph structure with
//! Louvain, purity and NMI. [`synthetic`] generates corpora with planted
//! dependency chains.
//!
//! Everything here is pure computation over in-memory data and builds with
//! `no_std` + `alloc`. File formats and the command-line front end live in the
//! `skillgraph` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod community;
pub mod embeddings;
mod error;
pub mod graph;
pub mod metrics;
pub mod rerank;
pub mod retrieval;
pub mod rng;
pub mod synthetic;
pub mod trajectory;

pub use crate::embeddings::{BuiltinEncoder, EmbeddingStore, EncoderTag, QueryEncoder};
pub use crate::error::{Error, Result};
pub use crate::graph::SkillGraph;
pub use crate::retrieval::{CandidateSet, RetrievalConfig};
pub use crate::trajectory::{ToolId, Trajectory, TrajectoryDataset};
