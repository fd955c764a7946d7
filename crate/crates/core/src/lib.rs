//! Knowledge graph embeddings with frozen relational graph convolutions.
//!
//! The crate trains and evaluates shallow (TransE, DistMult), R-GCN based
//! and spike-based (SpikE, hybrid, SR-GCN) link prediction models:
//!
//! - [`graph`]: triple store, dictionaries, neighbourhood index, dataset generators
//! - [`linalg`]: dense matrices, parameters with gradient buffers, Adam, gradient checking
//! - [`shallow`]: TransE / DistMult scoring and their gradients
//! - [`rgcn`]: the R-GCN encoder with a hand-written backward pass
//! - [`spiking`]: nLIF time-to-first-spike neurons, SpikE and SR-GCN encoders
//! - [`model`]: glue that composes encoders with decoders
//! - [`training`]: negative sampling, hinge loss, the epoch loop
//! - [`evaluation`]: filtered ranking, MRR/hits@k, PCA and neighbour suggestions
//! - [`bench`]: frozen vs. trained backward-pass timing and buffer accounting

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod block;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod rgcn;
pub mod shallow;
pub mod spiking;
pub mod training;

pub use error::{Error, Result};
pub use graph::{EntityId, KnowledgeGraph, RelationId, Triple};
pub use model::{Model, ModelKind};
pub use training::TrainConfig;
