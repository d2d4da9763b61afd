//! Deterministic single-process simulator of personalized federated graph
//! learning over fixed-shape ego-graphs.
//!
//! Clients hold label-skewed partitions of one graph and train a model made of
//! reduction layers (an MLP mapping raw features to a shared low-dimensional
//! embedding) and personalization layers (a GraphSAGE stack plus classifier).
//! Each round, clients upload their reduction weights and privacy-preserving
//! *mashed ego-graphs* (per-position means of reduction embeddings and one-hot
//! labels over a batch); the server averages reduction weights, trains a global
//! personalization model on the mashed pool, and every client then pulls the
//! global weights toward itself with an adaptive mixing coefficient driven by
//! the earth mover distance between local and global label distributions.
//!
//! The building blocks live in their own modules and are exercised by the
//! runnable programs under `examples/`; the `fedego` binary exposes the same
//! entry points as subcommands.

pub mod ego;
pub mod error;
pub mod eval;
pub mod fed;
pub mod graph;
pub mod mash;
pub mod nn;
pub mod partition;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
