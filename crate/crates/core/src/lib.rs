//! Memory-augmented retrieval and policy learning.
//!
//! Two memory tracks feed an agent: a case library of past successful
//! trajectories, ranked by semantic similarity fused with a learned value
//! network, and a skill library of executable scripts ranked by similarity
//! fused with an exponential-moving-average utility. The crate also carries
//! the geometric and process metrics used to score outcomes and a seeded
//! simulator that closes the loop without a language model or CAD kernel.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod case_memory;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod geometry;
pub mod hyper;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod skill_memory;
pub mod value_net;

pub use error::{Error, Result};
pub use hyper::HyperParams;
