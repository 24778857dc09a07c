//! Decentralized consensus and SGD with compressed gossip, simulated on a
//! single machine.
//!
//! Nodes hold matrix-valued state and communicate over a fixed undirected
//! graph with a doubly stochastic mixing matrix. The interesting protocols
//! compress the pairwise differences they exchange:
//!
//! * power-iteration gossip: each edge maintains one vector that is refined
//!   by alternating multiplications with the current difference, so an edge
//!   exchanges `rank` vectors per round instead of a full matrix;
//! * linear projection gossip: both endpoints apply one shared random
//!   projection (entry mask, row or column subspace) drawn from an edge
//!   stream, so it costs no coordination messages;
//! * a memory-based baseline that sends quantized increments against public
//!   node copies (sign, top-entry, and rank-1 quantizers).
//!
//! On top of the consensus layer sits decentralized SGD in three variants,
//! plus a harness that runs JSON-configured experiments, accounts bits on the
//! wire, and writes deterministic CSV metrics.

pub mod compressors;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod optimization;
pub mod protocols;
pub mod topology;

pub use error::{Error, Result};
