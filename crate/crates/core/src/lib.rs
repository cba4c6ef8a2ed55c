//! Simulation core for partially federated learning over multi-modal data.
//!
//! One modality of every sample (the "shareable" one) may leave an edge
//! device as a frozen representation, while the other modality and the labels
//! never do. The crate contains everything needed to simulate that protocol
//! deterministically:
//!
//! - [`nn`]: a small dense-network engine with explicit backpropagation,
//!   Adam, and a finite-difference gradient oracle.
//! - [`losses`]: contrastive alignment objectives, the combined global and
//!   local objectives, and the proximal term.
//! - [`models`]: server, global, and local models plus a frozen extractor.
//! - [`data`]: synthetic two-view data, Dirichlet and equal partitioning,
//!   and missing-modality masking.
//! - [`federation`]: the round engine, client and server training,
//!   aggregation, and the FedAvg / FedProx / centralized baselines.
//! - [`metrics`]: unweighted average recall and top-k accuracy.
//!
//! The crate is `no_std` and only needs `alloc`. IO, configuration files and
//! the command line live in the companion `partialfl-sim` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
mod error;
pub mod federation;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
