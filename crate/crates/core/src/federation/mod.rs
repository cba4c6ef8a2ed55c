//! The federated protocol engine and its baselines.
//!
//! A round samples participants, sends each the current global parameters
//! and the server embeddings of its samples, trains the participants (global
//! model copy first, then the local model, batch by batch), trains the
//! server encoder on the uploaded local embeddings, refreshes every stored
//! client's server embeddings, and aggregates the global model. FedAvg and
//! FedProx are the same loop without the server and local models.

mod aggregate;
mod client;
mod config;
mod engine;
mod messages;
mod server;

pub use aggregate::aggregate;
pub use client::{ClientOutcome, ClientState};
pub use config::{Aggregation, Algorithm, FederationConfig};
pub use engine::{
    run_experiment, sample_clients, Centralized, ClientExecutor, ClientJob, EvalPlan, ExperimentOutcome, FederatedData,
    Federation, NoObserver, RoundObserver, RoundReport, Sequential, Trainer,
};
pub use messages::{ClientUpload, RepresentationUpload, ServerBroadcast};
pub use server::{RepresentationStore, ServerState};
