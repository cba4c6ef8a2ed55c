//! Everything that crosses the edge/server boundary. Labels, non-shareable
//! features and local classifier weights have no field to travel in.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::losses::EmbeddingBatch;
use crate::nn::{ModelParams, Tensor};

/// One-time upload of frozen shareable-modality representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationUpload {
    pub client_id: usize,
    pub sample_ids: Vec<u64>,
    pub features: Tensor,
}

/// Server to participant at the start of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerBroadcast {
    pub round: usize,
    pub global_params: ModelParams,
    /// Server embeddings of this client's samples, when it uploaded any.
    pub server_embeddings: Option<EmbeddingBatch>,
}

/// Participant to server at the end of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpload {
    pub client_id: usize,
    /// Shard size, used by size-weighted aggregation.
    pub num_samples: usize,
    pub global_params: ModelParams,
    /// Local-encoder embeddings of the whole shard.
    pub local_embeddings: Option<EmbeddingBatch>,
}
