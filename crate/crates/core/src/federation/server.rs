use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::federation::client::shuffled_batches;
use crate::federation::messages::{ClientUpload, RepresentationUpload};
use crate::losses::{embedding_alignment, AlignmentDirection, ContrastiveConfig, EmbeddingBatch};
use crate::models::ServerModel;
use crate::nn::{AdamConfig, AdamState, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct StoredRepresentations {
    sample_ids: Vec<u64>,
    features: Tensor,
    rows: BTreeMap<u64, usize>,
}

/// Shareable-modality representations uploaded by clients, keyed by client.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RepresentationStore {
    entries: BTreeMap<usize, StoredRepresentations>,
}

impl RepresentationStore {
    pub fn insert(&mut self, upload: RepresentationUpload) -> Result<()> {
        if upload.features.rows() != upload.sample_ids.len() {
            return Err(Error::shape(
                "representation upload",
                &[upload.sample_ids.len()],
                &[upload.features.rows()],
            ));
        }
        if self.entries.contains_key(&upload.client_id) {
            return Err(Error::Protocol(format!(
                "client {} uploaded representations twice",
                upload.client_id
            )));
        }
        let rows = upload.sample_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        self.entries.insert(
            upload.client_id,
            StoredRepresentations {
                sample_ids: upload.sample_ids,
                features: upload.features,
                rows,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, client_id: usize) -> bool {
        self.entries.contains_key(&client_id)
    }

    pub fn client_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn features(&self, client_id: usize) -> Option<(&[u64], &Tensor)> {
        self.entries
            .get(&client_id)
            .map(|e| (e.sample_ids.as_slice(), &e.features))
    }

    fn select(&self, client_id: usize, ids: &[u64]) -> Result<Tensor> {
        let entry = self
            .entries
            .get(&client_id)
            .ok_or_else(|| Error::Pairing(format!("no representations stored for client {client_id}")))?;
        let rows = ids
            .iter()
            .map(|id| {
                entry
                    .rows
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Pairing(format!("sample {id} not stored for client {client_id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(entry.features.select_rows(&rows))
    }
}

/// Server model, its optimizer, the stored representations and the latest
/// server embeddings of every stored client.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub model: ServerModel,
    adam: AdamState,
    store: RepresentationStore,
    embeddings: BTreeMap<usize, EmbeddingBatch>,
}

impl ServerState {
    pub fn new(model: ServerModel, learning_rate: f64) -> Self {
        let adam = AdamState::new(model.params().len(), AdamConfig::with_learning_rate(learning_rate));
        Self {
            model,
            adam,
            store: RepresentationStore::default(),
            embeddings: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &RepresentationStore {
        &self.store
    }

    pub fn receive(&mut self, upload: RepresentationUpload) -> Result<()> {
        self.store.insert(upload)
    }

    pub fn embeddings(&self) -> &BTreeMap<usize, EmbeddingBatch> {
        &self.embeddings
    }

    pub fn embeddings_for(&self, client_id: usize) -> Option<&EmbeddingBatch> {
        self.embeddings.get(&client_id)
    }

    /// Re-encodes the stored representations of every client.
    pub fn refresh_embeddings(&mut self) -> Result<()> {
        let mut fresh = BTreeMap::new();
        for (&k, entry) in &self.store.entries {
            fresh.insert(k, self.model.encode(&entry.features, &entry.sample_ids)?);
        }
        self.embeddings = fresh;
        Ok(())
    }

    /// Trains the server encoder to match each upload's local embeddings,
    /// one upload at a time in the order given. `batch_rng(client)` supplies
    /// the shuffling stream for that client's batches. Returns the mean batch
    /// loss, or `None` when nothing was trained.
    pub fn train<R: Rng, F: FnMut(usize) -> R>(
        &mut self,
        uploads: &[ClientUpload],
        batch_size: usize,
        cfg: &ContrastiveConfig,
        mut batch_rng: F,
    ) -> Result<Option<f64>> {
        let mut total = 0.0;
        let mut steps = 0usize;
        for upload in uploads {
            let Some(local) = &upload.local_embeddings else {
                continue;
            };
            if local.len() < 2 {
                continue;
            }
            let mut rng = batch_rng(upload.client_id);
            for rows in shuffled_batches(local.len(), batch_size, &mut rng) {
                if rows.len() < 2 {
                    continue;
                }
                let ids: Vec<u64> = rows.iter().map(|&r| local.sample_ids[r]).collect();
                let features = self.store.select(upload.client_id, &ids)?;
                let z = self.model.encoder.forward_cached(&features)?;
                let server = EmbeddingBatch::new(ids, z)?;
                let paired = EmbeddingBatch {
                    sample_ids: server.sample_ids.clone(),
                    vectors: local.vectors.select_rows(&rows),
                };
                let out = embedding_alignment(&server, &paired, cfg, AlignmentDirection::LocalToServer)?;
                let (grads, _) = self.model.encoder.backward(&out.server_grad)?;
                let mut params = self.model.params();
                self.adam.step(&mut params, &grads)?;
                self.model.load_params(&params)?;
                total += out.loss;
                steps += 1;
            }
        }
        self.model.encoder.clear_cache();
        Ok((steps > 0).then(|| total / steps as f64))
    }
}
