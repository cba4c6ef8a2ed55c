use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::ClientShard;
use crate::federation::messages::{ClientUpload, ServerBroadcast};
use crate::federation::FederationConfig;
use crate::losses::{fedprox_term, global_objective, local_objective, ContrastiveConfig, EmbeddingBatch};
use crate::models::{GlobalModel, LocalModel, ModalityMode, ShareableInput};
use crate::nn::{softmax_cross_entropy, AdamConfig, AdamState, ModelParams, Tensor};
use crate::{Error, Result};

/// Shuffled mini-batches of `0..n`. A trailing batch of one sample is folded
/// into the previous batch so contrastive terms always have a negative.
pub(crate) fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batch_size >= 2 && batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("checked above");
        batches.last_mut().expect("checked above").extend(last);
    }
    batches
}

/// Rows of one mini-batch.
pub(crate) struct Batch<'a> {
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub non_shareable: Tensor,
    pub shareable: Option<Tensor>,
    pub reference: Option<&'a EmbeddingBatch>,
}

/// One optimizer step of the global model on `CE (+ beta * cross-modal)
/// (+ proximal term)`. Returns the objective value.
pub(crate) fn global_step(
    model: &mut GlobalModel,
    adam: &mut AdamState,
    batch: &Batch<'_>,
    cfg: &ContrastiveConfig,
    prox: Option<(&ModelParams, f64)>,
) -> Result<f64> {
    let shareable = match (&batch.shareable, model.mode) {
        (_, ModalityMode::UniModal) => ShareableInput::Missing,
        (Some(t), ModalityMode::MultiModal) => ShareableInput::Features(t),
        (None, ModalityMode::MultiModal) => ShareableInput::ZeroImputed,
    };
    let (emb, logits) = model.forward_train(&batch.non_shareable, shareable, &batch.ids)?;
    let (mut loss, logits_grad, emb_grad) = match batch.reference {
        Some(reference) => {
            let out = global_objective(&logits, &batch.labels, &emb, &reference.select_ids(&batch.ids)?, cfg)?;
            (out.loss, out.logits_grad, out.embedding_grad)
        }
        None => {
            let (ce, grad) = softmax_cross_entropy(&logits, &batch.labels)?;
            (ce, grad, Tensor::zeros(emb.vectors.shape().to_vec()))
        }
    };
    let mut grads = model.backward(&logits_grad, &emb_grad)?;
    let mut params = model.params();
    if let Some((anchor, mu)) = prox {
        let (value, prox_grad) = fedprox_term(&params, anchor, mu)?;
        loss += value;
        grads.add_scaled(&prox_grad, 1.0)?;
    }
    adam.step(&mut params, &grads)?;
    model.load_params(&params)?;
    Ok(loss)
}

fn local_step(model: &mut LocalModel, adam: &mut AdamState, batch: &Batch<'_>, cfg: &ContrastiveConfig) -> Result<f64> {
    let shareable = batch
        .shareable
        .as_ref()
        .ok_or_else(|| Error::Modality("local model trained without shareable features".into()))?;
    let (emb, logits) = model.forward_train(shareable, &batch.ids)?;
    let (loss, logits_grad, emb_grad) = match batch.reference {
        Some(reference) => {
            let out = local_objective(&logits, &batch.labels, &emb, &reference.select_ids(&batch.ids)?, cfg)?;
            (out.loss, out.logits_grad, out.embedding_grad)
        }
        None => {
            let (ce, grad) = softmax_cross_entropy(&logits, &batch.labels)?;
            (ce, grad, Tensor::zeros(emb.vectors.shape().to_vec()))
        }
    };
    let grads = model.backward(&logits_grad, &emb_grad)?;
    let mut params = model.params();
    adam.step(&mut params, &grads)?;
    model.load_params(&params)?;
    Ok(loss)
}

/// What a participant produced in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutcome {
    pub client_id: usize,
    /// `None` when the client had nothing to train on.
    pub upload: Option<ClientUpload>,
    pub loss_glob: Option<f64>,
    pub loss_loc: Option<f64>,
    pub warnings: Vec<String>,
}

/// Everything one edge device keeps between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    pub shard: ClientShard,
    /// Frozen-extractor output for the shareable modality, if present.
    pub shareable_repr: Option<Tensor>,
    pub local_model: Option<LocalModel>,
    local_adam: Option<AdamState>,
    server_embeddings: Option<EmbeddingBatch>,
}

impl ClientState {
    pub fn new(
        shard: ClientShard,
        shareable_repr: Option<Tensor>,
        local_model: Option<LocalModel>,
        learning_rate: f64,
    ) -> Result<Self> {
        if let Some(repr) = &shareable_repr {
            if repr.rows() != shard.len() {
                return Err(Error::shape(
                    "shareable representations",
                    &[shard.len()],
                    &[repr.rows()],
                ));
            }
        }
        if local_model.is_some() && shareable_repr.is_none() {
            return Err(Error::Modality(format!(
                "client {} has a local model but no shareable modality",
                shard.client_id
            )));
        }
        let local_adam = local_model
            .as_ref()
            .map(|m| AdamState::new(m.params().len(), AdamConfig::with_learning_rate(learning_rate)));
        Ok(Self {
            client_id: shard.client_id,
            shard,
            shareable_repr,
            local_model,
            local_adam,
            server_embeddings: None,
        })
    }

    pub fn server_embeddings(&self) -> Option<&EmbeddingBatch> {
        self.server_embeddings.as_ref()
    }

    /// Caches the server embeddings carried by a broadcast.
    pub fn receive(&mut self, broadcast: &ServerBroadcast) -> Result<()> {
        if let Some(z) = &broadcast.server_embeddings {
            if let Some(id) = z.sample_ids.iter().find(|id| !self.shard.sample_ids.contains(id)) {
                return Err(Error::Pairing(format!(
                    "server embedding for sample {id} not held by client {}",
                    self.client_id
                )));
            }
        }
        self.server_embeddings = broadcast.server_embeddings.clone();
        Ok(())
    }

    fn batch(&self, rows: &[usize], with_reference: bool) -> Batch<'_> {
        Batch {
            ids: rows.iter().map(|&i| self.shard.sample_ids[i]).collect(),
            labels: rows.iter().map(|&i| self.shard.labels[i]).collect(),
            non_shareable: self.shard.non_shareable.select_rows(rows),
            shareable: self.shareable_repr.as_ref().map(|t| t.select_rows(rows)),
            reference: if with_reference {
                self.server_embeddings.as_ref()
            } else {
                None
            },
        }
    }

    /// Local training on a copy of the broadcast global model (and on this
    /// client's local model), then the upload for the server.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        template: &GlobalModel,
        broadcast: &ServerBroadcast,
        cfg: &FederationConfig,
        rng: &mut R,
    ) -> Result<ClientOutcome> {
        self.receive(broadcast)?;
        let mut warnings = Vec::new();
        let n = self.shard.len();
        if n == 0 {
            warnings.push(format!("client {} has an empty shard; skipped", self.client_id));
            return Ok(ClientOutcome {
                client_id: self.client_id,
                upload: None,
                loss_glob: None,
                loss_loc: None,
                warnings,
            });
        }
        let contrastive = cfg.contrastive();
        let aligned = cfg.uses_shareable_alignment() && self.shareable_repr.is_some();
        if aligned && self.server_embeddings.is_none() {
            return Err(Error::Protocol(format!(
                "client {} trains before receiving server embeddings",
                self.client_id
            )));
        }
        if aligned && n < 2 {
            warnings.push(format!(
                "client {} holds a single sample; contrastive terms skipped",
                self.client_id
            ));
        }
        let mut global = template.clone();
        global.load_params(&broadcast.global_params)?;
        let mut global_adam = AdamState::new(
            broadcast.global_params.len(),
            AdamConfig::with_learning_rate(cfg.learning_rate),
        );
        let prox = cfg.active_prox_weight().map(|mu| (&broadcast.global_params, mu));
        let train_local = aligned && self.local_model.is_some();
        let mut glob_sum = 0.0;
        let mut loc_sum = 0.0;
        let mut steps = 0usize;
        let mut local_model = self.local_model.take();
        let mut local_adam = self.local_adam.take();
        let result = (|| -> Result<()> {
            for _ in 0..cfg.local_epochs {
                for rows in shuffled_batches(n, cfg.batch_size, rng) {
                    let batch = self.batch(&rows, aligned && rows.len() >= 2);
                    glob_sum += global_step(&mut global, &mut global_adam, &batch, &contrastive, prox)?;
                    if train_local {
                        let model = local_model.as_mut().expect("train_local implies a local model");
                        let adam = local_adam.as_mut().expect("local model has an optimizer");
                        loc_sum += local_step(model, adam, &batch, &contrastive)?;
                    }
                    steps += 1;
                }
            }
            Ok(())
        })();
        self.local_model = local_model;
        self.local_adam = local_adam;
        result?;
        let local_embeddings = match (&self.local_model, &self.shareable_repr) {
            (Some(model), Some(repr)) if cfg.uses_shareable_alignment() => {
                Some(model.encode(repr, &self.shard.sample_ids)?)
            }
            _ => None,
        };
        Ok(ClientOutcome {
            client_id: self.client_id,
            upload: Some(ClientUpload {
                client_id: self.client_id,
                num_samples: n,
                global_params: global.params(),
                local_embeddings,
            }),
            loss_glob: Some(glob_sum / steps as f64),
            loss_loc: train_local.then(|| loc_sum / steps as f64),
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedStreams, Stream};
    use std::collections::BTreeSet;

    #[test]
    fn batches_cover_each_index_once() {
        let streams = SeedStreams::new(3);
        for n in 1..40 {
            for b in 1..6 {
                let batches = shuffled_batches(n, b, &mut streams.rng(Stream::Batching, n as u64, b as u64));
                let all: BTreeSet<usize> = batches.iter().flatten().copied().collect();
                assert_eq!(all.len(), n);
                assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), n);
                if b >= 2 && n >= 2 {
                    assert!(batches.iter().all(|x| x.len() >= 2));
                }
            }
        }
    }
}
