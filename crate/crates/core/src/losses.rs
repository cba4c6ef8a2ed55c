//! Contrastive alignment losses, the combined client objectives, and the
//! proximal penalty.
//!
//! All contrastive losses share one form. For anchor rows `a_i` and positive
//! rows `p_i` of a batch of `B` paired samples,
//!
//! ```text
//! l_i = -log( exp(a_i.p_i / t) / ( sum_{j != i} exp(a_i.a_j / t) + exp(a_i.p_i / t) ) )
//! ```
//!
//! i.e. negatives are the other anchors of the same modality. The batch loss
//! is the mean of `l_i`. Optionally the denominator also includes the other
//! samples' positives (`a_i.p_j`, `j != i`), and embeddings can be
//! L2-normalized first.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::{softmax_cross_entropy, ModelParams, Tensor};
use crate::{Error, Result};

/// Per-sample embeddings keyed by global sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBatch {
    pub sample_ids: Vec<u64>,
    pub vectors: Tensor,
}

impl EmbeddingBatch {
    pub fn new(sample_ids: Vec<u64>, vectors: Tensor) -> Result<Self> {
        if vectors.shape().len() != 2 || vectors.rows() != sample_ids.len() {
            return Err(Error::shape("embedding batch", &[sample_ids.len()], &[vectors.rows()]));
        }
        let unique: BTreeSet<_> = sample_ids.iter().collect();
        if unique.len() != sample_ids.len() {
            return Err(Error::Pairing("duplicate sample id in batch".into()));
        }
        Ok(Self { sample_ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Rows for `ids`, in the order given.
    pub fn select_ids(&self, ids: &[u64]) -> Result<EmbeddingBatch> {
        let rows = ids
            .iter()
            .map(|id| {
                self.sample_ids
                    .iter()
                    .position(|s| s == id)
                    .ok_or_else(|| Error::Pairing(format!("sample {id} has no embedding")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingBatch {
            sample_ids: ids.to_vec(),
            vectors: self.vectors.select_rows(&rows),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Weight of the contrastive term in the combined objectives.
    pub beta: f64,
    /// Also use the other samples' positives as negatives.
    pub inter_modal_negatives: bool,
    /// L2-normalize embeddings before taking inner products.
    pub normalize: bool,
}

impl ContrastiveConfig {
    pub fn new(temperature: f64, beta: f64) -> Self {
        Self {
            temperature,
            beta,
            inter_modal_negatives: false,
            normalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::config("tau", "temperature must be positive and finite"));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::config("beta", "contrastive weight must be >= 0"));
        }
        Ok(())
    }
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self::new(0.1, 0.01)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub anchor_grad: Tensor,
    pub positive_grad: Tensor,
}

fn check_pairing(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<()> {
    if a.sample_ids != b.sample_ids {
        return Err(Error::Pairing(
            "anchor and positive batches must list the same sample ids in the same order".into(),
        ));
    }
    if a.dim() != b.dim() {
        return Err(Error::shape("embedding dim", &[a.dim()], &[b.dim()]));
    }
    if a.len() < 2 {
        return Err(Error::NoNegatives(a.len()));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-wise L2 normalization; returns normalized rows and the row norms.
fn normalize_rows(t: &Tensor) -> (Tensor, Vec<f64>) {
    let mut out = t.clone();
    let mut norms = Vec::with_capacity(t.rows());
    for r in 0..t.rows() {
        let row = out.row_mut(r);
        let n = libm::sqrt(dot(row, row)).max(1e-12);
        for v in row.iter_mut() {
            *v /= n;
        }
        norms.push(n);
    }
    (out, norms)
}

/// Pulls a gradient w.r.t. normalized rows back to the raw rows.
fn normalize_backward(normalized: &Tensor, norms: &[f64], grad: &Tensor) -> Tensor {
    let mut out = grad.clone();
    for (r, &norm) in norms.iter().enumerate() {
        let n = normalized.row(r);
        let proj = dot(n, grad.row(r));
        for (g, ni) in out.row_mut(r).iter_mut().zip(n) {
            *g = (*g - ni * proj) / norm;
        }
    }
    out
}

fn contrastive_core(
    anchors: &Tensor,
    positives: &Tensor,
    temperature: f64,
    inter_modal: bool,
) -> Result<ContrastiveOutput> {
    let b = anchors.rows();
    let d = anchors.cols();
    let inv_t = 1.0 / temperature;
    let inv_b = 1.0 / b as f64;
    let mut ga = vec![0.0; b * d];
    let mut gp = vec![0.0; b * d];
    let mut total = 0.0;
    // per row: logits over [anchor negatives..., positive, (positive negatives...)]
    let mut scores: Vec<f64> = Vec::with_capacity(2 * b);
    for i in 0..b {
        let ai = anchors.row(i);
        scores.clear();
        for j in 0..b {
            scores.push(if j == i {
                dot(ai, positives.row(i)) * inv_t
            } else {
                dot(ai, anchors.row(j)) * inv_t
            });
        }
        if inter_modal {
            for j in 0..b {
                if j != i {
                    scores.push(dot(ai, positives.row(j)) * inv_t);
                }
            }
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = scores.iter().map(|s| libm::exp(s - max)).sum();
        let lse = max + libm::log(sum);
        total += if scores[i] == max {
            // log(1 + rest) keeps precision when the positive dominates
            let rest: f64 = scores
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, s)| libm::exp(s - max))
                .sum();
            libm::log1p(rest)
        } else {
            lse - scores[i]
        };
        // dl_i/ds = softmax(s) - onehot(positive)
        for j in 0..b {
            let w = libm::exp(scores[j] - lse) * inv_b * inv_t;
            if j == i {
                let c = w - inv_b * inv_t;
                axpy(&mut ga[i * d..(i + 1) * d], c, positives.row(i));
                axpy(&mut gp[i * d..(i + 1) * d], c, ai);
            } else {
                axpy(&mut ga[i * d..(i + 1) * d], w, anchors.row(j));
                axpy(&mut ga[j * d..(j + 1) * d], w, ai);
            }
        }
        if inter_modal {
            let mut k = b;
            for j in 0..b {
                if j == i {
                    continue;
                }
                let w = libm::exp(scores[k] - lse) * inv_b * inv_t;
                axpy(&mut ga[i * d..(i + 1) * d], w, positives.row(j));
                axpy(&mut gp[j * d..(j + 1) * d], w, ai);
                k += 1;
            }
        }
    }
    let loss = total * inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("contrastive loss"));
    }
    Ok(ContrastiveOutput {
        loss,
        anchor_grad: Tensor::matrix(b, d, ga)?,
        positive_grad: Tensor::matrix(b, d, gp)?,
    })
}

fn contrastive(
    anchors: &EmbeddingBatch,
    positives: &EmbeddingBatch,
    cfg: &ContrastiveConfig,
) -> Result<ContrastiveOutput> {
    check_pairing(anchors, positives)?;
    if cfg.temperature.is_nan() || cfg.temperature <= 0.0 {
        return Err(Error::config("tau", "temperature must be positive"));
    }
    if !cfg.normalize {
        return contrastive_core(
            &anchors.vectors,
            &positives.vectors,
            cfg.temperature,
            cfg.inter_modal_negatives,
        );
    }
    let (na, norms_a) = normalize_rows(&anchors.vectors);
    let (np, norms_p) = normalize_rows(&positives.vectors);
    let out = contrastive_core(&na, &np, cfg.temperature, cfg.inter_modal_negatives)?;
    Ok(ContrastiveOutput {
        loss: out.loss,
        anchor_grad: normalize_backward(&na, &norms_a, &out.anchor_grad),
        positive_grad: normalize_backward(&np, &norms_p, &out.positive_grad),
    })
}

/// Cross-modal contrastive loss with the modal embeddings as anchors and the
/// server's shareable-modality embeddings as positives; negatives are the
/// other anchors only.
pub fn cross_modal_contrastive(
    anchors: &EmbeddingBatch,
    positives: &EmbeddingBatch,
    temperature: f64,
) -> Result<ContrastiveOutput> {
    contrastive(anchors, positives, &ContrastiveConfig::new(temperature, 1.0))
}

/// [`cross_modal_contrastive`] honouring the negative-set and normalization
/// flags of `cfg` (`beta` is ignored).
pub fn cross_modal_contrastive_with(
    anchors: &EmbeddingBatch,
    positives: &EmbeddingBatch,
    cfg: &ContrastiveConfig,
) -> Result<ContrastiveOutput> {
    contrastive(anchors, positives, cfg)
}

/// Which side anchors the embedding alignment loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignmentDirection {
    /// Server-side loss: server embeddings are anchors, local ones positives.
    LocalToServer,
    /// Edge-side loss: local embeddings are anchors, server ones positives.
    ServerToLocal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentOutput {
    pub loss: f64,
    pub server_grad: Tensor,
    pub local_grad: Tensor,
}

/// Contrastive alignment between server and local embeddings of the same
/// modality.
pub fn embedding_alignment(
    server: &EmbeddingBatch,
    local: &EmbeddingBatch,
    cfg: &ContrastiveConfig,
    direction: AlignmentDirection,
) -> Result<AlignmentOutput> {
    Ok(match direction {
        AlignmentDirection::LocalToServer => {
            let out = contrastive(server, local, cfg)?;
            AlignmentOutput {
                loss: out.loss,
                server_grad: out.anchor_grad,
                local_grad: out.positive_grad,
            }
        }
        AlignmentDirection::ServerToLocal => {
            let out = contrastive(local, server, cfg)?;
            AlignmentOutput {
                loss: out.loss,
                server_grad: out.positive_grad,
                local_grad: out.anchor_grad,
            }
        }
    })
}

/// Value and gradients of a combined `CE + beta * contrastive` objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput {
    pub loss: f64,
    pub cross_entropy: f64,
    /// Unweighted contrastive term; `None` when `beta == 0`.
    pub contrastive: Option<f64>,
    pub logits_grad: Tensor,
    /// Gradient w.r.t. the trained model's embeddings, already scaled by beta.
    pub embedding_grad: Tensor,
    /// Gradient w.r.t. the (fixed) server embeddings, scaled by beta.
    pub reference_grad: Tensor,
}

fn combine(
    logits: &Tensor,
    labels: &[usize],
    embedding: &EmbeddingBatch,
    reference: &EmbeddingBatch,
    cfg: &ContrastiveConfig,
    term: impl FnOnce() -> Result<(f64, Tensor, Tensor)>,
) -> Result<ObjectiveOutput> {
    cfg.validate()?;
    if logits.rows() != embedding.len() {
        return Err(Error::shape("objective batch", &[embedding.len()], &[logits.rows()]));
    }
    check_pairing(embedding, reference)?;
    let (ce, logits_grad) = softmax_cross_entropy(logits, labels)?;
    if cfg.beta == 0.0 {
        return Ok(ObjectiveOutput {
            loss: ce,
            cross_entropy: ce,
            contrastive: None,
            logits_grad,
            embedding_grad: Tensor::zeros(embedding.vectors.shape().to_vec()),
            reference_grad: Tensor::zeros(reference.vectors.shape().to_vec()),
        });
    }
    let (value, mut embedding_grad, mut reference_grad) = term()?;
    embedding_grad.scale(cfg.beta);
    reference_grad.scale(cfg.beta);
    Ok(ObjectiveOutput {
        loss: ce + cfg.beta * value,
        cross_entropy: ce,
        contrastive: Some(value),
        logits_grad,
        embedding_grad,
        reference_grad,
    })
}

/// Global-model objective: cross-entropy on the global model's logits plus
/// `beta` times the cross-modal contrastive loss anchored on its embeddings.
pub fn global_objective(
    logits: &Tensor,
    labels: &[usize],
    modal_emb: &EmbeddingBatch,
    server_emb: &EmbeddingBatch,
    cfg: &ContrastiveConfig,
) -> Result<ObjectiveOutput> {
    combine(logits, labels, modal_emb, server_emb, cfg, || {
        let out = contrastive(modal_emb, server_emb, cfg)?;
        Ok((out.loss, out.anchor_grad, out.positive_grad))
    })
}

/// Local-model objective: cross-entropy plus `beta` times the edge-side
/// embedding alignment loss.
pub fn local_objective(
    logits: &Tensor,
    labels: &[usize],
    local_emb: &EmbeddingBatch,
    server_emb: &EmbeddingBatch,
    cfg: &ContrastiveConfig,
) -> Result<ObjectiveOutput> {
    combine(logits, labels, local_emb, server_emb, cfg, || {
        let out = embedding_alignment(server_emb, local_emb, cfg, AlignmentDirection::ServerToLocal)?;
        Ok((out.loss, out.local_grad, out.server_grad))
    })
}

/// `(mu / 2) * ||params - global||^2` and its gradient `mu * (params - global)`.
pub fn fedprox_term(params: &ModelParams, global: &ModelParams, mu: f64) -> Result<(f64, ModelParams)> {
    if params.len() != global.len() {
        return Err(Error::Validation(format!(
            "proximal term over {} vs {} parameters",
            params.len(),
            global.len()
        )));
    }
    let mut sq = 0.0;
    let grad = params
        .values
        .iter()
        .zip(&global.values)
        .map(|(p, g)| {
            let d = p - g;
            sq += d * d;
            mu * d
        })
        .collect();
    Ok((
        0.5 * mu * sq,
        ModelParams {
            values: grad,
            layout: params.layout.clone(),
        },
    ))
}
