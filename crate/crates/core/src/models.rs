//! The three learning components (server, global, local) and the frozen
//! extractor that stands in for a pretrained representation model.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::losses::EmbeddingBatch;
use crate::nn::{Activation, DenseLayer, ModelParams, Network, NetworkRole, Tensor};
use crate::{Error, Result};

/// Layer widths shared by all model builders. Input widths and the class
/// count come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    /// Shared embedding width of server, global and local encoders.
    pub embedding_dim: usize,
    /// Output width of the frozen extractor over the shareable modality.
    pub extracted_dim: usize,
    pub server_hidden: usize,
    pub edge_hidden: usize,
    /// Hidden width of the global classifier; 0 means a single linear layer.
    pub classifier_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            extracted_dim: 32,
            server_hidden: 64,
            edge_hidden: 32,
            classifier_hidden: 16,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("embedding_dim", self.embedding_dim),
            ("extracted_dim", self.extracted_dim),
            ("server_hidden", self.server_hidden),
            ("edge_hidden", self.edge_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityMode {
    /// Global model sees only the non-shareable modality.
    #[default]
    UniModal,
    /// Global model fuses both modalities through a projection layer.
    MultiModal,
}

/// Encoder output: bounded so inner products stay in a sane range.
const EMBEDDING_ACTIVATION: Activation = Activation::Tanh;

fn encoder<R: Rng + ?Sized>(input: usize, hidden: usize, dims: &ModelDims, rng: &mut R) -> Result<Network> {
    Network::mlp(
        &[input, hidden, dims.embedding_dim],
        Activation::Relu,
        EMBEDDING_ACTIVATION,
        NetworkRole::Encoder,
        rng,
    )
}

/// Fixed random affine map followed by tanh. Never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenExtractor {
    layer: DenseLayer,
}

impl FrozenExtractor {
    pub fn new<R: Rng + ?Sized>(raw_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            layer: DenseLayer::glorot(raw_dim, out_dim, Activation::Tanh, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layer.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layer.out_dim
    }

    pub fn extract(&self, raw: &Tensor) -> Result<Tensor> {
        self.layer.forward(raw)
    }
}

/// Server-side encoder over uploaded shareable representations.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerModel {
    pub encoder: Network,
}

impl ServerModel {
    pub fn new<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Result<Self> {
        Ok(Self {
            encoder: encoder(dims.extracted_dim, dims.server_hidden, dims, rng)?,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn encode(&self, features: &Tensor, ids: &[u64]) -> Result<EmbeddingBatch> {
        let z = self.encoder.forward(features)?;
        if !z.is_finite() {
            return Err(Error::NonFinite("server embeddings"));
        }
        EmbeddingBatch::new(ids.to_vec(), z)
    }

    pub fn params(&self) -> ModelParams {
        self.encoder.params()
    }

    pub fn load_params(&mut self, params: &ModelParams) -> Result<()> {
        self.encoder.load_params(params)
    }
}

/// Shareable-modality input to the global model.
#[derive(Debug, Clone, Copy)]
pub enum ShareableInput<'a> {
    Features(&'a Tensor),
    /// The modality is absent on this device; substitute zeros.
    ZeroImputed,
    Missing,
}

/// The federated model over the non-shareable modality (optionally fused
/// with the shareable one).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub mode: ModalityMode,
    pub encoder: Network,
    pub fusion: Option<Network>,
    pub classifier: Network,
    cached_shareable_width: usize,
}

impl GlobalModel {
    pub fn new<R: Rng + ?Sized>(
        mode: ModalityMode,
        non_shareable_dim: usize,
        num_classes: usize,
        dims: &ModelDims,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = encoder(non_shareable_dim, dims.edge_hidden, dims, rng)?;
        let fusion = match mode {
            ModalityMode::UniModal => None,
            ModalityMode::MultiModal => Some(Network::new(
                vec![DenseLayer::glorot(
                    dims.embedding_dim + dims.extracted_dim,
                    dims.embedding_dim,
                    EMBEDDING_ACTIVATION,
                    rng,
                )],
                NetworkRole::Projection,
            )?),
        };
        let classifier = if dims.classifier_hidden == 0 {
            Network::mlp(
                &[dims.embedding_dim, num_classes],
                Activation::Linear,
                Activation::Linear,
                NetworkRole::Classifier,
                rng,
            )?
        } else {
            Network::mlp(
                &[dims.embedding_dim, dims.classifier_hidden, num_classes],
                Activation::Relu,
                Activation::Linear,
                NetworkRole::Classifier,
                rng,
            )?
        };
        Ok(Self {
            mode,
            encoder,
            fusion,
            classifier,
            cached_shareable_width: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.classifier.in_dim()
    }

    fn fusion_input(&self, audio: Tensor, shareable: ShareableInput<'_>) -> Result<Tensor> {
        let fusion = self.fusion.as_ref().expect("multi-modal model has a fusion layer");
        let width = fusion.in_dim() - audio.cols();
        let text = match shareable {
            ShareableInput::Features(t) => {
                if t.rows() != audio.rows() || t.cols() != width {
                    return Err(Error::shape("shareable features", &[audio.rows(), width], t.shape()));
                }
                t.clone()
            }
            ShareableInput::ZeroImputed => Tensor::zeros(vec![audio.rows(), width]),
            ShareableInput::Missing => {
                return Err(Error::Modality(
                    "multi-modal global model needs shareable features or zero imputation".into(),
                ))
            }
        };
        audio.hconcat(&text)
    }

    /// Returns the modal embedding and the logits.
    pub fn forward(
        &self,
        non_shareable: &Tensor,
        shareable: ShareableInput<'_>,
        ids: &[u64],
    ) -> Result<(EmbeddingBatch, Tensor)> {
        let mut z = self.encoder.forward(non_shareable)?;
        if let Some(fusion) = &self.fusion {
            z = fusion.forward(&self.fusion_input(z, shareable)?)?;
        }
        let logits = self.classifier.forward(&z)?;
        Ok((EmbeddingBatch::new(ids.to_vec(), z)?, logits))
    }

    /// Like [`GlobalModel::forward`] but caches activations for
    /// [`GlobalModel::backward`].
    pub fn forward_train(
        &mut self,
        non_shareable: &Tensor,
        shareable: ShareableInput<'_>,
        ids: &[u64],
    ) -> Result<(EmbeddingBatch, Tensor)> {
        let mut z = self.encoder.forward_cached(non_shareable)?;
        if self.fusion.is_some() {
            let input = self.fusion_input(z, shareable)?;
            self.cached_shareable_width = input.cols() - self.encoder.out_dim();
            let Some(fusion) = self.fusion.as_mut() else {
                unreachable!()
            };
            z = fusion.forward_cached(&input)?;
        }
        let logits = self.classifier.forward_cached(&z)?;
        Ok((EmbeddingBatch::new(ids.to_vec(), z)?, logits))
    }

    /// Gradient of the loss w.r.t. all parameters, given the gradient w.r.t.
    /// the logits and an extra gradient w.r.t. the modal embedding.
    pub fn backward(&self, logits_grad: &Tensor, embedding_grad: &Tensor) -> Result<ModelParams> {
        let (cls_grad, mut z_grad) = self.classifier.backward(logits_grad)?;
        z_grad.add_assign(embedding_grad)?;
        let mut blocks = Vec::with_capacity(3);
        let fusion_grad = match &self.fusion {
            Some(fusion) => {
                let (g, input_grad) = fusion.backward(&z_grad)?;
                let (audio_grad, _) = input_grad.hsplit(input_grad.cols() - self.cached_shareable_width)?;
                z_grad = audio_grad;
                Some(g)
            }
            None => None,
        };
        let (enc_grad, _) = self.encoder.backward(&z_grad)?;
        blocks.push(enc_grad);
        blocks.extend(fusion_grad);
        blocks.push(cls_grad);
        Ok(ModelParams::concat(&blocks))
    }

    fn layer_counts(&self) -> Vec<usize> {
        let mut counts = vec![self.encoder.num_layers()];
        counts.extend(self.fusion.as_ref().map(Network::num_layers));
        counts.push(self.classifier.num_layers());
        counts
    }

    /// Parameters ordered encoder, fusion (if any), classifier.
    pub fn params(&self) -> ModelParams {
        let mut blocks = vec![self.encoder.params()];
        blocks.extend(self.fusion.as_ref().map(Network::params));
        blocks.push(self.classifier.params());
        ModelParams::concat(&blocks)
    }

    pub fn load_params(&mut self, params: &ModelParams) -> Result<()> {
        let mut parts = params.split(&self.layer_counts())?.into_iter();
        self.encoder.load_params(&parts.next().expect("encoder block"))?;
        if let Some(fusion) = self.fusion.as_mut() {
            fusion.load_params(&parts.next().expect("fusion block"))?;
        }
        self.classifier.load_params(&parts.next().expect("classifier block"))
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// Per-device encoder and classifier over the shareable modality. Only its
/// embeddings ever leave the device.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub encoder: Network,
    pub classifier: Network,
}

impl LocalModel {
    pub fn new<R: Rng + ?Sized>(num_classes: usize, dims: &ModelDims, rng: &mut R) -> Result<Self> {
        Ok(Self {
            encoder: encoder(dims.extracted_dim, dims.edge_hidden, dims, rng)?,
            classifier: Network::mlp(
                &[dims.embedding_dim, num_classes],
                Activation::Linear,
                Activation::Linear,
                NetworkRole::Classifier,
                rng,
            )?,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn encode(&self, shareable: &Tensor, ids: &[u64]) -> Result<EmbeddingBatch> {
        EmbeddingBatch::new(ids.to_vec(), self.encoder.forward(shareable)?)
    }

    pub fn forward(&self, shareable: &Tensor, ids: &[u64]) -> Result<(EmbeddingBatch, Tensor)> {
        let z = self.encoder.forward(shareable)?;
        let logits = self.classifier.forward(&z)?;
        Ok((EmbeddingBatch::new(ids.to_vec(), z)?, logits))
    }

    pub fn forward_train(&mut self, shareable: &Tensor, ids: &[u64]) -> Result<(EmbeddingBatch, Tensor)> {
        let z = self.encoder.forward_cached(shareable)?;
        let logits = self.classifier.forward_cached(&z)?;
        Ok((EmbeddingBatch::new(ids.to_vec(), z)?, logits))
    }

    pub fn backward(&self, logits_grad: &Tensor, embedding_grad: &Tensor) -> Result<ModelParams> {
        let (cls_grad, mut z_grad) = self.classifier.backward(logits_grad)?;
        z_grad.add_assign(embedding_grad)?;
        let (enc_grad, _) = self.encoder.backward(&z_grad)?;
        Ok(ModelParams::concat(&[enc_grad, cls_grad]))
    }

    pub fn params(&self) -> ModelParams {
        ModelParams::concat(&[self.encoder.params(), self.classifier.params()])
    }

    pub fn load_params(&mut self, params: &ModelParams) -> Result<()> {
        let parts = params.split(&[self.encoder.num_layers(), self.classifier.num_layers()])?;
        self.encoder.load_params(&parts[0])?;
        self.classifier.load_params(&parts[1])
    }
}
