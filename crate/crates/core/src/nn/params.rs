use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Position of one dense layer inside a flat parameter vector. The layer's
/// weights (`in_dim * out_dim`, row-major) come first, then its bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub offset: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSlot {
    pub fn len(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat, ordered view of a model's parameters (or of a gradient with the same
/// layout). Used for aggregation, proximal terms and finite differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub layout: Vec<LayerSlot>,
}

impl ModelParams {
    pub fn zeros_like(other: &ModelParams) -> Self {
        Self {
            values: alloc::vec![0.0; other.values.len()],
            layout: other.layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_compatible(&self, other: &ModelParams) -> Result<()> {
        if self.layout != other.layout || self.values.len() != other.values.len() {
            return Err(Error::Validation(format!(
                "parameter layouts differ ({} vs {} values)",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(())
    }

    /// Concatenates parameter blocks; slot offsets are shifted accordingly.
    pub fn concat(parts: &[ModelParams]) -> ModelParams {
        let mut values = Vec::new();
        let mut layout = Vec::new();
        for part in parts {
            let base = values.len();
            layout.extend(part.layout.iter().map(|s| LayerSlot {
                offset: s.offset + base,
                ..*s
            }));
            values.extend_from_slice(&part.values);
        }
        ModelParams { values, layout }
    }

    /// Splits into consecutive blocks holding `layer_counts[i]` layers each.
    pub fn split(&self, layer_counts: &[usize]) -> Result<Vec<ModelParams>> {
        if layer_counts.iter().sum::<usize>() != self.layout.len() {
            return Err(Error::Validation(format!(
                "cannot split {} layers into blocks of {:?}",
                self.layout.len(),
                layer_counts
            )));
        }
        let mut out = Vec::with_capacity(layer_counts.len());
        let mut layer = 0;
        for &count in layer_counts {
            let slots = &self.layout[layer..layer + count];
            let start = slots.first().map_or(0, |s| s.offset);
            let end = slots.last().map_or(start, |s| s.offset + s.len());
            out.push(ModelParams {
                values: self.values[start..end].to_vec(),
                layout: slots
                    .iter()
                    .map(|s| LayerSlot {
                        offset: s.offset - start,
                        ..*s
                    })
                    .collect(),
            });
            layer += count;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_scaled(&mut self, other: &ModelParams, factor: f64) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
        Ok(())
    }
}
