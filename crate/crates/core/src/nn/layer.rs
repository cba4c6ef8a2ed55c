use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LayerSlot, ModelParams, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// `y = act(x W + b)` with `W` stored row-major as `[in_dim x out_dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Glorot-uniform weights in `(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let a = libm::sqrt(6.0 / (in_dim + out_dim) as f64);
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-a..a)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.in_dim || input.shape().len() != 2 {
            return Err(Error::shape(
                "dense layer input",
                &[input.rows(), self.in_dim],
                input.shape(),
            ));
        }
        let rows = input.rows();
        let mut out = vec![0.0; rows * self.out_dim];
        for r in 0..rows {
            let x = input.row(r);
            let y = &mut out[r * self.out_dim..(r + 1) * self.out_dim];
            y.copy_from_slice(&self.bias);
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let w = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
                for (yj, wj) in y.iter_mut().zip(w) {
                    *yj += xi * wj;
                }
            }
            for v in y.iter_mut() {
                *v = self.activation.apply(*v);
            }
        }
        Tensor::matrix(rows, self.out_dim, out)
    }

    /// Returns `(weight+bias grads, input grad)` given the cached input and
    /// output of this layer and the gradient w.r.t. its output.
    fn backward(&self, input: &Tensor, output: &Tensor, upstream: &Tensor, grads: &mut [f64]) -> Result<Tensor> {
        let rows = input.rows();
        let (w_grad, b_grad) = grads.split_at_mut(self.in_dim * self.out_dim);
        let mut input_grad = vec![0.0; rows * self.in_dim];
        let mut delta = vec![0.0; self.out_dim];
        for r in 0..rows {
            let y = output.row(r);
            let g = upstream.row(r);
            for j in 0..self.out_dim {
                delta[j] = g[j] * self.activation.derivative_from_output(y[j]);
                b_grad[j] += delta[j];
            }
            let x = input.row(r);
            let gx = &mut input_grad[r * self.in_dim..(r + 1) * self.in_dim];
            for i in 0..self.in_dim {
                let w = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
                let wg = &mut w_grad[i * self.out_dim..(i + 1) * self.out_dim];
                let mut acc = 0.0;
                for j in 0..self.out_dim {
                    wg[j] += x[i] * delta[j];
                    acc += w[j] * delta[j];
                }
                gx[i] = acc;
            }
        }
        Tensor::matrix(rows, self.in_dim, input_grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkRole {
    Encoder,
    Projection,
    Classifier,
}

#[derive(Debug, Clone, PartialEq)]
struct ForwardCache {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Tensor>,
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
    role: NetworkRole,
    cache: Option<ForwardCache>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>, role: NetworkRole) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape("layer chain", &[pair[0].out_dim], &[pair[1].in_dim]));
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::shape(
                    "layer parameters",
                    &[l.in_dim * l.out_dim, l.out_dim],
                    &[l.weights.len(), l.bias.len()],
                ));
            }
        }
        Ok(Self {
            layers,
            role,
            cache: None,
        })
    }

    /// Builds `dims[0] -> dims[1] -> ... -> dims[n]` with `hidden` activations
    /// on every layer but the last, which uses `output`.
    pub fn mlp<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        role: NetworkRole,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Validation("an mlp needs at least two dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let act = if l + 1 == n { output } else { hidden };
                DenseLayer::glorot(dims[l], dims[l + 1], act, rng)
            })
            .collect();
        Self::new(layers, role)
    }

    pub fn role(&self) -> NetworkRole {
        self.role
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Pure forward pass; does not touch the cache.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = self.layers[0].forward(input)?;
        for layer in &self.layers[1..] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    /// Forward pass that records activations for a later [`Network::backward`].
    pub fn forward_cached(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward(&activations[activations.len() - 1])?;
            activations.push(next);
        }
        let out = activations[activations.len() - 1].clone();
        self.cache = Some(ForwardCache { activations });
        Ok(out)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Backpropagates `upstream` (gradient w.r.t. the cached output) and
    /// returns the parameter gradient plus the gradient w.r.t. the input.
    pub fn backward(&self, upstream: &Tensor) -> Result<(ModelParams, Tensor)> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardCache)?;
        let output = &cache.activations[cache.activations.len() - 1];
        if upstream.shape() != output.shape() {
            return Err(Error::shape("upstream gradient", output.shape(), upstream.shape()));
        }
        if !upstream.is_finite() {
            return Err(Error::NonFinite("upstream gradient"));
        }
        let mut grads = ModelParams::zeros_like(&self.params_layout_only());
        let mut g = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let slot = grads.layout[l];
            let block = &mut grads.values[slot.offset..slot.offset + slot.len()];
            g = layer.backward(&cache.activations[l], &cache.activations[l + 1], &g, block)?;
        }
        Ok((grads, g))
    }

    fn layout(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        self.layers
            .iter()
            .map(|l| {
                let slot = LayerSlot {
                    offset,
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                };
                offset += slot.len();
                slot
            })
            .collect()
    }

    fn params_layout_only(&self) -> ModelParams {
        let layout = self.layout();
        let len = layout.last().map_or(0, |s| s.offset + s.len());
        ModelParams {
            values: vec![0.0; len],
            layout,
        }
    }

    pub fn params(&self) -> ModelParams {
        let mut values = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            values.extend_from_slice(&l.weights);
            values.extend_from_slice(&l.bias);
        }
        ModelParams {
            values,
            layout: self.layout(),
        }
    }

    /// Overwrites all weights from `params`; the layout must match exactly.
    pub fn load_params(&mut self, params: &ModelParams) -> Result<()> {
        if params.layout != self.layout() {
            return Err(Error::Validation("parameter layout does not match network".into()));
        }
        for (layer, slot) in self.layers.iter_mut().zip(&params.layout) {
            let block = &params.values[slot.offset..slot.offset + slot.len()];
            let (w, b) = block.split_at(slot.in_dim * slot.out_dim);
            layer.weights.copy_from_slice(w);
            layer.bias.copy_from_slice(b);
        }
        self.cache = None;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_gradient, relative_error};
    use crate::rng::{SeedStreams, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    fn linear(weights: Vec<f64>, in_dim: usize, out_dim: usize) -> Network {
        let layer = DenseLayer {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation: Activation::Linear,
        };
        Network::new(vec![layer], NetworkRole::Projection).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = linear(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn hand_matrix_product() {
        let net = linear(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let net = linear(vec![1.0; 4], 2, 2);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn broken_chain_is_rejected() {
        let a = DenseLayer::zeros(2, 3, Activation::Relu);
        let b = DenseLayer::zeros(4, 1, Activation::Linear);
        assert!(Network::new(vec![a, b], NetworkRole::Encoder).is_err());
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let net = linear(vec![1.0; 4], 2, 2);
        let g = Tensor::zeros(vec![1, 2]);
        assert_eq!(net.backward(&g).unwrap_err(), Error::NoForwardCache);
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let mut net = linear(vec![0.5, -1.0, 2.0, 0.25, 1.0, 3.0], 3, 2);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        net.forward_cached(&x).unwrap();
        let (grads, gx) = net.backward(&Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(&grads.values[..6], &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert_eq!(&grads.values[6..], &[1.0, 1.0]);
        // input grad = W * 1
        assert_eq!(gx.data(), &[-0.5, 2.25, 4.0]);
    }

    #[test]
    fn zero_input_gives_zero_weight_grads() {
        let mut net = linear(vec![0.3, -0.2, 0.7, 0.1], 2, 2);
        let x = Tensor::zeros(vec![3, 2]);
        net.forward_cached(&x).unwrap();
        let up = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![0.0, 3.0]]).unwrap();
        let (grads, _) = net.backward(&up).unwrap();
        assert!(grads.values[..4].iter().all(|&v| v == 0.0));
        assert_eq!(&grads.values[4..], &[1.5, 4.0]);
    }

    /// Straight-line re-evaluation of a dense chain, written independently of
    /// `DenseLayer::forward`.
    #[allow(clippy::needless_range_loop)]
    fn reference_forward(net: &Network, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut cur: Vec<Vec<f64>> = x.to_vec();
        for l in net.layers() {
            cur = cur
                .iter()
                .map(|row| {
                    (0..l.out_dim)
                        .map(|j| {
                            let mut s = l.bias[j];
                            for i in 0..l.in_dim {
                                s += row[i] * l.weights[i * l.out_dim + j];
                            }
                            match l.activation {
                                Activation::Linear => s,
                                Activation::Relu => s.max(0.0),
                                Activation::Tanh => s.tanh(),
                            }
                        })
                        .collect()
                })
                .collect();
        }
        cur
    }

    fn random_net(seed: u64, dims: &[usize], hidden: Activation) -> Network {
        let mut rng = SeedStreams::new(seed).rng(Stream::Init, 0, 0);
        let mut net = Network::mlp(dims, hidden, Activation::Linear, NetworkRole::Encoder, &mut rng).unwrap();
        // nonzero biases so they are exercised
        let mut p = net.params();
        for (k, v) in p.values.iter_mut().enumerate() {
            *v += 0.01 * (k % 7) as f64;
        }
        net.load_params(&p).unwrap();
        net
    }

    fn random_input(seed: u64, rows: usize, cols: usize) -> Tensor {
        let mut rng = SeedStreams::new(seed).rng(Stream::Data, 0, 0);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn forward_matches_reference_on_random_three_layer_net() {
        for seed in 0..5 {
            let net = random_net(seed, &[5, 7, 6, 3], Activation::Tanh);
            let x = random_input(seed, 4, 5);
            let rows: Vec<Vec<f64>> = (0..4).map(|r| x.row(r).to_vec()).collect();
            let expected = reference_forward(&net, &rows);
            let got = net.forward(&x).unwrap();
            for r in 0..4 {
                for j in 0..3 {
                    assert!((got.row(r)[j] - expected[r][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, act) in [(1, Activation::Tanh), (2, Activation::Relu), (3, Activation::Tanh)] {
            let mut net = random_net(seed, &[4, 6, 5, 3], act);
            let x = random_input(seed + 10, 5, 4);
            let up = random_input(seed + 20, 5, 3);
            // scalar loss: sum(out * up)
            net.forward_cached(&x).unwrap();
            let (analytic, _) = net.backward(&up).unwrap();
            let probe = net.clone();
            let numeric = finite_diff_gradient(
                |p| {
                    let mut n = probe.clone();
                    n.load_params(p).unwrap();
                    let out = n.forward(&x).unwrap();
                    out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
                },
                &net.params(),
                1e-5,
            )
            .unwrap();
            assert!(relative_error(&analytic.values, &numeric.values) <= 1e-4);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut net = random_net(9, &[3, 4, 2], Activation::Tanh);
        let x = random_input(9, 2, 3);
        let up = random_input(19, 2, 2);
        net.forward_cached(&x).unwrap();
        let (_, gx) = net.backward(&up).unwrap();
        let as_params = ModelParams {
            values: x.data().to_vec(),
            layout: Vec::new(),
        };
        let numeric = finite_diff_gradient(
            |p| {
                let xi = Tensor::matrix(2, 3, p.values.clone()).unwrap();
                let out = net.forward(&xi).unwrap();
                out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            },
            &as_params,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(gx.data(), &numeric.values) <= 1e-4);
    }

    proptest! {
        #[test]
        fn params_round_trip_is_exact(seed in 0u64..1000, h in 1usize..6) {
            let net = random_net(seed, &[3, h, 2], Activation::Relu);
            let p = net.params();
            let mut other = random_net(seed + 1, &[3, h, 2], Activation::Relu);
            other.load_params(&p).unwrap();
            prop_assert_eq!(other.params(), p);
            prop_assert_eq!(other.layers(), net.layers());
        }

        #[test]
        fn forward_is_pure(seed in 0u64..1000) {
            let net = random_net(seed, &[4, 5, 2], Activation::Tanh);
            let x = random_input(seed, 3, 4);
            let a = net.forward(&x).unwrap();
            let b = net.forward(&x).unwrap();
            prop_assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}
