use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, BatchNormCache, KERNEL};
use super::tensor::{FeatureMap, Tensor3};
use crate::error::{Error, Result};
use crate::imgproc::Image;
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Architecture of the siamese feature extractor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub layer_filter_counts: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub batch_norm: bool,
    /// Apply the ReLU after the last layer as well.
    pub final_relu: bool,
}

impl NetSpec {
    /// Nine 3x3 layers, 19x19 receptive field, 128-dimensional features.
    pub fn full() -> Self {
        Self::with_filters(vec![32, 32, 64, 64, 64, 128, 128, 128, 128])
    }

    /// Two-layer network for desk-scale training.
    pub fn desk() -> Self {
        Self::with_filters(vec![32, 32])
    }

    pub fn with_filters(layer_filter_counts: Vec<usize>) -> Self {
        Self {
            layer_filter_counts,
            kernel_size: KERNEL,
            stride: 1,
            batch_norm: true,
            final_relu: true,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layer_filter_counts.len()
    }

    pub fn feature_dim(&self) -> usize {
        *self.layer_filter_counts.last().unwrap_or(&0)
    }

    /// Side of the square receptive field, `2 L + 1`.
    pub fn receptive_field(&self) -> usize {
        2 * self.num_layers() + 1
    }

    /// Pixels lost on each side of the input.
    pub fn border(&self) -> usize {
        self.num_layers()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size != KERNEL || self.stride != 1 {
            return Err(Error::InvalidArgument(format!(
                "only 3x3 stride-1 kernels are supported (got {}x{} stride {})",
                self.kernel_size, self.kernel_size, self.stride
            )));
        }
        if self.layer_filter_counts.is_empty() || self.layer_filter_counts.contains(&0) {
            return Err(Error::InvalidArgument(
                "network needs at least one layer with a positive filter count".into(),
            ));
        }
        Ok(())
    }

    fn input_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            self.layer_filter_counts[layer - 1]
        }
    }
}

/// Trainable state and running statistics of one conv + BN + ReLU block.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Gradients with the layout of [`LayerParams`] (no running statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    fn shape_of(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![T::zero(); out_channels * in_channels * KERNEL * KERNEL],
            bias: vec![T::zero(); out_channels],
            gamma: vec![T::one(); out_channels],
            beta: vec![T::zero(); out_channels],
            running_mean: vec![T::zero(); out_channels],
            running_var: vec![T::one(); out_channels],
        }
    }

    pub fn trainable(&self) -> [&Vec<T>; 4] {
        [&self.weight, &self.bias, &self.gamma, &self.beta]
    }

    pub fn trainable_mut(&mut self) -> [&mut Vec<T>; 4] {
        [
            &mut self.weight,
            &mut self.bias,
            &mut self.gamma,
            &mut self.beta,
        ]
    }
}

impl<T: Scalar> LayerGrads<T> {
    fn zeros_like(p: &LayerParams<T>) -> Self {
        Self {
            weight: vec![T::zero(); p.weight.len()],
            bias: vec![T::zero(); p.bias.len()],
            gamma: vec![T::zero(); p.gamma.len()],
            beta: vec![T::zero(); p.beta.len()],
        }
    }

    pub fn tensors(&self) -> [&Vec<T>; 4] {
        [&self.weight, &self.bias, &self.gamma, &self.beta]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 4] {
        [
            &mut self.weight,
            &mut self.bias,
            &mut self.gamma,
            &mut self.beta,
        ]
    }
}

/// Network parameters shared by both siamese branches.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T> {
    pub spec: NetSpec,
    pub layers: Vec<LayerParams<T>>,
}

pub type NetGrads<T> = Vec<LayerGrads<T>>;

impl<T: Scalar> NetParams<T> {
    /// Zero kernels, unit BN scale; mostly useful for hand-built networks.
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let layers = (0..spec.num_layers())
            .map(|l| LayerParams::shape_of(spec.input_channels(l), spec.layer_filter_counts[l]))
            .collect();
        Ok(Self { spec, layers })
    }

    /// Uniform fan-in initialization `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    pub fn init<R: Rng>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(spec)?;
        for layer in &mut params.layers {
            let fan_in = (layer.in_channels * KERNEL * KERNEL) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for w in &mut layer.weight {
                *w = T::lit(rng.gen_range(-bound..bound));
            }
        }
        Ok(params)
    }

    pub fn zero_grads(&self) -> NetGrads<T> {
        self.layers.iter().map(LayerGrads::zeros_like).collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.trainable().iter().map(|t| t.len()).sum::<usize>())
            .sum()
    }

    fn activates(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.spec.final_relu
    }

    /// Inference-mode forward pass of one tensor (running BN statistics).
    pub fn forward(&self, input: &Tensor3<T>) -> Result<Tensor3<T>> {
        let rf = self.spec.receptive_field();
        if input.height < rf || input.width < rf {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} smaller than the {rf}x{rf} receptive field",
                input.width, input.height
            )));
        }
        let eps = T::lit(BN_EPS);
        let mut x = input.clone();
        for (l, p) in self.layers.iter().enumerate() {
            x = layers::conv_forward(&x, &p.weight, &p.bias, p.out_channels);
            if self.spec.batch_norm {
                layers::batch_norm_infer(
                    &mut x,
                    &p.gamma,
                    &p.beta,
                    &p.running_mean,
                    &p.running_var,
                    eps,
                );
            }
            if self.activates(l) {
                layers::relu_forward(&mut x);
            }
        }
        Ok(x)
    }

    /// Training-mode forward pass over a batch of tensors; batch-norm
    /// statistics are pooled over the whole batch.
    pub fn forward_train(&self, inputs: &[Tensor3<T>]) -> (Vec<Tensor3<T>>, ForwardCache<T>) {
        let eps = T::lit(BN_EPS);
        let mut cache = ForwardCache {
            layer_inputs: Vec::with_capacity(self.layers.len()),
            bn: Vec::with_capacity(self.layers.len()),
            outputs: Vec::new(),
        };
        let mut x: Vec<Tensor3<T>> = inputs.to_vec();
        for (l, p) in self.layers.iter().enumerate() {
            let mut y: Vec<Tensor3<T>> = x
                .iter()
                .map(|t| layers::conv_forward(t, &p.weight, &p.bias, p.out_channels))
                .collect();
            cache.layer_inputs.push(x);
            let bn = if self.spec.batch_norm {
                Some(layers::batch_norm_train(&mut y, &p.gamma, &p.beta, eps))
            } else {
                None
            };
            cache.bn.push(bn);
            if self.activates(l) {
                y.iter_mut().for_each(layers::relu_forward);
            }
            x = y;
        }
        cache.outputs = x.clone();
        (x, cache)
    }

    /// Backpropagates output gradients; returns parameter gradients and the
    /// gradients w.r.t. the network inputs.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_outputs: Vec<Tensor3<T>>,
    ) -> (NetGrads<T>, Vec<Tensor3<T>>) {
        let mut grads = self.zero_grads();
        let mut g = grad_outputs;
        for l in (0..self.layers.len()).rev() {
            let p = &self.layers[l];
            if self.activates(l) {
                let outs = if l + 1 == self.layers.len() {
                    &cache.outputs
                } else {
                    &cache.layer_inputs[l + 1]
                };
                for (gg, y) in g.iter_mut().zip(outs) {
                    layers::relu_backward(y, gg);
                }
            }
            let lg = &mut grads[l];
            if let Some(bn) = &cache.bn[l] {
                layers::batch_norm_backward(bn, &p.gamma, &mut g, &mut lg.gamma, &mut lg.beta);
            }
            let want_input = true;
            let mut next = Vec::with_capacity(g.len());
            for (gg, inp) in g.iter().zip(&cache.layer_inputs[l]) {
                let gin = layers::conv_backward(
                    inp,
                    &p.weight,
                    gg,
                    &mut lg.weight,
                    &mut lg.bias,
                    want_input,
                );
                next.push(gin.expect("input gradient requested"));
            }
            g = next;
        }
        (grads, g)
    }

    /// Folds the batch statistics of a training pass into the running averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        let m = T::lit(BN_MOMENTUM);
        for (p, bn) in self.layers.iter_mut().zip(&cache.bn) {
            if let Some(bn) = bn {
                let n = bn.count as f64;
                let unbias = T::lit(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
                for c in 0..p.out_channels {
                    p.running_mean[c] = m * p.running_mean[c] + (T::one() - m) * bn.mean[c];
                    p.running_var[c] =
                        m * p.running_var[c] + (T::one() - m) * bn.var[c] * unbias;
                }
            }
        }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// Input of each layer; entry `l + 1` is the post-activation output of layer `l`.
    pub layer_inputs: Vec<Vec<Tensor3<T>>>,
    pub bn: Vec<Option<BatchNormCache<T>>>,
    pub outputs: Vec<Tensor3<T>>,
}

/// Computes the feature vector of every fully covered pixel in one pass.
///
/// For an `H x W` input and `L` layers the result is `(H - 2L) x (W - 2L)`;
/// output pixel `(x, y)` describes the input patch centred at `(x + L, y + L)`.
pub fn extract_features<T: Scalar>(image: &Image<T>, params: &NetParams<T>) -> Result<FeatureMap<T>> {
    let out = params.forward(&Tensor3::from_image(image))?;
    Ok(FeatureMap::from_tensor(&out))
}

/// Features for every input pixel, obtained by mirror-padding the image by
/// the network border before extraction.
pub fn extract_features_padded<T: Scalar>(
    image: &Image<T>,
    params: &NetParams<T>,
) -> Result<FeatureMap<T>> {
    extract_features(&image.pad_reflect(params.spec.border()), params)
}
