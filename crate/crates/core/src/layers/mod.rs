//! Layer types with forward and hand-derived backward passes.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod pool;

pub use activation::{logistic, logistic_backward, relu, relu_backward, sigmoid};
pub use conv::{Conv2d, ConvSpec};
pub use dense::{Dense, FcSpec};
pub use loss::{cross_entropy_loss, one_hot};
pub use pool::{maxpool_backward, maxpool_forward, PoolSpec, Pooled};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Gradient accumulator for one learnable layer, flat in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(weights: usize, bias: usize) -> Self {
        ParamGrads {
            weights: vec![0.0; weights],
            bias: vec![0.0; bias],
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            *v *= factor;
        }
    }
}

/// One stage of a network.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    MaxPool(PoolSpec),
    Relu,
    Flatten,
    Dense(Dense),
    Logistic,
}

impl Layer {
    pub fn is_learnable(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::Dense(_))
    }

    /// `(weights, biases)` for learnable layers.
    pub fn param_counts(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Conv(c) => Some((c.weights().len(), c.bias().len())),
            Layer::Dense(d) => Some((d.weights().len(), d.bias().len())),
            _ => None,
        }
    }

    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Conv(c) => Some((c.weights().data(), c.bias().data())),
            Layer::Dense(d) => Some((d.weights().data(), d.bias().data())),
            _ => None,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut [f64], &mut [f64])> {
        match self {
            Layer::Conv(c) => Some(c.params_mut()),
            Layer::Dense(d) => Some(d.params_mut()),
            _ => None,
        }
    }

    /// Forward pass; max pooling also returns its winning indices.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        Ok(match self {
            Layer::Conv(c) => (c.forward(input)?, None),
            Layer::MaxPool(spec) => {
                let pooled = maxpool_forward(input, spec)?;
                (pooled.output, Some(pooled.argmax))
            }
            Layer::Relu => (relu(input), None),
            Layer::Flatten => (input.reshape(&[input.len()])?, None),
            Layer::Dense(d) => (d.forward(input)?, None),
            Layer::Logistic => (logistic(input), None),
        })
    }

    /// Backward pass given the cached forward input/output. Parameter
    /// gradients are accumulated into `grads` for learnable layers.
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        argmax: Option<&[usize]>,
        grad_out: &Tensor,
        grads: Option<&mut ParamGrads>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let missing =
            || Error::State("learnable layer backward needs a gradient accumulator".into());
        match self {
            Layer::Conv(c) => {
                c.backward(input, grad_out, grads.ok_or_else(missing)?, need_input_grad)
            }
            Layer::Dense(d) => {
                d.backward(input, grad_out, grads.ok_or_else(missing)?, need_input_grad)
            }
            _ if !need_input_grad => Ok(None),
            Layer::MaxPool(_) => {
                let argmax = argmax
                    .ok_or_else(|| Error::State("max pooling has no cached winners".into()))?;
                let dims = match *input.shape() {
                    [c, h, w] => [c, h, w],
                    _ => return Err(Error::shape("pooling input must be (c, h, w)")),
                };
                maxpool_backward(grad_out, argmax, dims).map(Some)
            }
            Layer::Relu => relu_backward(input, grad_out).map(Some),
            Layer::Flatten => grad_out.reshape(input.shape()).map(Some),
            Layer::Logistic => logistic_backward(output, grad_out).map(Some),
        }
    }
}

#[derive(Clone, Debug)]
struct Cache {
    input: Tensor,
    output: Tensor,
    argmax: Option<Vec<usize>>,
}

/// A layer together with the forward cache its backward pass consumes.
///
/// The cache lives from one `forward` to the matching `backward`.
#[derive(Clone, Debug)]
pub struct LayerState {
    layer: Layer,
    cache: Option<Cache>,
}

impl LayerState {
    pub fn new(layer: Layer) -> Self {
        LayerState { layer, cache: None }
    }

    pub fn layer(&self) -> &Layer {
        &self.layer
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (output, argmax) = self.layer.forward(input)?;
        self.cache = Some(Cache {
            input: input.clone(),
            output: output.clone(),
            argmax,
        });
        Ok(output)
    }

    /// Returns the input gradient and, for learnable layers, the parameter
    /// gradients. Fails with a state error when no forward is cached.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<(Tensor, Option<ParamGrads>)> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        if grad_out.shape() != cache.output.shape() {
            self.cache = Some(cache);
            return Err(Error::shape(
                "upstream gradient does not match the cached output",
            ));
        }
        let mut grads = self
            .layer
            .param_counts()
            .map(|(w, b)| ParamGrads::zeros(w, b));
        let gi = self
            .layer
            .backward(
                &cache.input,
                &cache.output,
                cache.argmax.as_deref(),
                grad_out,
                grads.as_mut(),
                true,
            )?
            .expect("input gradient requested");
        Ok((gi, grads))
    }
}
