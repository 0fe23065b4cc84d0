//! Instantiated networks: parameters, forward pass and per-sample backprop.

use crate::data::ChannelStats;
use crate::error::{Error, Result};
use crate::layers::{
    cross_entropy_loss, one_hot, Conv2d, ConvSpec, Dense, FcSpec, Layer, ParamGrads, PoolSpec,
};
use crate::numerics::{Rng, Tensor};

use super::config::{infer_shapes, Dims, LayerSpec, NetworkConfig, NUM_CLASSES};

/// Layer activations from one forward pass, `acts[0]` being the input.
#[derive(Clone, Debug)]
pub struct Trace {
    pub acts: Vec<Tensor>,
    pub argmax: Vec<Option<Vec<usize>>>,
}

impl Trace {
    pub fn probs(&self) -> &Tensor {
        self.acts.last().expect("trace holds the input")
    }
}

/// Per-layer gradient accumulators; `None` for layers without parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrads>>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.add_assign(b);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.scale(factor);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
    input_stats: Option<Vec<ChannelStats>>,
}

/// Index of the predicted class: the larger output, ties going to class 0.
pub fn argmax_class(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

impl Network {
    /// Builds the network with fan-scaled weights and zero biases.
    pub fn build(config: NetworkConfig, rng: &mut Rng) -> Result<Network> {
        let dims = infer_shapes(&config)?;
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut prev = Dims::Map(config.input_dims);
        for (spec, out) in config.layers.iter().zip(&dims) {
            layers.push(match (*spec, prev) {
                (
                    LayerSpec::Conv {
                        filter_height,
                        filter_width,
                        filters,
                    },
                    Dims::Map([c, _, _]),
                ) => Layer::Conv(Conv2d::new(
                    ConvSpec {
                        filter_height,
                        filter_width,
                        num_filters: filters,
                        in_channels: c,
                    },
                    rng,
                )?),
                (LayerSpec::Dense { units }, Dims::Flat(n)) => {
                    Layer::Dense(Dense::new(n, FcSpec { num_units: units }, rng)?)
                }
                (spec, _) => structural_layer(spec),
            });
            prev = *out;
        }
        Ok(Network {
            config,
            layers,
            input_stats: None,
        })
    }

    /// Assembles a network from explicit layers, checking them against the config.
    pub fn from_parts(config: NetworkConfig, layers: Vec<Layer>) -> Result<Network> {
        let dims = infer_shapes(&config)?;
        if layers.len() != config.layers.len() {
            return Err(Error::validation("layer count does not match the config"));
        }
        let mut prev = Dims::Map(config.input_dims);
        for (idx, ((spec, layer), out)) in config.layers.iter().zip(&layers).zip(&dims).enumerate()
        {
            let ok = match (spec, layer, prev) {
                (
                    LayerSpec::Conv {
                        filter_height,
                        filter_width,
                        filters,
                    },
                    Layer::Conv(c),
                    Dims::Map([p, _, _]),
                ) => {
                    *c.spec()
                        == ConvSpec {
                            filter_height: *filter_height,
                            filter_width: *filter_width,
                            num_filters: *filters,
                            in_channels: p,
                        }
                }
                (LayerSpec::Dense { units }, Layer::Dense(d), Dims::Flat(n)) => {
                    d.units() == *units && d.inputs() == n
                }
                (spec, layer, _) => structural_layer(*spec) == *layer,
            };
            if !ok {
                return Err(Error::Config {
                    layer: idx,
                    message: "parameters do not match the layer spec".into(),
                });
            }
            prev = *out;
        }
        Ok(Network {
            config,
            layers,
            input_stats: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Normalization the network expects its inputs to have been through.
    pub fn input_stats(&self) -> Option<&[ChannelStats]> {
        self.input_stats.as_deref()
    }

    pub fn set_input_stats(&mut self, stats: Option<Vec<ChannelStats>>) {
        self.input_stats = stats;
    }

    pub fn learnable_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.is_learnable()).count()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::param_counts)
            .map(|(w, b)| w + b)
            .sum()
    }

    /// Mutable `(weights, biases)` of each learnable layer in order.
    pub fn params_mut(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        self.layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| l.param_counts().map(|(w, b)| ParamGrads::zeros(w, b)))
                .collect(),
        }
    }

    fn check_input(&self, patch: &Tensor) -> Result<()> {
        if patch.shape() != self.config.input_dims {
            return Err(Error::shape(format!(
                "network expects input {:?}, got {:?}",
                self.config.input_dims,
                patch.shape()
            )));
        }
        Ok(())
    }

    pub fn trace(&self, patch: &Tensor) -> Result<Trace> {
        self.check_input(patch)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut argmax = Vec::with_capacity(self.layers.len());
        acts.push(patch.clone());
        for layer in &self.layers {
            let (out, am) = layer.forward(acts.last().expect("non-empty"))?;
            acts.push(out);
            argmax.push(am);
        }
        Ok(Trace { acts, argmax })
    }

    /// Class probabilities for one patch.
    pub fn forward(&self, patch: &Tensor) -> Result<Tensor> {
        self.check_input(patch)?;
        let mut cur = patch.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?.0;
        }
        Ok(cur)
    }

    pub fn predict(&self, patch: &Tensor) -> Result<usize> {
        Ok(argmax_class(self.forward(patch)?.data()))
    }

    /// Loss for one patch whose true class is `class`, accumulating the
    /// parameter gradients into `grads`. Returns `(loss, predicted class)`.
    pub fn accumulate_gradient(
        &self,
        patch: &Tensor,
        class: usize,
        grads: &mut Gradients,
    ) -> Result<(f64, usize)> {
        let trace = self.trace(patch)?;
        let target = one_hot(class, NUM_CLASSES);
        let (loss, mut grad) = cross_entropy_loss(trace.probs(), &target)?;
        let first_learnable = self
            .layers
            .iter()
            .position(Layer::is_learnable)
            .unwrap_or(0);
        // The loss gradient is already taken with respect to the logistic
        // pre-activation, so the output layer is skipped.
        for idx in (0..self.layers.len() - 1).rev() {
            if idx < first_learnable {
                break;
            }
            let gi = self.layers[idx].backward(
                &trace.acts[idx],
                &trace.acts[idx + 1],
                trace.argmax[idx].as_deref(),
                &grad,
                grads.layers[idx].as_mut(),
                idx > first_learnable,
            )?;
            match gi {
                Some(g) => grad = g,
                None => break,
            }
        }
        Ok((loss, argmax_class(trace.probs().data())))
    }

    /// Loss and full gradient for a single sample.
    pub fn loss_and_gradient(&self, patch: &Tensor, class: usize) -> Result<(f64, Gradients)> {
        let mut grads = self.zero_gradients();
        let (loss, _) = self.accumulate_gradient(patch, class, &mut grads)?;
        Ok((loss, grads))
    }

    pub fn loss(&self, patch: &Tensor, class: usize) -> Result<f64> {
        let probs = self.forward(patch)?;
        Ok(cross_entropy_loss(&probs, &one_hot(class, NUM_CLASSES))?.0)
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

fn structural_layer(spec: LayerSpec) -> Layer {
    match spec {
        LayerSpec::MaxPool { height, width } => Layer::MaxPool(PoolSpec {
            window_height: height,
            window_width: width,
        }),
        LayerSpec::Relu => Layer::Relu,
        LayerSpec::Flatten => Layer::Flatten,
        LayerSpec::Logistic => Layer::Logistic,
        LayerSpec::Conv { .. } | LayerSpec::Dense { .. } => unreachable!("checked by infer_shapes"),
    }
}
