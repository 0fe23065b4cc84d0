//! Valid (unpadded) stride-1 convolution.

use crate::error::{Error, Result};
use crate::numerics::{correlate_row, correlate_taps, init_uniform_scaled, Rng, Tensor};

use super::ParamGrads;

/// `num_filters` filters of size `(in_channels, filter_height, filter_width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub filter_height: usize,
    pub filter_width: usize,
    pub num_filters: usize,
    pub in_channels: usize,
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.filter_height == 0 || self.filter_width == 0 {
            return Err(Error::validation("filter extents must be at least 1"));
        }
        if self.num_filters == 0 || self.in_channels == 0 {
            return Err(Error::validation(
                "filter and channel counts must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn filter_len(&self) -> usize {
        self.in_channels * self.filter_height * self.filter_width
    }

    /// Output `(k, h - i + 1, w - j + 1)` for an input of `(p, h, w)`.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "convolution expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        if self.filter_height > h || self.filter_width > w {
            return Err(Error::shape(format!(
                "{}x{} filter does not fit a {h}x{w} input",
                self.filter_height, self.filter_width
            )));
        }
        Ok([
            self.num_filters,
            h - self.filter_height + 1,
            w - self.filter_width + 1,
        ])
    }
}

/// Convolution layer parameters. Weights are laid out `(k, p, i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    spec: ConvSpec,
    weights: Tensor,
    bias: Tensor,
}

impl Conv2d {
    /// Fan-scaled uniform weights, zero biases.
    pub fn new(spec: ConvSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let area = spec.filter_height * spec.filter_width;
        let weights = init_uniform_scaled(
            &[
                spec.num_filters,
                spec.in_channels,
                spec.filter_height,
                spec.filter_width,
            ],
            spec.in_channels * area,
            spec.num_filters * area,
            rng,
        )?;
        let bias = Tensor::zeros(&[spec.num_filters])?;
        Ok(Conv2d {
            spec,
            weights,
            bias,
        })
    }

    pub fn from_params(spec: ConvSpec, weights: Tensor, bias: Tensor) -> Result<Self> {
        spec.validate()?;
        let wshape = [
            spec.num_filters,
            spec.in_channels,
            spec.filter_height,
            spec.filter_width,
        ];
        if weights.shape() != wshape || bias.shape() != [spec.num_filters] {
            return Err(Error::shape(format!(
                "convolution parameters {:?}/{:?} do not match spec {:?}",
                weights.shape(),
                bias.shape(),
                spec
            )));
        }
        Ok(Conv2d {
            spec,
            weights,
            bias,
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.weights.data_mut(), self.bias.data_mut())
    }

    pub fn filter(&self, f: usize) -> &[f64] {
        let len = self.spec.filter_len();
        &self.weights.data()[f * len..(f + 1) * len]
    }

    fn input_dims(&self, input: &Tensor) -> Result<[usize; 3]> {
        match *input.shape() {
            [c, h, w] => Ok([c, h, w]),
            ref other => Err(Error::shape(format!(
                "convolution input must be (p, m, n), got {other:?}"
            ))),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let dims = self.input_dims(input)?;
        let out_dims = self.spec.output_dims(dims)?;
        let plane = out_dims[1] * out_dims[2];
        let mut out = vec![0.0; self.spec.num_filters * plane];
        for (f, map) in out.chunks_exact_mut(plane).enumerate() {
            correlate(
                input.data(),
                dims,
                self.filter(f),
                self.bias.data()[f],
                (self.spec.filter_height, self.spec.filter_width),
                map,
            );
        }
        Tensor::from_vec(&out_dims, out)
    }

    /// Accumulates parameter gradients into `grads` and, when requested,
    /// returns the gradient with respect to the input.
    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        grads: &mut ParamGrads,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let dims = self.input_dims(input)?;
        let out_dims = self.spec.output_dims(dims)?;
        if grad_out.shape() != out_dims {
            return Err(Error::shape(format!(
                "convolution grad {:?} does not match output {:?}",
                grad_out.shape(),
                out_dims
            )));
        }
        let [p, h, w] = dims;
        let [k, oh, ow] = out_dims;
        let (fi, fj) = (self.spec.filter_height, self.spec.filter_width);
        let flen = self.spec.filter_len();
        let x = input.data();
        let g = grad_out.data();

        for f in 0..k {
            let gmap = &g[f * oh * ow..(f + 1) * oh * ow];
            grads.bias[f] += gmap.iter().sum::<f64>();
            let gw = &mut grads.weights[f * flen..(f + 1) * flen];
            for c in 0..p {
                for di in 0..fi {
                    let gw_row = &mut gw[(c * fi + di) * fj..(c * fi + di + 1) * fj];
                    for y in 0..oh {
                        let grow = &gmap[y * ow..(y + 1) * ow];
                        let xrow = &x[(c * h + y + di) * w..(c * h + y + di + 1) * w];
                        correlate_taps(grow, xrow, gw_row);
                    }
                }
            }
        }

        if !need_input_grad {
            return Ok(None);
        }
        // Full correlation of each upstream row with the reversed filter
        // row, read from a zero-padded copy of the upstream row.
        let mut gi = vec![0.0; p * h * w];
        let mut padded = vec![0.0; ow + 2 * (fj - 1)];
        let mut reversed = vec![0.0; fj];
        for f in 0..k {
            let filt = self.filter(f);
            for y in 0..oh {
                padded[fj - 1..fj - 1 + ow]
                    .copy_from_slice(&g[(f * oh + y) * ow..(f * oh + y + 1) * ow]);
                for c in 0..p {
                    for di in 0..fi {
                        let start = (c * h + y + di) * w;
                        let row = &filt[(c * fi + di) * fj..(c * fi + di + 1) * fj];
                        for (r, v) in reversed.iter_mut().zip(row.iter().rev()) {
                            *r = *v;
                        }
                        correlate_row(&reversed, &padded, &mut gi[start..start + w]);
                    }
                }
            }
        }
        Ok(Some(Tensor::from_vec(&dims, gi)?))
    }
}

/// One output feature map: `out[y, x] = bias + sum_{c,di,dj} filter[c,di,dj] *
/// input[c, y+di, x+dj]`, accumulated over `c`, then `di`, then `dj` in groups of four.
pub(crate) fn correlate(
    input: &[f64],
    [p, h, w]: [usize; 3],
    filter: &[f64],
    bias: f64,
    (fi, fj): (usize, usize),
    out: &mut [f64],
) {
    let (oh, ow) = (h - fi + 1, w - fj + 1);
    debug_assert_eq!(out.len(), oh * ow);
    for y in 0..oh {
        let orow = &mut out[y * ow..(y + 1) * ow];
        orow.fill(bias);
        for c in 0..p {
            for di in 0..fi {
                let start = (c * h + y + di) * w;
                let irow = &input[start..start + w];
                correlate_row(
                    &filter[(c * fi + di) * fj..(c * fi + di + 1) * fj],
                    irow,
                    orow,
                );
            }
        }
    }
}
