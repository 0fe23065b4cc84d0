//! Central finite-difference check of the backprop gradients.
//!
//! Perturbing one parameter only changes one feature map (convolution) or
//! one unit (dense) of its layer. Instead of re-running the whole network
//! twice per parameter, the change is carried forward from that point as a
//! difference from the unperturbed activations, and the two perturbed
//! losses are compared through their logits. The result is the same
//! `(L(w + eps) - L(w - eps)) / (2 eps)`, but it is cheap enough to cover
//! every parameter of the large presets and it does not lose digits to
//! subtracting two nearly equal loss values.
//!
//! A step that moves some ReLU input across zero or changes a pooling
//! window's winner straddles a kink, where the finite difference is not an
//! estimate of the derivative at all. Such parameters are counted but left
//! out of the error.

use crate::data::PatchRecord;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::layers::conv::correlate;
use crate::layers::{sigmoid, Layer};
use crate::numerics::dot4;

use super::config::NUM_CLASSES;
use super::model::{Network, Trace};

/// Where the largest relative error occurred.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorstParam {
    /// Index into the network's layer list.
    pub layer: usize,
    pub is_bias: bool,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - f| / max(|a|, |f|, 1e-8)` over every parameter.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose `+-eps` step crossed a kink and were not compared.
    pub kinked: usize,
    pub worst: Option<WorstParam>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Change of one activation relative to the unperturbed pass.
enum Delta {
    /// Only feature map `channel` changed.
    Plane { channel: usize, delta: Vec<f64> },
    /// Flat elements `start..start + delta.len()` changed.
    Span { start: usize, delta: Vec<f64> },
    /// Everything may have changed.
    Full(Vec<f64>),
}

fn dims3(shape: &[usize]) -> [usize; 3] {
    [shape[0], shape[1], shape[2]]
}

#[inline]
fn relu_delta(x: f64, d: f64, kinked: &mut bool) -> f64 {
    let y = x + d;
    match (x > 0.0, y > 0.0) {
        (true, true) => d,
        (false, false) => 0.0,
        (true, false) => {
            *kinked = true;
            -x
        }
        (false, true) => {
            *kinked = true;
            y
        }
    }
}

/// Pools one plane of `base + delta`, returning the change of each window max.
#[allow(clippy::too_many_arguments)]
fn pool_plane_delta(
    base: &[f64],
    delta: &[f64],
    w: usize,
    oh: usize,
    ow: usize,
    s: usize,
    t: usize,
    kinked: &mut bool,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let first = oy * s * w + ox * t;
            let (mut old_i, mut new_i) = (first, first);
            let (mut old_v, mut new_v) = (base[first], base[first] + delta[first]);
            for dy in 0..s {
                for dx in 0..t {
                    let i = (oy * s + dy) * w + ox * t + dx;
                    if base[i] > old_v {
                        old_v = base[i];
                        old_i = i;
                    }
                    let v = base[i] + delta[i];
                    if v > new_v {
                        new_v = v;
                        new_i = i;
                    }
                }
            }
            if old_i == new_i {
                out.push(delta[old_i]);
            } else {
                *kinked = true;
                out.push(new_v - old_v);
            }
        }
    }
    out
}

/// Carries `delta` through layer `idx`, whose unperturbed input and
/// output are `trace.acts[idx]` and `trace.acts[idx + 1]`.
fn propagate(layer: &Layer, idx: usize, trace: &Trace, delta: Delta, kinked: &mut bool) -> Delta {
    let input = &trace.acts[idx];
    match layer {
        Layer::Relu => {
            let x = input.data();
            match delta {
                Delta::Plane { channel, delta } => {
                    let off = channel * delta.len();
                    let d = delta
                        .iter()
                        .enumerate()
                        .map(|(i, &d)| relu_delta(x[off + i], d, kinked))
                        .collect();
                    Delta::Plane { channel, delta: d }
                }
                Delta::Span { start, delta } => {
                    let d = delta
                        .iter()
                        .enumerate()
                        .map(|(i, &d)| relu_delta(x[start + i], d, kinked))
                        .collect();
                    Delta::Span { start, delta: d }
                }
                Delta::Full(delta) => Delta::Full(
                    x.iter()
                        .zip(&delta)
                        .map(|(&x, &d)| relu_delta(x, d, kinked))
                        .collect(),
                ),
            }
        }
        Layer::MaxPool(spec) => {
            let [c, h, w] = dims3(input.shape());
            let (s, t) = (spec.window_height, spec.window_width);
            let (oh, ow) = (h / s, w / t);
            let mut plane = |ch: usize, d: &[f64]| {
                pool_plane_delta(
                    &input.data()[ch * h * w..(ch + 1) * h * w],
                    d,
                    w,
                    oh,
                    ow,
                    s,
                    t,
                    kinked,
                )
            };
            match delta {
                Delta::Plane { channel, delta } => Delta::Plane {
                    channel,
                    delta: plane(channel, &delta),
                },
                Delta::Full(delta) => {
                    let mut out = Vec::with_capacity(c * oh * ow);
                    for ch in 0..c {
                        out.extend(plane(ch, &delta[ch * h * w..(ch + 1) * h * w]));
                    }
                    Delta::Full(out)
                }
                Delta::Span { .. } => unreachable!("pooling follows a feature map"),
            }
        }
        Layer::Flatten => match delta {
            Delta::Plane { channel, delta } => Delta::Span {
                start: channel * delta.len(),
                delta,
            },
            other => other,
        },
        Layer::Conv(conv) => {
            let [p, h, w] = dims3(input.shape());
            let s = conv.spec();
            let (fi, fj) = (s.filter_height, s.filter_width);
            let plane = (h - fi + 1) * (w - fj + 1);
            let mut out = vec![0.0; s.num_filters * plane];
            for (f, map) in out.chunks_exact_mut(plane).enumerate() {
                match &delta {
                    Delta::Plane { channel, delta } => {
                        let taps = &conv.filter(f)[channel * fi * fj..(channel + 1) * fi * fj];
                        correlate(delta, [1, h, w], taps, 0.0, (fi, fj), map);
                    }
                    Delta::Full(delta) => {
                        correlate(delta, [p, h, w], conv.filter(f), 0.0, (fi, fj), map)
                    }
                    Delta::Span { .. } => unreachable!("convolution follows a feature map"),
                }
            }
            Delta::Full(out)
        }
        Layer::Dense(dense) => {
            let out = (0..dense.units())
                .map(|u| match &delta {
                    Delta::Span { start, delta } => {
                        dot4(&dense.row(u)[*start..start + delta.len()], delta)
                    }
                    Delta::Full(delta) => dot4(dense.row(u), delta),
                    Delta::Plane { .. } => unreachable!("dense layers follow a flat vector"),
                })
                .collect();
            Delta::Full(out)
        }
        Layer::Logistic => unreachable!("propagation stops at the logits"),
    }
}

/// Change in the logits when layer `idx`'s output changes by `delta`.
fn logit_delta(
    net: &Network,
    trace: &Trace,
    idx: usize,
    mut delta: Delta,
    kinked: &mut bool,
) -> Vec<f64> {
    let last = net.layers().len() - 1;
    for j in idx + 1..last {
        delta = propagate(&net.layers()[j], j, trace, delta, kinked);
    }
    let mut out = vec![0.0; NUM_CLASSES];
    match delta {
        Delta::Full(d) => out.copy_from_slice(&d),
        Delta::Span { start, delta } => out[start..start + delta.len()].copy_from_slice(&delta),
        Delta::Plane { .. } => unreachable!("the head is dense"),
    }
    out
}

/// `softplus(a) - softplus(b)` for `a = b + d`, accurate when `d` is small.
fn softplus_diff(b: f64, d: f64) -> f64 {
    (sigmoid(b) * d.exp_m1()).ln_1p()
}

/// `L(z + plus) - L(z + minus)` for the mean logistic cross-entropy,
/// written per unit as `softplus(z) - t z`.
fn loss_difference(logits: &[f64], target: usize, plus: &[f64], minus: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..logits.len() {
        let t = if k == target { 1.0 } else { 0.0 };
        let d = plus[k] - minus[k];
        total += softplus_diff(logits[k] + minus[k], d) - t * d;
    }
    total / logits.len() as f64
}

/// The perturbation a parameter step of `step` causes in its own layer.
fn own_delta(
    layer: &Layer,
    input: &[f64],
    in_shape: &[usize],
    is_bias: bool,
    index: usize,
    step: f64,
) -> Delta {
    match layer {
        Layer::Conv(conv) => {
            let s = conv.spec();
            let [_, h, w] = dims3(in_shape);
            let (fi, fj) = (s.filter_height, s.filter_width);
            let (oh, ow) = (h - fi + 1, w - fj + 1);
            if is_bias {
                return Delta::Plane {
                    channel: index,
                    delta: vec![step; oh * ow],
                };
            }
            let flen = s.filter_len();
            let (f, rest) = (index / flen, index % flen);
            let (c, di, dj) = (rest / (fi * fj), rest % (fi * fj) / fj, rest % fj);
            let mut d = Vec::with_capacity(oh * ow);
            for y in 0..oh {
                let row = &input[(c * h + y + di) * w + dj..];
                d.extend(row[..ow].iter().map(|&x| step * x));
            }
            Delta::Plane {
                channel: f,
                delta: d,
            }
        }
        Layer::Dense(dense) => {
            if is_bias {
                Delta::Span {
                    start: index,
                    delta: vec![step],
                }
            } else {
                let (u, j) = (index / dense.inputs(), index % dense.inputs());
                Delta::Span {
                    start: u,
                    delta: vec![step * input[j]],
                }
            }
        }
        _ => unreachable!("only learnable layers have parameters"),
    }
}

/// Central difference for one parameter, and whether either step crossed a kink.
fn numeric_gradient(
    net: &Network,
    trace: &Trace,
    target: usize,
    idx: usize,
    is_bias: bool,
    index: usize,
    eps: f64,
) -> (f64, bool) {
    let layer = &net.layers()[idx];
    let input = &trace.acts[idx];
    let logits = trace.acts[net.layers().len() - 1].data();
    let mut kinked = false;
    let plus = logit_delta(
        net,
        trace,
        idx,
        own_delta(layer, input.data(), input.shape(), is_bias, index, eps),
        &mut kinked,
    );
    let minus = logit_delta(
        net,
        trace,
        idx,
        own_delta(layer, input.data(), input.shape(), is_bias, index, -eps),
        &mut kinked,
    );
    (
        loss_difference(logits, target, &plus, &minus) / (2.0 * eps),
        kinked,
    )
}

/// Compares the analytic gradient of `sample`'s loss with central finite
/// differences for every parameter. `eps` must lie in `(0, 1e-3]`.
pub fn gradient_check(net: &Network, sample: &PatchRecord, eps: f64) -> Result<GradCheckReport> {
    gradient_check_with(net, sample, eps, Execution::default())
}

pub fn gradient_check_with(
    net: &Network,
    sample: &PatchRecord,
    eps: f64,
    exec: Execution,
) -> Result<GradCheckReport> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::validation(format!(
            "finite-difference step {eps} outside (0, 1e-3]"
        )));
    }
    let target = sample.label.class();
    let (_, grads) = net.loss_and_gradient(&sample.patch, target)?;
    let trace = net.trace(&sample.patch)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        kinked: 0,
        worst: None,
    };
    for (idx, g) in grads.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        for (is_bias, analytic) in [(false, &g.weights), (true, &g.bias)] {
            let results = exec.map_range(analytic.len(), |i| {
                let (numeric, kinked) = numeric_gradient(net, &trace, target, idx, is_bias, i, eps);
                (relative_error(analytic[i], numeric), numeric, kinked)
            });
            for (i, (err, numeric, kinked)) in results.into_iter().enumerate() {
                if kinked {
                    report.kinked += 1;
                    continue;
                }
                report.checked += 1;
                if report.worst.is_none() || err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some(WorstParam {
                        layer: idx,
                        is_bias,
                        index: i,
                        analytic: analytic[i],
                        numeric,
                    });
                }
            }
        }
    }
    Ok(report)
}
