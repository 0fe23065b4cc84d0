//! Layer specifications, the event presets and shape inference.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::EventKind;
use crate::error::{Error, Result};

/// Number of output units; index 0 is "event present".
pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    TropicalCyclone,
    AtmosphericRiver,
    WeatherFront,
    Custom,
}

impl From<EventKind> for Preset {
    fn from(kind: EventKind) -> Self {
        match kind {
            EventKind::TropicalCyclone => Preset::TropicalCyclone,
            EventKind::AtmosphericRiver => Preset::AtmosphericRiver,
            EventKind::WeatherFront => Preset::WeatherFront,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filter_height: usize,
        filter_width: usize,
        filters: usize,
    },
    MaxPool {
        height: usize,
        width: usize,
    },
    Relu,
    Flatten,
    Dense {
        units: usize,
    },
    Logistic,
}

impl LayerSpec {
    pub fn is_activation(&self) -> bool {
        matches!(self, LayerSpec::Relu | LayerSpec::Logistic)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub preset: Preset,
    /// `(p, m, n)`: channels, height, width.
    pub input_dims: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Output extent of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dims {
    Map([usize; 3]),
    Flat(usize),
}

impl Dims {
    pub fn len(&self) -> usize {
        match *self {
            Dims::Map([c, h, w]) => c * h * w,
            Dims::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dims::Map([c, h, w]) => write!(f, "{c}x{h}x{w}"),
            Dims::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Two convolution/pool stages, a hidden dense layer and the two-unit
/// logistic output. Each convolution and the hidden dense layer use ReLU.
fn two_stage(
    preset: Preset,
    input_dims: [usize; 3],
    filter: usize,
    first_pool: usize,
    hidden: usize,
) -> NetworkConfig {
    use LayerSpec::*;
    NetworkConfig {
        preset,
        input_dims,
        layers: vec![
            Conv {
                filter_height: filter,
                filter_width: filter,
                filters: 8,
            },
            Relu,
            MaxPool {
                height: first_pool,
                width: first_pool,
            },
            Conv {
                filter_height: filter,
                filter_width: filter,
                filters: 16,
            },
            Relu,
            MaxPool {
                height: 2,
                width: 2,
            },
            Flatten,
            Dense { units: hidden },
            Relu,
            Dense { units: NUM_CLASSES },
            Logistic,
        ],
    }
}

/// Architecture and patch dimensions for an event kind.
pub fn preset_config(event: EventKind) -> NetworkConfig {
    let dims = event.patch_dims();
    match event {
        EventKind::TropicalCyclone => two_stage(Preset::TropicalCyclone, dims, 5, 2, 50),
        EventKind::WeatherFront => two_stage(Preset::WeatherFront, dims, 5, 2, 50),
        EventKind::AtmosphericRiver => two_stage(Preset::AtmosphericRiver, dims, 12, 3, 200),
    }
}

/// Output dims of every layer in order, under valid stride-1 convolution and
/// floor-division pooling. Also checks the two-unit logistic head.
pub fn infer_shapes(config: &NetworkConfig) -> Result<Vec<Dims>> {
    let err = |layer: usize, message: String| Error::Config { layer, message };
    let [p, m, n] = config.input_dims;
    if p == 0 || m == 0 || n == 0 {
        return Err(err(
            0,
            format!("input dims {:?} must be positive", config.input_dims),
        ));
    }
    let mut cur = Dims::Map(config.input_dims);
    let mut out = Vec::with_capacity(config.layers.len());
    for (idx, spec) in config.layers.iter().enumerate() {
        cur = match (*spec, cur) {
            (
                LayerSpec::Conv {
                    filter_height,
                    filter_width,
                    filters,
                },
                Dims::Map([c, h, w]),
            ) => {
                if filter_height == 0 || filter_width == 0 || filters == 0 {
                    return Err(err(
                        idx,
                        "convolution extents and filter count must be positive".into(),
                    ));
                }
                if filter_height > h || filter_width > w {
                    return Err(err(
                        idx,
                        format!("{filter_height}x{filter_width} filter leaves no output on a {c}x{h}x{w} input"),
                    ));
                }
                Dims::Map([filters, h - filter_height + 1, w - filter_width + 1])
            }
            (LayerSpec::MaxPool { height, width }, Dims::Map([c, h, w])) => {
                if height == 0 || width == 0 {
                    return Err(err(idx, "pooling window must be positive".into()));
                }
                if h / height == 0 || w / width == 0 {
                    return Err(err(
                        idx,
                        format!("{height}x{width} pooling leaves no output on {c}x{h}x{w}"),
                    ));
                }
                Dims::Map([c, h / height, w / width])
            }
            (LayerSpec::Flatten, Dims::Map([c, h, w])) => Dims::Flat(
                c.checked_mul(h)
                    .and_then(|v| v.checked_mul(w))
                    .ok_or_else(|| err(idx, format!("flattening {c}x{h}x{w} overflows")))?,
            ),
            (LayerSpec::Dense { units }, Dims::Flat(_)) => {
                if units == 0 {
                    return Err(err(idx, "dense layer needs at least one unit".into()));
                }
                Dims::Flat(units)
            }
            (LayerSpec::Relu | LayerSpec::Logistic, d) => d,
            (spec, d) => return Err(err(idx, format!("{spec:?} cannot follow an output of {d}"))),
        };
        out.push(cur);
    }
    let tail = &config.layers[config.layers.len().saturating_sub(2)..];
    if tail != [LayerSpec::Dense { units: NUM_CLASSES }, LayerSpec::Logistic] {
        return Err(err(
            config.layers.len().saturating_sub(1),
            format!(
                "network must end with a {NUM_CLASSES}-unit dense layer and a logistic activation"
            ),
        ));
    }
    if config.layers[..config.layers.len() - 1].contains(&LayerSpec::Logistic) {
        return Err(err(
            0,
            "logistic is only supported as the output activation".into(),
        ));
    }
    Ok(out)
}

/// The shape chain of the structural layers (activations omitted),
/// e.g. `8x28x28 -> 8x14x14 -> ... -> 400 -> 50 -> 2`.
pub fn shape_chain(config: &NetworkConfig) -> Result<Vec<Dims>> {
    let dims = infer_shapes(config)?;
    Ok(config
        .layers
        .iter()
        .zip(dims)
        .filter(|(spec, _)| !spec.is_activation())
        .map(|(_, d)| d)
        .collect())
}

pub fn format_chain(chain: &[Dims]) -> String {
    chain
        .iter()
        .map(Dims::to_string)
        .collect::<Vec<_>>()
        .join(" -> ")
}
