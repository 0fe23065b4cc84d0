//! The `CNNM` model container.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "CNNM" | version u32 | preset u8 | p u32 | m u32 | n u32
//! layer count u32, then per layer a tag u8 and its u32 extents
//! stats flag u8, then p x (mean f64, std f64) when set
//! per learnable layer: weight count u64, weights f64, bias count u64, biases f64
//! ```

use std::fs;
use std::path::Path;

use crate::binio::{put_f64, put_f64s, put_u32, put_u64, put_u8, to_u32, Reader};
use crate::data::ChannelStats;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvSpec, Dense, Layer, PoolSpec};
use crate::numerics::Tensor;

use super::config::{infer_shapes, Dims, LayerSpec, NetworkConfig, Preset};
use super::model::Network;

pub const CNNM_MAGIC: &[u8; 4] = b"CNNM";
pub const CNNM_VERSION: u32 = 1;

fn preset_code(p: Preset) -> u8 {
    match p {
        Preset::TropicalCyclone => 0,
        Preset::AtmosphericRiver => 1,
        Preset::WeatherFront => 2,
        Preset::Custom => 3,
    }
}

fn preset_from_code(code: u8) -> Option<Preset> {
    [
        Preset::TropicalCyclone,
        Preset::AtmosphericRiver,
        Preset::WeatherFront,
        Preset::Custom,
    ]
    .into_iter()
    .find(|&p| preset_code(p) == code)
}

pub fn save_model(net: &Network) -> Result<Vec<u8>> {
    let cfg = net.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(CNNM_MAGIC);
    put_u32(&mut buf, CNNM_VERSION);
    put_u8(&mut buf, preset_code(cfg.preset));
    for d in cfg.input_dims {
        put_u32(&mut buf, to_u32(d, "input extent")?);
    }
    put_u32(&mut buf, to_u32(cfg.layers.len(), "layer count")?);
    for spec in &cfg.layers {
        match *spec {
            LayerSpec::Conv {
                filter_height,
                filter_width,
                filters,
            } => {
                put_u8(&mut buf, 0);
                for v in [filter_height, filter_width, filters] {
                    put_u32(&mut buf, to_u32(v, "convolution extent")?);
                }
            }
            LayerSpec::MaxPool { height, width } => {
                put_u8(&mut buf, 1);
                put_u32(&mut buf, to_u32(height, "pool extent")?);
                put_u32(&mut buf, to_u32(width, "pool extent")?);
            }
            LayerSpec::Relu => put_u8(&mut buf, 2),
            LayerSpec::Flatten => put_u8(&mut buf, 3),
            LayerSpec::Dense { units } => {
                put_u8(&mut buf, 4);
                put_u32(&mut buf, to_u32(units, "unit count")?);
            }
            LayerSpec::Logistic => put_u8(&mut buf, 5),
        }
    }
    match net.input_stats() {
        None => put_u8(&mut buf, 0),
        Some(stats) => {
            if stats.len() != cfg.input_dims[0] {
                return Err(Error::validation(
                    "input stats do not match the channel count",
                ));
            }
            put_u8(&mut buf, 1);
            for s in stats {
                put_f64(&mut buf, s.mean);
                put_f64(&mut buf, s.std);
            }
        }
    }
    for layer in net.layers() {
        if let Some((w, b)) = layer.params() {
            put_u64(&mut buf, w.len() as u64);
            put_f64s(&mut buf, w);
            put_u64(&mut buf, b.len() as u64);
            put_f64s(&mut buf, b);
        }
    }
    Ok(buf)
}

fn read_block(rd: &mut Reader<'_>, expected: Option<usize>, what: &str) -> Result<Vec<f64>> {
    let at = rd.offset();
    let expected = expected.ok_or_else(|| Error::format(at, format!("{what} size overflows")))?;
    let n = rd.u64(what)?;
    if n != expected as u64 {
        return Err(Error::format(
            at,
            format!("{what} holds {n} values, layer needs {expected}"),
        ));
    }
    rd.f64s(expected, what)
}

pub fn load_model(bytes: &[u8]) -> Result<Network> {
    let mut rd = Reader::new(bytes);
    rd.magic(CNNM_MAGIC)?;
    let at = rd.offset();
    let version = rd.u32("version")?;
    if version != CNNM_VERSION {
        return Err(Error::format(
            at,
            format!("unsupported CNNM version {version}"),
        ));
    }
    let at = rd.offset();
    let code = rd.u8("preset")?;
    let preset = preset_from_code(code)
        .ok_or_else(|| Error::format(at, format!("unknown preset code {code}")))?;
    let mut input_dims = [0usize; 3];
    for d in &mut input_dims {
        *d = rd.u32("input extent")? as usize;
    }
    let at = rd.offset();
    let count = rd.u32("layer count")? as usize;
    if count > rd.remaining() {
        return Err(Error::format(
            at,
            format!("{count} layers cannot fit in the remaining bytes"),
        ));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let at = rd.offset();
        let ext = |rd: &mut Reader<'_>| -> Result<usize> { Ok(rd.u32("layer extent")? as usize) };
        layers.push(match rd.u8("layer tag")? {
            0 => LayerSpec::Conv {
                filter_height: ext(&mut rd)?,
                filter_width: ext(&mut rd)?,
                filters: ext(&mut rd)?,
            },
            1 => LayerSpec::MaxPool {
                height: ext(&mut rd)?,
                width: ext(&mut rd)?,
            },
            2 => LayerSpec::Relu,
            3 => LayerSpec::Flatten,
            4 => LayerSpec::Dense {
                units: ext(&mut rd)?,
            },
            5 => LayerSpec::Logistic,
            tag => return Err(Error::format(at, format!("unknown layer tag {tag}"))),
        });
    }
    let config = NetworkConfig {
        preset,
        input_dims,
        layers,
    };
    let config_end = rd.offset();
    let dims = infer_shapes(&config)
        .map_err(|e| Error::format(config_end, format!("invalid network: {e}")))?;

    let at = rd.offset();
    let stats = match rd.u8("stats flag")? {
        0 => None,
        1 => {
            let mut stats = Vec::with_capacity(input_dims[0]);
            for _ in 0..input_dims[0] {
                let mean = rd.f64("channel mean")?;
                let std = rd.f64("channel std")?;
                stats.push(ChannelStats { mean, std });
            }
            Some(stats)
        }
        flag => return Err(Error::format(at, format!("bad stats flag {flag}"))),
    };

    let mut built = Vec::with_capacity(config.layers.len());
    let mut prev = Dims::Map(input_dims);
    for (spec, out) in config.layers.iter().zip(&dims) {
        built.push(match (*spec, prev) {
            (
                LayerSpec::Conv {
                    filter_height,
                    filter_width,
                    filters,
                },
                Dims::Map([c, _, _]),
            ) => {
                let cs = ConvSpec {
                    filter_height,
                    filter_width,
                    num_filters: filters,
                    in_channels: c,
                };
                let w = read_block(
                    &mut rd,
                    c.checked_mul(filter_height)
                        .and_then(|v| v.checked_mul(filter_width))
                        .and_then(|v| v.checked_mul(filters)),
                    "convolution weights",
                )?;
                let b = read_block(&mut rd, Some(filters), "convolution biases")?;
                Layer::Conv(Conv2d::from_params(
                    cs,
                    Tensor::from_vec(&[filters, c, filter_height, filter_width], w)?,
                    Tensor::from_vec(&[filters], b)?,
                )?)
            }
            (LayerSpec::Dense { units }, Dims::Flat(n)) => {
                let w = read_block(&mut rd, units.checked_mul(n), "dense weights")?;
                let b = read_block(&mut rd, Some(units), "dense biases")?;
                Layer::Dense(Dense::from_params(
                    Tensor::from_vec(&[units, n], w)?,
                    Tensor::from_vec(&[units], b)?,
                )?)
            }
            (LayerSpec::MaxPool { height, width }, _) => Layer::MaxPool(PoolSpec {
                window_height: height,
                window_width: width,
            }),
            (LayerSpec::Relu, _) => Layer::Relu,
            (LayerSpec::Flatten, _) => Layer::Flatten,
            (LayerSpec::Logistic, _) => Layer::Logistic,
            (spec, _) => {
                return Err(Error::format(
                    config_end,
                    format!("{spec:?} does not fit its input"),
                ))
            }
        });
        prev = *out;
    }
    rd.finish()?;
    let mut net = Network::from_parts(config, built)?;
    net.set_input_stats(stats);
    Ok(net)
}

pub fn write_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, save_model(net)?)?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Network> {
    load_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EventKind;
    use crate::network::preset_config;
    use crate::numerics::Rng;

    fn net() -> Network {
        let mut n =
            Network::build(preset_config(EventKind::WeatherFront), &mut Rng::new(6)).unwrap();
        n.set_input_stats(Some(vec![
            ChannelStats {
                mean: 280.0,
                std: 3.5,
            },
            ChannelStats {
                mean: 1.0,
                std: 0.0,
            },
            ChannelStats {
                mean: 1e5,
                std: 200.0,
            },
        ]));
        n
    }

    #[test]
    fn round_trip_is_identity() {
        let a = net();
        let bytes = save_model(&a).unwrap();
        let b = load_model(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(save_model(&b).unwrap(), bytes);
        let mut rng = Rng::new(2);
        let x = Tensor::from_vec(
            &[3, 27, 60],
            (0..3 * 27 * 60).map(|_| rng.normal()).collect(),
        )
        .unwrap();
        let (pa, pb) = (a.forward(&x).unwrap(), b.forward(&x).unwrap());
        assert_eq!(pa.data()[0].to_bits(), pb.data()[0].to_bits());
        assert_eq!(pa.data()[1].to_bits(), pb.data()[1].to_bits());
    }

    #[test]
    fn without_stats() {
        let mut a = net();
        a.set_input_stats(None);
        assert_eq!(load_model(&save_model(&a).unwrap()).unwrap(), a);
    }

    #[test]
    fn corruption_is_a_format_error() {
        let bytes = save_model(&net()).unwrap();
        let mut b = bytes.clone();
        b[1] = b'X';
        assert!(matches!(
            load_model(&b),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut b = bytes.clone();
        b[4] = 7;
        assert!(matches!(
            load_model(&b),
            Err(Error::Format { offset: 4, .. })
        ));
        for cut in [3, 10, 30, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(load_model(&bytes[..cut]), Err(Error::Format { .. })),
                "cut {cut}"
            );
        }
        let mut b = bytes;
        b.push(1);
        assert!(matches!(load_model(&b), Err(Error::Format { .. })));
    }

    #[test]
    fn inconsistent_config_rejected() {
        let mut bytes = save_model(&net()).unwrap();
        // First convolution: 5x5 -> 30x5 no longer fits a 27-row input.
        let conv_height = 4 + 4 + 1 + 12 + 4 + 1;
        bytes[conv_height] = 30;
        assert!(matches!(load_model(&bytes), Err(Error::Format { .. })));
    }
}
