//! The `CPDS` labeled-patch container.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "CPDS" | version u32 | kind u8 | p u32 | m u32 | n u32 | count u32
//! p x (name: u32 len + UTF-8)
//! p x (mean f64, std f64)
//! count x (label u8 (1 = positive) | provenance: u32 len + UTF-8 | p*m*n f64)
//! ```

use std::fs;
use std::path::Path;

use crate::binio::{put_f64, put_f64s, put_str, put_u32, put_u8, to_u32, Reader};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::{ChannelStats, EventKind, Label, PatchDataset, PatchRecord};

pub const CPDS_MAGIC: &[u8; 4] = b"CPDS";
pub const CPDS_VERSION: u32 = 1;

pub fn encode_dataset(ds: &PatchDataset) -> Result<Vec<u8>> {
    ds.validate_records()?;
    if ds.stats.len() != ds.dims[0] {
        return Err(Error::validation(
            "stats count does not match channel count",
        ));
    }
    let [p, m, n] = ds.dims;
    let mut buf = Vec::with_capacity(64 + ds.len() * (p * m * n * 8 + 48));
    buf.extend_from_slice(CPDS_MAGIC);
    put_u32(&mut buf, CPDS_VERSION);
    put_u8(&mut buf, ds.kind.code());
    put_u32(&mut buf, to_u32(p, "channel count")?);
    put_u32(&mut buf, to_u32(m, "height")?);
    put_u32(&mut buf, to_u32(n, "width")?);
    put_u32(&mut buf, to_u32(ds.len(), "record count")?);
    for name in &ds.channel_names {
        put_str(&mut buf, name)?;
    }
    for s in &ds.stats {
        put_f64(&mut buf, s.mean);
        put_f64(&mut buf, s.std);
    }
    for r in &ds.records {
        put_u8(&mut buf, u8::from(r.label == Label::Positive));
        put_str(&mut buf, &r.provenance)?;
        put_f64s(&mut buf, r.patch.data());
    }
    Ok(buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<PatchDataset> {
    let mut rd = Reader::new(bytes);
    rd.magic(CPDS_MAGIC)?;
    let at = rd.offset();
    let version = rd.u32("version")?;
    if version != CPDS_VERSION {
        return Err(Error::format(
            at,
            format!("unsupported CPDS version {version}"),
        ));
    }
    let at = rd.offset();
    let code = rd.u8("event kind")?;
    let kind = EventKind::from_code(code)
        .ok_or_else(|| Error::format(at, format!("unknown event kind code {code}")))?;
    let at = rd.offset();
    let p = rd.u32("channel count")? as usize;
    let m = rd.u32("height")? as usize;
    let n = rd.u32("width")? as usize;
    let count = rd.u32("record count")? as usize;
    if p == 0 || m == 0 || n == 0 {
        return Err(Error::format(
            at,
            format!("zero extent in dims {p}x{m}x{n}"),
        ));
    }
    let values = p
        .checked_mul(m)
        .and_then(|v| v.checked_mul(n))
        .filter(|v| v.checked_mul(8).is_some())
        .ok_or_else(|| Error::format(at, format!("dims {p}x{m}x{n} overflow")))?;
    // Each record needs at least a label, a length prefix and its values.
    let min_record = values * 8 + 5;
    if count
        .checked_mul(min_record)
        .is_none_or(|need| need > rd.remaining())
    {
        return Err(Error::format(
            at,
            format!(
                "{count} records of {p}x{m}x{n} cannot fit in {} bytes",
                rd.remaining()
            ),
        ));
    }

    let mut channel_names = Vec::with_capacity(p);
    for i in 0..p {
        channel_names.push(rd.string(&format!("channel name {i}"))?);
    }
    let mut stats = Vec::with_capacity(p);
    for i in 0..p {
        let mean = rd.f64(&format!("mean of channel {i}"))?;
        let std = rd.f64(&format!("std of channel {i}"))?;
        stats.push(ChannelStats { mean, std });
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let at = rd.offset();
        let label = match rd.u8("label")? {
            1 => Label::Positive,
            0 => Label::Negative,
            other => {
                return Err(Error::format(
                    at,
                    format!("record {i} has label byte {other}"),
                ))
            }
        };
        let provenance = rd.string("provenance")?;
        let data = rd.f64s(values, "patch values")?;
        let patch =
            Tensor::from_vec(&[p, m, n], data).map_err(|e| Error::format(at, e.to_string()))?;
        records.push(PatchRecord {
            label,
            patch,
            provenance,
        });
    }
    rd.finish()?;
    Ok(PatchDataset {
        kind,
        channel_names,
        dims: [p, m, n],
        records,
        stats,
    })
}

pub fn write_dataset(ds: &PatchDataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<PatchDataset> {
    decode_dataset(&fs::read(path)?)
}
