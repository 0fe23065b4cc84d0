//! Labeled multi-channel patches: synthetic event fields, centred extraction,
//! normalization, splitting and the `CPDS` container.

mod container;
mod field;
mod normalize;
mod ppm;
mod split;
mod synth;

pub use container::{
    decode_dataset, encode_dataset, read_dataset, write_dataset, CPDS_MAGIC, CPDS_VERSION,
};
pub use field::{extract_patch, BoundingBox, Channel, FieldStack};
pub use normalize::{apply_stats, fit_stats, normalize};
pub use ppm::{encode_ppm, write_ppm};
pub use split::split;
pub use synth::{
    build_synthetic_dataset, build_synthetic_dataset_with, synth_event_field, threshold_baseline,
    SynthField,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Kind of extreme-weather event a dataset or network targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TropicalCyclone,
    AtmosphericRiver,
    WeatherFront,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [
        EventKind::TropicalCyclone,
        EventKind::AtmosphericRiver,
        EventKind::WeatherFront,
    ];

    /// Patch `(p, m, n)`.
    pub fn patch_dims(self) -> [usize; 3] {
        match self {
            EventKind::TropicalCyclone => [8, 32, 32],
            EventKind::AtmosphericRiver => [2, 148, 224],
            EventKind::WeatherFront => [3, 27, 60],
        }
    }

    /// Canonical channel order.
    pub fn channel_names(self) -> &'static [&'static str] {
        match self {
            EventKind::TropicalCyclone => {
                &["PSL", "VBOT", "UBOT", "T200", "T500", "TMQ", "V850", "U850"]
            }
            EventKind::AtmosphericRiver => &["TMQ", "LANDSEA"],
            EventKind::WeatherFront => &["T2M", "PRECIP", "SLP"],
        }
    }

    pub fn channel_units(self) -> &'static [&'static str] {
        match self {
            EventKind::TropicalCyclone => &["Pa", "m/s", "m/s", "K", "K", "kg/m2", "m/s", "m/s"],
            EventKind::AtmosphericRiver => &["kg/m2", "1"],
            EventKind::WeatherFront => &["K", "mm/day", "Pa"],
        }
    }

    /// Short tag used on the command line and in table headers.
    pub fn tag(self) -> &'static str {
        match self {
            EventKind::TropicalCyclone => "tc",
            EventKind::AtmosphericRiver => "ar",
            EventKind::WeatherFront => "wf",
        }
    }

    pub fn label_name(self) -> &'static str {
        match self {
            EventKind::TropicalCyclone => "TC",
            EventKind::AtmosphericRiver => "AR",
            EventKind::WeatherFront => "WF",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            EventKind::TropicalCyclone => 0,
            EventKind::AtmosphericRiver => 1,
            EventKind::WeatherFront => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<EventKind> {
        EventKind::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tc" | "tropical_cyclone" => Ok(EventKind::TropicalCyclone),
            "ar" | "atmospheric_river" => Ok(EventKind::AtmosphericRiver),
            "wf" | "weather_front" => Ok(EventKind::WeatherFront),
            other => Err(Error::validation(format!(
                "unknown event kind {other:?} (expected tc, ar or wf)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    /// Network output index; the positive class is 0.
    pub fn class(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
        }
    }

    pub fn from_class(class: usize) -> Label {
        if class == 0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// Per-channel z-score parameters. `std == 0` marks a constant channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    pub fn is_constant(&self) -> bool {
        !(self.std > 0.0)
    }
}

/// Where a patch came from: source id, the final box and the offset of the
/// event centroid from the patch centre (rows, cols).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub source_id: String,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub centroid_offset: (i64, i64),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@{},{}+{}x{};offset={},{}",
            self.source_id,
            self.top,
            self.left,
            self.height,
            self.width,
            self.centroid_offset.0,
            self.centroid_offset.1
        )
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::validation(format!("malformed provenance {s:?}"));
        let (source, rest) = s.rsplit_once('@').ok_or_else(bad)?;
        let (boxpart, offset) = rest.split_once(";offset=").ok_or_else(bad)?;
        let (origin, size) = boxpart.split_once('+').ok_or_else(bad)?;
        let (top, left) = origin.split_once(',').ok_or_else(bad)?;
        let (height, width) = size.split_once('x').ok_or_else(bad)?;
        let (dy, dx) = offset.split_once(',').ok_or_else(bad)?;
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let inum = |v: &str| v.parse::<i64>().map_err(|_| bad());
        Ok(Provenance {
            source_id: source.to_string(),
            top: num(top)?,
            left: num(left)?,
            height: num(height)?,
            width: num(width)?,
            centroid_offset: (inum(dy)?, inum(dx)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub label: Label,
    /// `(p, m, n)` in the dataset's channel order.
    pub patch: Tensor,
    /// Free-form on disk; synthetic records use the [`Provenance`] format.
    pub provenance: String,
}

/// Labeled patches of one event kind with shared dims and channel order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    pub kind: EventKind,
    pub channel_names: Vec<String>,
    pub dims: [usize; 3],
    pub records: Vec<PatchRecord>,
    /// Normalization parameters associated with the stored values. For raw
    /// data these describe the records themselves; for a normalized split
    /// they are the (training-split) statistics that were applied.
    pub stats: Vec<ChannelStats>,
}

impl PatchDataset {
    /// Dataset in the kind's canonical channel order, with stats computed
    /// from `records`.
    pub fn new(kind: EventKind, records: Vec<PatchRecord>) -> Result<Self> {
        let dims = kind.patch_dims();
        let channel_names = kind.channel_names().iter().map(|s| s.to_string()).collect();
        let mut ds = PatchDataset {
            kind,
            channel_names,
            dims,
            stats: Vec::new(),
            records,
        };
        ds.validate_records()?;
        ds.stats = if ds.records.is_empty() {
            vec![
                ChannelStats {
                    mean: 0.0,
                    std: 0.0
                };
                dims[0]
            ]
        } else {
            fit_stats(&ds)?
        };
        Ok(ds)
    }

    /// Same header, different records (used for splits).
    pub fn with_records(&self, records: Vec<PatchRecord>) -> PatchDataset {
        PatchDataset {
            kind: self.kind,
            channel_names: self.channel_names.clone(),
            dims: self.dims,
            records,
            stats: self.stats.clone(),
        }
    }

    pub fn validate_records(&self) -> Result<()> {
        if self.channel_names.len() != self.dims[0] {
            return Err(Error::validation("channel name count does not match dims"));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.patch.shape() != self.dims {
                return Err(Error::shape(format!(
                    "record {i} has dims {:?}, dataset expects {:?}",
                    r.patch.shape(),
                    self.dims
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_round_trips() {
        for k in EventKind::ALL {
            assert_eq!(k.tag().parse::<EventKind>().unwrap(), k);
            assert_eq!(EventKind::from_code(k.code()), Some(k));
            assert_eq!(k.channel_names().len(), k.patch_dims()[0]);
            assert_eq!(k.channel_units().len(), k.patch_dims()[0]);
        }
        assert!("xx".parse::<EventKind>().is_err());
    }

    #[test]
    fn provenance_round_trips() {
        let p = Provenance {
            source_id: "tc-000042".into(),
            top: 3,
            left: 0,
            height: 32,
            width: 32,
            centroid_offset: (0, -14),
        };
        assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        assert!("nonsense".parse::<Provenance>().is_err());
    }

    #[test]
    fn dataset_rejects_mismatched_dims() {
        let rec = PatchRecord {
            label: Label::Positive,
            patch: Tensor::zeros(&[8, 32, 31]).unwrap(),
            provenance: String::new(),
        };
        assert!(PatchDataset::new(EventKind::TropicalCyclone, vec![rec]).is_err());
    }
}
