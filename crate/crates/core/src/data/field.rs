use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::{Label, PatchRecord, Provenance};

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub units: String,
    /// Row-major `height x width` grid.
    pub values: Vec<f64>,
}

/// Co-registered 2-D grids sharing one `height x width` shape.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldStack {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Channel>,
}

impl FieldStack {
    pub fn new(height: usize, width: usize, channels: Vec<Channel>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::validation(
                "a field stack needs at least one channel",
            ));
        }
        for c in &channels {
            if c.values.len() != height * width {
                return Err(Error::validation(format!(
                    "channel {} has {} values, grid is {height}x{width}",
                    c.name,
                    c.values.len()
                )));
            }
            if !c.values.iter().all(|v| v.is_finite()) {
                return Err(Error::validation(format!(
                    "channel {} has non-finite values",
                    c.name
                )));
            }
        }
        Ok(FieldStack {
            height,
            width,
            channels,
        })
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn value(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.channels[channel].values[row * self.width + col]
    }
}

/// Box of `height x width` pixels whose centre pixel is
/// `(center_row, center_col)`; the centre of an even extent is `extent / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub center_row: usize,
    pub center_col: usize,
    pub height: usize,
    pub width: usize,
}

fn place(centroid: usize, extent: usize, grid: usize) -> usize {
    let start = centroid as i64 - (extent / 2) as i64;
    start.clamp(0, (grid - extent) as i64) as usize
}

/// Recentres `bbox` on the event centroid, shifts it back inside the grid
/// where needed (never shrinking it), and stacks the cropped channels in
/// `channel_order`.
pub fn extract_patch(
    stack: &FieldStack,
    bbox: BoundingBox,
    centroid: (usize, usize),
    channel_order: &[&str],
    label: Label,
    source_id: &str,
) -> Result<PatchRecord> {
    let (h, w) = (bbox.height, bbox.width);
    if h == 0 || w == 0 {
        return Err(Error::validation("bounding box must be non-empty"));
    }
    if h > stack.height || w > stack.width {
        return Err(Error::validation(format!(
            "{h}x{w} box does not fit a {}x{} grid",
            stack.height, stack.width
        )));
    }
    if centroid.0 >= stack.height || centroid.1 >= stack.width {
        return Err(Error::validation(format!(
            "centroid {centroid:?} lies outside the grid"
        )));
    }
    let top = place(centroid.0, h, stack.height);
    let left = place(centroid.1, w, stack.width);

    let mut data = Vec::with_capacity(channel_order.len() * h * w);
    for name in channel_order {
        let ch = stack
            .channel(name)
            .ok_or_else(|| Error::validation(format!("field stack has no channel {name}")))?;
        for r in top..top + h {
            data.extend_from_slice(&ch.values[r * stack.width + left..r * stack.width + left + w]);
        }
    }
    let provenance = Provenance {
        source_id: source_id.to_string(),
        top,
        left,
        height: h,
        width: w,
        centroid_offset: (
            centroid.0 as i64 - (top + h / 2) as i64,
            centroid.1 as i64 - (left + w / 2) as i64,
        ),
    };
    Ok(PatchRecord {
        label,
        patch: Tensor::from_vec(&[channel_order.len(), h, w], data)?,
        provenance: provenance.to_string(),
    })
}
