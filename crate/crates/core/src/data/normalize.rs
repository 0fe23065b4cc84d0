use crate::error::{Error, Result};

use super::{ChannelStats, PatchDataset};

/// Per-channel mean and population standard deviation over every pixel of
/// every record. A channel whose spread is at rounding level is reported
/// with `std == 0`.
pub fn fit_stats(dataset: &PatchDataset) -> Result<Vec<ChannelStats>> {
    if dataset.is_empty() {
        return Err(Error::validation(
            "cannot fit normalization stats on an empty dataset",
        ));
    }
    let [p, m, n] = dataset.dims;
    let plane = m * n;
    let count = (plane * dataset.len()) as f64;
    let mut stats = Vec::with_capacity(p);
    for c in 0..p {
        let planes = || {
            dataset
                .records
                .iter()
                .map(move |r| &r.patch.data()[c * plane..(c + 1) * plane])
        };
        let mean = planes().map(|x| x.iter().sum::<f64>()).sum::<f64>() / count;
        let var = planes()
            .map(|x| x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
            .sum::<f64>()
            / count;
        let std = var.sqrt();
        if !mean.is_finite() || !std.is_finite() {
            return Err(Error::validation(format!(
                "channel {c} has non-finite statistics"
            )));
        }
        let std = if std <= 1e-12 * mean.abs().max(1.0) {
            0.0
        } else {
            std
        };
        stats.push(ChannelStats { mean, std });
    }
    Ok(stats)
}

/// Z-scores every record with frozen `stats`; constant channels become 0.
/// The returned dataset carries `stats` in its header.
pub fn apply_stats(dataset: &PatchDataset, stats: &[ChannelStats]) -> Result<PatchDataset> {
    let [p, m, n] = dataset.dims;
    if stats.len() != p {
        return Err(Error::validation(format!(
            "{} channel stats for a {p}-channel dataset",
            stats.len()
        )));
    }
    let plane = m * n;
    let mut records = dataset.records.clone();
    for r in &mut records {
        for (c, s) in stats.iter().enumerate() {
            let x = &mut r.patch.data_mut()[c * plane..(c + 1) * plane];
            if s.is_constant() {
                x.fill(0.0);
            } else {
                x.iter_mut().for_each(|v| *v = (*v - s.mean) / s.std);
            }
        }
    }
    let mut out = dataset.with_records(records);
    out.stats = stats.to_vec();
    Ok(out)
}

/// Fits stats on `dataset` and applies them; returns the normalized data
/// and the fitted stats (to be reused on held-out splits).
pub fn normalize(dataset: &PatchDataset) -> Result<(PatchDataset, Vec<ChannelStats>)> {
    let stats = fit_stats(dataset)?;
    Ok((apply_stats(dataset, &stats)?, stats))
}
