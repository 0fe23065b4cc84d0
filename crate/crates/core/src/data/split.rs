use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::{Label, PatchDataset};

/// Stratified train/val/test split. Each label's records are shuffled with
/// `rng` and cut by rounded fractions (test takes the remainder). Records
/// keep their original relative order within each split.
pub fn split(
    dataset: &PatchDataset,
    fractions: [f64; 3],
    rng: &mut Rng,
) -> Result<(PatchDataset, PatchDataset, PatchDataset)> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::validation(format!(
            "split fractions {fractions:?} must all be positive"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split fractions {fractions:?} sum to {total}, not 1"
        )));
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for label in [Label::Positive, Label::Negative] {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.records[i].label == label)
            .collect();
        rng.shuffle(&mut idx);
        let k = idx.len();
        let n_train = ((fractions[0] * k as f64).round() as usize).min(k);
        let n_val = ((fractions[1] * k as f64).round() as usize).min(k - n_train);
        parts[0].extend_from_slice(&idx[..n_train]);
        parts[1].extend_from_slice(&idx[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&idx[n_train + n_val..]);
    }
    let [a, b, c] = parts.map(|mut ids| {
        ids.sort_unstable();
        dataset.with_records(
            ids.into_iter()
                .map(|i| dataset.records[i].clone())
                .collect(),
        )
    });
    Ok((a, b, c))
}
