use std::fmt;

use crate::data::PatchDataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::layers::{cross_entropy_loss, one_hot};

use super::config::NUM_CLASSES;
use super::model::{argmax_class, Network};

/// Accuracy and confusion matrix. Both matrices are indexed
/// `[predicted][true]` with class 0 the event; `confusion` is normalized so
/// each column (true label) sums to 1, or is all zero when that label does
/// not occur.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: [[f64; 2]; 2],
    pub counts: [[usize; 2]; 2],
    pub mean_loss: f64,
    pub total: usize,
}

impl EvalReport {
    pub fn from_counts(counts: [[usize; 2]; 2], mean_loss: f64) -> Self {
        let total = counts.iter().flatten().sum::<usize>();
        let mut confusion = [[0.0; 2]; 2];
        for t in 0..2 {
            let col = counts[0][t] + counts[1][t];
            if col > 0 {
                for p in 0..2 {
                    confusion[p][t] = counts[p][t] as f64 / col as f64;
                }
            }
        }
        let accuracy = if total == 0 {
            0.0
        } else {
            (counts[0][0] + counts[1][1]) as f64 / total as f64
        };
        EvalReport {
            accuracy,
            confusion,
            counts,
            mean_loss,
            total,
        }
    }

    /// Table with predicted rows and labeled columns, e.g. for `name = "TC"`:
    ///
    /// ```text
    ///                  Label TC  Label Non_TC
    /// Predict TC          0.989         0.003
    /// Predict Non_TC      0.011         0.997
    /// ```
    pub fn render(&self, name: &str) -> String {
        let cols = [format!("Label {name}"), format!("Label Non_{name}")];
        let rows = [format!("Predict {name}"), format!("Predict Non_{name}")];
        let lw = rows.iter().map(String::len).max().unwrap_or(0);
        let cw = cols.iter().map(String::len).max().unwrap_or(0).max(5);
        let mut out = format!("{:lw$}  {:>cw$}  {:>cw$}\n", "", cols[0], cols[1]);
        for (row, c) in rows.iter().zip(&self.confusion) {
            out += &format!("{row:lw$}  {:>cw$.3}  {:>cw$.3}\n", c[0], c[1]);
        }
        out += &format!("accuracy {:.4} ({} samples)", self.accuracy, self.total);
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render("Event"))
    }
}

pub fn evaluate(net: &Network, data: &PatchDataset) -> Result<EvalReport> {
    evaluate_with(net, data, Execution::default())
}

pub fn evaluate_with(net: &Network, data: &PatchDataset, exec: Execution) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    let outcomes = exec.map_slice(&data.records, |rec| -> Result<(usize, usize, f64)> {
        let probs = net.forward(&rec.patch)?;
        let truth = rec.label.class();
        let (loss, _) = cross_entropy_loss(&probs, &one_hot(truth, NUM_CLASSES))?;
        Ok((argmax_class(probs.data()), truth, loss))
    });
    let mut counts = [[0usize; 2]; 2];
    let mut loss = 0.0;
    for o in outcomes {
        let (pred, truth, l) = o?;
        counts[pred][truth] += 1;
        loss += l;
    }
    Ok(EvalReport::from_counts(counts, loss / data.len() as f64))
}
