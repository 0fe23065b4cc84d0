//! Append-only trial store: one JSON object per line.
//!
//! A trial is appended again on every state change, so the file is a full
//! history and the current state of a trial is its last line. Infinite
//! losses (failed trials) are written as the string `"inf"`.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Proposed,
    Running,
    Done,
    Failed,
}

impl TrialStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, TrialStatus::Done | TrialStatus::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: u64,
    pub status: TrialStatus,
    /// Coordinates in the unit box.
    pub point: Vec<f64>,
    /// The same point in natural units, keyed by dimension name.
    pub values: BTreeMap<String, f64>,
    #[serde(serialize_with = "ser_loss", deserialize_with = "de_loss")]
    pub loss: Option<f64>,
    pub seed: u64,
    pub wall_time: f64,
    /// Seconds since the Unix epoch when this record was written.
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn ser_loss<S: Serializer>(loss: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match loss {
        None => s.serialize_none(),
        Some(v) if v.is_finite() => s.serialize_f64(*v),
        Some(v) if *v > 0.0 && v.is_infinite() => s.serialize_str("inf"),
        Some(_) => Err(serde::ser::Error::custom("loss must be finite or +inf")),
    }
}

fn de_loss<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Option::<Repr>::deserialize(d)? {
        None => Ok(None),
        Some(Repr::Num(v)) => Ok(Some(v)),
        Some(Repr::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
        Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("bad loss {t:?}"))),
    }
}

impl Trial {
    fn check(&self) -> std::result::Result<(), String> {
        if self.point.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err("point outside the unit box".into());
        }
        match (self.status, self.loss) {
            (TrialStatus::Done, Some(l)) if l.is_finite() => Ok(()),
            (TrialStatus::Done, _) => Err("done trial without a finite loss".into()),
            _ => Ok(()),
        }
    }
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Clone, Debug)]
pub struct TrialStore {
    path: PathBuf,
}

impl TrialStore {
    /// Does not touch the file; it is created on the first append.
    pub fn new(path: impl Into<PathBuf>) -> Self {
        TrialStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one complete line and flushes it.
    pub fn append(&mut self, trial: &Trial) -> Result<()> {
        trial.check().map_err(Error::validation)?;
        let mut line =
            serde_json::to_string(trial).map_err(|e| Error::validation(e.to_string()))?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Every record in file order. A missing file is an empty store.
    pub fn load(&self) -> Result<Vec<Trial>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let trial: Trial = serde_json::from_str(line).map_err(|e| Error::Store {
                line: i + 1,
                message: e.to_string(),
            })?;
            trial.check().map_err(|message| Error::Store {
                line: i + 1,
                message,
            })?;
            out.push(trial);
        }
        Ok(out)
    }

    /// The last record of every trial, ordered by id.
    pub fn latest(&self) -> Result<Vec<Trial>> {
        Ok(latest_states(self.load()?))
    }
}

pub fn latest_states(history: Vec<Trial>) -> Vec<Trial> {
    let mut by_id: BTreeMap<u64, Trial> = BTreeMap::new();
    for t in history {
        by_id.insert(t.id, t);
    }
    by_id.into_values().collect()
}
