use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimKind {
    Continuous,
    /// Uniform in `log10` between the bounds; both bounds must be positive.
    Log10,
    /// Uniform over the integers in `[low, high]`.
    Integer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: DimKind,
    pub low: f64,
    pub high: f64,
}

impl Dimension {
    pub fn new(name: impl Into<String>, kind: DimKind, low: f64, high: f64) -> Self {
        Dimension {
            name: name.into(),
            kind,
            low,
            high,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(Error::validation(format!(
                "dimension {}: need finite low < high",
                self.name
            )));
        }
        match self.kind {
            DimKind::Log10 if self.low <= 0.0 => Err(Error::validation(format!(
                "dimension {}: log10 bounds must be positive",
                self.name
            ))),
            DimKind::Integer if self.low.fract() != 0.0 || self.high.fract() != 0.0 => {
                Err(Error::validation(format!(
                    "dimension {}: integer bounds must be whole",
                    self.name
                )))
            }
            _ => Ok(()),
        }
    }

    /// Maps `u` in `[0, 1]` to a value in natural units.
    pub fn denormalize(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            DimKind::Continuous => self.low + u * (self.high - self.low),
            DimKind::Log10 => {
                let (a, b) = (self.low.log10(), self.high.log10());
                10f64.powf(a + u * (b - a)).clamp(self.low, self.high)
            }
            DimKind::Integer => (self.low + u * (self.high - self.low))
                .round()
                .clamp(self.low, self.high),
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        let u = match self.kind {
            DimKind::Log10 => {
                let (a, b) = (self.low.log10(), self.high.log10());
                (v.log10() - a) / (b - a)
            }
            _ => (v - self.low) / (self.high - self.low),
        };
        u.clamp(0.0, 1.0)
    }

    /// Moves `u` onto the grid of representable values (integers only).
    pub fn snap(&self, u: f64) -> f64 {
        match self.kind {
            DimKind::Integer => self.normalize(self.denormalize(u)),
            _ => u.clamp(0.0, 1.0),
        }
    }
}

/// An ordered box of hyperparameters. Points live in `[0, 1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperSpace {
    #[serde(rename = "dimension")]
    dims: Vec<Dimension>,
}

impl HyperSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::validation("search space has no dimensions"));
        }
        let mut seen = HashSet::new();
        for d in &dims {
            d.validate()?;
            if !seen.insert(d.name.as_str()) {
                return Err(Error::validation(format!("duplicate dimension {}", d.name)));
            }
        }
        Ok(HyperSpace { dims })
    }

    /// Learning rate, weight decay, momentum and batch size.
    pub fn default_sgd() -> Self {
        HyperSpace {
            dims: vec![
                Dimension::new("learning_rate", DimKind::Log10, 1e-4, 1e-1),
                Dimension::new("weight_decay", DimKind::Log10, 1e-6, 1e-2),
                Dimension::new("momentum", DimKind::Continuous, 0.0, 0.99),
                Dimension::new("batch_size", DimKind::Integer, 16.0, 256.0),
            ],
        }
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dims.len() {
            return Err(Error::validation(format!(
                "point has {len} coordinates, space has {}",
                self.dims.len()
            )));
        }
        Ok(())
    }

    pub fn denormalize(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        Ok(self
            .dims
            .iter()
            .zip(u)
            .map(|(d, &x)| d.denormalize(x))
            .collect())
    }

    pub fn normalize(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_len(values.len())?;
        Ok(self
            .dims
            .iter()
            .zip(values)
            .map(|(d, &v)| d.normalize(v))
            .collect())
    }

    pub fn snap(&self, u: &mut [f64]) {
        for (d, x) in self.dims.iter().zip(u.iter_mut()) {
            *x = d.snap(*x);
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: HyperSpace =
            toml::from_str(text).map_err(|e| Error::validation(format!("search space: {e}")))?;
        HyperSpace::new(raw.dims)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("search space serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        HyperSpace::from_toml_str(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let s = HyperSpace::default_sgd();
        let text = s.to_toml_string();
        assert!(text.contains("[[dimension]]"));
        assert_eq!(HyperSpace::from_toml_str(&text).unwrap(), s);
    }

    #[test]
    fn parses_hand_written_config() {
        let s = HyperSpace::from_toml_str(
            "[[dimension]]\nname = \"lr\"\nkind = \"log10\"\nlow = 1e-3\nhigh = 1.0\n\n\
             [[dimension]]\nname = \"batch\"\nkind = \"integer\"\nlow = 8\nhigh = 64\n",
        )
        .unwrap();
        assert_eq!(s.len(), 2);
        let v = s.denormalize(&[0.5, 0.5]).unwrap();
        assert!((v[0] - 10f64.powf(-1.5)).abs() < 1e-12);
        assert_eq!(v[1], 36.0);
    }

    #[test]
    fn rejects_bad_spaces() {
        let bad = [
            vec![Dimension::new("a", DimKind::Continuous, 1.0, 1.0)],
            vec![Dimension::new("a", DimKind::Log10, 0.0, 1.0)],
            vec![Dimension::new("a", DimKind::Integer, 0.5, 4.0)],
            vec![
                Dimension::new("a", DimKind::Continuous, 0.0, 1.0),
                Dimension::new("a", DimKind::Continuous, 0.0, 2.0),
            ],
            vec![],
        ];
        for dims in bad {
            assert!(HyperSpace::new(dims).is_err());
        }
        assert!(HyperSpace::from_toml_str(
            "[[dimension]]\nname = \"x\"\nkind = \"cubic\"\nlow = 0\nhigh = 1\n"
        )
        .is_err());
    }

    #[test]
    fn integers_snap_to_grid() {
        let d = Dimension::new("b", DimKind::Integer, 16.0, 256.0);
        for i in 0..=100 {
            let u = d.snap(i as f64 / 100.0);
            let v = d.denormalize(u);
            assert_eq!(v.fract(), 0.0);
            assert!((16.0..=256.0).contains(&v));
            assert_eq!(d.snap(u), u);
        }
    }

    #[test]
    fn normalize_inverts_denormalize() {
        let s = HyperSpace::default_sgd();
        let u = [0.3, 0.9, 0.25, 0.5];
        let back = s.normalize(&s.denormalize(&u).unwrap()).unwrap();
        for k in 0..3 {
            assert!((back[k] - u[k]).abs() < 1e-12);
        }
        assert!(s.denormalize(&[0.5]).is_err());
    }
}
