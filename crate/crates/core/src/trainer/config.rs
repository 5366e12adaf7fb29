use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scm::{LocalPlan, Variant};

/// Hyperparameters of one fit. Read from a flat TOML file; missing keys
/// take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the concept loss.
    pub beta: f64,
    /// Weight of the independence loss; ignored when `independence` is off.
    pub gamma: f64,
    /// Epochs between discriminator passes.
    pub theta: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Hidden widths of the shared exogenous layers.
    pub common_layers: Vec<usize>,
    /// Hidden widths of each concept tower.
    pub concept_layers: Vec<usize>,
    pub disc_layers: Vec<usize>,
    /// Hidden widths of the local weighting network(s).
    pub local_layers: Vec<usize>,
    pub dropout: f64,
    pub disc_dropout: f64,
    pub local_dropout: f64,
    pub batch_norm: bool,
    pub variant: Variant,
    pub independence: bool,
    /// Feed `y_B` to the local weighting functions.
    pub use_blackbox_score: bool,
    pub biases: bool,
    /// One network per edge instead of a shared trunk.
    pub local_per_edge: bool,
    pub seed: u64,
    /// Train / validation / test fractions for single-file inputs.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            gamma: 0.3,
            theta: 1,
            lr: 0.05,
            disc_lr: 0.05,
            l2: 0.0,
            batch_size: 64,
            epochs: 30,
            common_layers: vec![32],
            concept_layers: vec![16],
            disc_layers: vec![32, 16],
            local_layers: vec![4],
            dropout: 0.0,
            disc_dropout: 0.0,
            local_dropout: 0.0,
            batch_norm: false,
            variant: Variant::Local,
            independence: true,
            use_blackbox_score: true,
            biases: true,
            local_per_edge: true,
            seed: 0,
            split: [0.6, 0.2, 0.2],
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// `γ` as used by the objective.
    pub fn effective_gamma(&self) -> f64 {
        if self.independence {
            self.gamma
        } else {
            0.0
        }
    }

    pub fn local_plan(&self) -> LocalPlan {
        LocalPlan {
            widths: self.local_layers.clone(),
            dropout: self.local_dropout,
            batch_norm: self.batch_norm,
            per_edge: self.local_per_edge,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("l2", self.l2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [("lr", self.lr), ("disc_lr", self.disc_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        for (name, v) in [
            ("dropout", self.dropout),
            ("disc_dropout", self.disc_dropout),
            ("local_dropout", self.local_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if self.theta == 0 {
            return bad("theta must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        for (name, w) in [
            ("common_layers", &self.common_layers),
            ("concept_layers", &self.concept_layers),
            ("disc_layers", &self.disc_layers),
            ("local_layers", &self.local_layers),
        ] {
            if w.contains(&0) {
                return bad(format!("{name} contains a zero width"));
            }
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        let sum: f64 = self.split.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split.iter().any(|f| *f < 0.0) {
            return bad(format!("split {:?} must be non-negative and sum to 1", self.split));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = TrainConfig::from_toml_str("beta = 2.0\nvariant = \"global\"\n").unwrap();
        assert_eq!(cfg.beta, 2.0);
        assert_eq!(cfg.variant, Variant::Global);
        assert_eq!(cfg.epochs, TrainConfig::default().epochs);
    }

    #[test]
    fn rejects_bad_values() {
        for text in ["batch_size = 1", "theta = 0", "gamma = -1.0", "dropout = 1.0", "bogus = 3"] {
            assert!(TrainConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn independence_off_ignores_gamma() {
        let cfg = TrainConfig {
            independence: false,
            gamma: 5.0,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.effective_gamma(), 0.0);
    }
}
