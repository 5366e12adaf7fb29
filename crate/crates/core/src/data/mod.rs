//! Datasets, CSV ingestion, splitting and the synthetic benchmark.

mod csv_io;
mod synth;

pub use csv_io::{csv_concept_names, load_csv, write_csv};
pub use synth::{synth_generate, SynthOutput, SynthSpec};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Validation,
    Test,
}

/// Rows of `(x, y_B, c_1..c_K)` plus an optional ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub feature_names: Vec<String>,
    pub scores: Vec<f64>,
    pub concepts: Array2<f64>,
    pub concept_names: Vec<String>,
    /// Task labels, when the source provides them.
    pub labels: Option<Vec<bool>>,
    pub split: SplitTag,
}

impl Dataset {
    /// Checks shapes, finiteness and the `[0, 1]` ranges.
    pub fn new(
        features: Array2<f64>,
        feature_names: Vec<String>,
        scores: Vec<f64>,
        concepts: Array2<f64>,
        concept_names: Vec<String>,
        labels: Option<Vec<bool>>,
    ) -> Result<Self> {
        let m = features.nrows();
        if scores.len() != m || concepts.nrows() != m {
            return Err(Error::Data(format!(
                "row counts differ: {m} feature rows, {} scores, {} concept rows",
                scores.len(),
                concepts.nrows()
            )));
        }
        if feature_names.len() != features.ncols() || concept_names.len() != concepts.ncols() {
            return Err(Error::Data("column names do not match matrix widths".into()));
        }
        if let Some(l) = &labels {
            if l.len() != m {
                return Err(Error::Data("label count differs from row count".into()));
            }
        }
        if let Some((i, _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature at row {}", i.0)));
        }
        if let Some(i) = scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Data(format!("score at row {i} outside [0, 1]")));
        }
        if let Some((i, _)) = concepts.indexed_iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!(
                "concept `{}` at row {} outside [0, 1]",
                concept_names[i.1], i.0
            )));
        }
        Ok(Self {
            features,
            feature_names,
            scores,
            concepts,
            concept_names,
            labels,
            split: SplitTag::Full,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.ncols()
    }

    pub fn subset(&self, rows: &[usize], tag: SplitTag) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            scores: rows.iter().map(|&i| self.scores[i]).collect(),
            concepts: self.concepts.select(Axis(0), rows),
            concept_names: self.concept_names.clone(),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect()),
            split: tag,
        }
    }

    /// Labels for the task metric: the dataset's own labels when present,
    /// otherwise the black-box decision `y_B >= 0.5`.
    pub fn task_labels(&self) -> Vec<bool> {
        match &self.labels {
            Some(l) => l.clone(),
            None => self.scores.iter().map(|&s| s >= 0.5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle into train / validation / test by `fractions`.
pub fn split(data: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let m = data.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions[0] * m as f64).round() as usize).min(m);
    let n_val = ((fractions[1] * m as f64).round() as usize).min(m - n_train);
    Ok(Splits {
        train: data.subset(&idx[..n_train], SplitTag::Train),
        validation: data.subset(&idx[n_train..n_train + n_val], SplitTag::Validation),
        test: data.subset(&idx[n_train + n_val..], SplitTag::Test),
    })
}
