//! A fitted explainer: exogenous net, SCM parameters, DAG and the
//! intervention table, with batch prediction and per-instance queries.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::counterfactual::{attribute, AttributionResult, InterventionTable, PropagationMode};
use crate::dag::DagSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exogenous::{ExogenousNet, IndependenceDiscriminator};
use crate::metrics::{concept_accuracy, fidelity, tpr_at_fpr, MetricReport, DEFAULT_FPR_CAP};
use crate::scm::{InstanceScm, ScmForwardResult, ScmParameters};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    /// Epoch (1-based) the stored parameters come from.
    pub epoch: usize,
    pub selection_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainerModel {
    pub config: TrainConfig,
    pub dag: DagSpec,
    pub exogenous: ExogenousNet,
    pub scm: ScmParameters,
    /// Kept with the artifact for inspection; never used at inference.
    pub discriminator: Option<IndependenceDiscriminator>,
    pub interventions: Option<InterventionTable>,
    pub metadata: TrainingMetadata,
}

/// Batch outputs: `u` and `ĉ` are `M×K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub u: Array2<f64>,
    pub concepts: Array2<f64>,
    pub scores: Vec<f64>,
    /// Realised edge weights, `M×E`.
    pub edge_weights: Array2<f64>,
}

impl ExplainerModel {
    pub fn n_concepts(&self) -> usize {
        self.dag.n_concepts()
    }

    pub fn concept_index(&self, name: &str) -> Result<usize> {
        self.dag
            .concept_index(name)
            .ok_or_else(|| Error::UnknownConcept(name.to_owned()))
    }

    pub fn intervention_table(&self) -> Result<&InterventionTable> {
        self.interventions.as_ref().ok_or(Error::MissingInterventionTable)
    }

    fn check_features(&self, x: &Array2<f64>, y_b: &[f64]) -> Result<()> {
        if x.ncols() != self.exogenous.n_features() {
            return Err(Error::Dimension(format!(
                "model expects {} features, got {}",
                self.exogenous.n_features(),
                x.ncols()
            )));
        }
        if y_b.len() != x.nrows() {
            return Err(Error::Dimension("one black-box score per row required".into()));
        }
        Ok(())
    }

    fn instance(&self, u: ArrayView1<f64>, w: ArrayView1<f64>) -> InstanceScm {
        InstanceScm {
            u: u.to_vec(),
            edge_weights: w.to_vec(),
            concept_bias: self.scm.concept_biases(),
            sink_bias: self.scm.sink_bias(),
        }
    }

    /// Exogenous values, realised weights and structural evaluation for
    /// every row. `y_b` is only read by local weighting functions that use
    /// the black-box score.
    pub fn predict(&self, x: &Array2<f64>, y_b: &[f64]) -> Result<Predictions> {
        self.check_features(x, y_b)?;
        let m = x.nrows();
        let k = self.n_concepts();
        let u = self.exogenous.predict(x)?;
        let y_col = Array2::from_shape_vec((m, 1), y_b.to_vec()).expect("column");
        let weights = self
            .scm
            .edge_weights_batch(&u, self.scm.uses_blackbox_score().then_some(&y_col))?;
        let mut concepts = Array2::zeros((m, k));
        let mut scores = Vec::with_capacity(m);
        for i in 0..m {
            let r = self.instance(u.row(i), weights.row(i)).evaluate(&self.dag, &[])?;
            concepts.row_mut(i).assign(&ArrayView1::from(&r.concepts));
            scores.push(r.score);
        }
        Ok(Predictions {
            u,
            concepts,
            scores,
            edge_weights: weights,
        })
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Predictions> {
        self.predict(&data.features, &data.scores)
    }

    /// Abducted SCMs for the given rows, from a single batch prediction.
    pub fn abduct_rows(&self, data: &Dataset, rows: &[usize]) -> Result<Vec<InstanceScm>> {
        if let Some(&r) = rows.iter().find(|&&r| r >= data.len()) {
            return Err(Error::InvalidArgument(format!(
                "row {r} out of range for {} rows",
                data.len()
            )));
        }
        let sub = data.subset(rows, data.split);
        let p = self.predict_dataset(&sub)?;
        Ok((0..rows.len())
            .map(|i| self.instance(p.u.row(i), p.edge_weights.row(i)))
            .collect())
    }

    pub fn abduct_row(&self, data: &Dataset, row: usize) -> Result<InstanceScm> {
        Ok(self.abduct_rows(data, &[row])?.remove(0))
    }

    /// Factual structural evaluation of an abducted instance.
    pub fn evaluate_instance(&self, inst: &InstanceScm) -> Result<ScmForwardResult> {
        inst.evaluate(&self.dag, &[])
    }

    pub fn attribute(&self, inst: &InstanceScm, mode: PropagationMode) -> Result<AttributionResult> {
        attribute(&self.dag, self.intervention_table()?, inst, mode)
    }

    /// Fidelity, concept accuracy and (when both classes are present) TPR
    /// at 5% FPR of the explainer's score against the task labels.
    pub fn evaluate(&self, data: &Dataset) -> Result<MetricReport> {
        let p = self.predict_dataset(data)?;
        self.report(data, &p)
    }

    pub fn report(&self, data: &Dataset, p: &Predictions) -> Result<MetricReport> {
        if data.n_concepts() != self.n_concepts() {
            return Err(Error::Dimension(format!(
                "dataset has {} concepts, model {}",
                data.n_concepts(),
                self.n_concepts()
            )));
        }
        let labels = data.task_labels();
        let both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
        Ok(MetricReport {
            fidelity: fidelity(&p.scores, &data.scores)?,
            concept_accuracy: concept_accuracy(p.concepts.view(), data.concepts.view())?,
            task_tpr_at_fpr: if both {
                Some(tpr_at_fpr(&p.scores, &labels, DEFAULT_FPR_CAP)?)
            } else {
                None
            },
            completeness: None,
            n_rows: data.len(),
            n_concepts: data.n_concepts(),
        })
    }
}
