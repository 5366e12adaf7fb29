//! Python bindings for the explainer: DAGs, datasets, training, prediction,
//! counterfactual attribution and explanation export.

use diconstruct::counterfactual::{counterfactual_score, PropagationMode};
use diconstruct::dag::DagSpec;
use diconstruct::data::{load_csv, synth_generate, Dataset, Splits, SynthSpec};
use diconstruct::error::Error;
use diconstruct::export::{explain_rows, export_dot, export_explanation_json};
use diconstruct::model::ExplainerModel;
use diconstruct::persist::{load_model, save_model};
use diconstruct::trainer::{fit, TrainConfig};
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, width: Option<usize>) -> PyResult<Array2<f64>> {
    let w = width.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, w), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn mode(name: &str) -> PyResult<PropagationMode> {
    name.parse().map_err(py_err)
}

#[pyclass(name = "Dag", module = "diconstruct_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDag(DagSpec);

#[pymethods]
impl PyDag {
    /// Parses an edge list (`A -> B` per line) over the given concepts and
    /// rejects cycles and edges out of the sink.
    #[staticmethod]
    fn parse(text: &str, concepts: Vec<String>) -> PyResult<Self> {
        let dag = DagSpec::parse(text, &concepts).map_err(|e| py_err(e.into()))?;
        if let Err(v) = dag.validate() {
            let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
            return Err(PyValueError::new_err(format!("invalid DAG: {}", msg.join("; "))));
        }
        Ok(Self(dag))
    }

    /// Every concept feeds the sink and nothing else.
    #[staticmethod]
    fn trivial(concepts: Vec<String>) -> PyResult<Self> {
        DagSpec::trivial(&concepts)
            .map(Self)
            .map_err(|e| py_err(e.into()))
    }

    #[getter]
    fn concepts(&self) -> Vec<String> {
        self.0.concepts().to_vec()
    }

    #[getter]
    fn edges(&self) -> Vec<(String, String)> {
        self.0
            .edges()
            .iter()
            .map(|e| (self.0.node_name(e.parent).to_owned(), self.0.node_name(e.child).to_owned()))
            .collect()
    }

    fn to_edge_list(&self) -> String {
        self.0.to_edge_list()
    }

    fn __repr__(&self) -> String {
        format!("Dag({} concepts, {} edges)", self.0.n_concepts(), self.0.n_edges())
    }
}

#[pyclass(name = "Dataset", module = "diconstruct_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset(Dataset);

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (features, scores, concepts, concept_names, labels=None))]
    fn new(
        features: Vec<Vec<f64>>,
        scores: Vec<f64>,
        concepts: Vec<Vec<f64>>,
        concept_names: Vec<String>,
        labels: Option<Vec<bool>>,
    ) -> PyResult<Self> {
        let f = matrix(features, None)?;
        let c = matrix(concepts, Some(concept_names.len()))?;
        let names = (0..f.ncols()).map(|j| format!("f{j}")).collect();
        Dataset::new(f, names, scores, c, concept_names, labels)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn from_csv(path: &str, concept_names: Vec<String>) -> PyResult<Self> {
        load_csv(path, &concept_names).map(Self).map_err(py_err)
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        rows_of(&self.0.features)
    }

    #[getter]
    fn scores(&self) -> Vec<f64> {
        self.0.scores.clone()
    }

    #[getter]
    fn concepts(&self) -> Vec<Vec<f64>> {
        rows_of(&self.0.concepts)
    }

    #[getter]
    fn concept_names(&self) -> Vec<String> {
        self.0.concept_names.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Synthetic benchmark from a TOML spec; returns `(train, validation, test, dag)`.
#[pyfunction]
#[pyo3(signature = (spec_toml=""))]
fn synthesize(spec_toml: &str) -> PyResult<(PyDataset, PyDataset, PyDataset, PyDag)> {
    let spec: SynthSpec = toml::from_str(spec_toml).map_err(|e| PyValueError::new_err(e.message().to_owned()))?;
    let out = synth_generate(&spec).map_err(py_err)?;
    let Splits {
        train,
        validation,
        test,
    } = out.splits;
    Ok((PyDataset(train), PyDataset(validation), PyDataset(test), PyDag(out.dag)))
}

#[pyclass(name = "Model", module = "diconstruct_py", frozen)]
struct PyModel {
    model: ExplainerModel,
    selection_score: Option<f64>,
}

impl PyModel {
    fn concept(&self, name: &str) -> PyResult<usize> {
        self.model.concept_index(name).map_err(py_err)
    }
}

#[pymethods]
impl PyModel {
    /// Trains with the given TOML configuration (defaults for missing keys)
    /// and keeps the best validation epoch.
    #[staticmethod]
    #[pyo3(signature = (train, validation, dag, config_toml=""))]
    fn fit(py: Python<'_>, train: &PyDataset, validation: &PyDataset, dag: &PyDag, config_toml: &str) -> PyResult<Self> {
        let cfg = TrainConfig::from_toml_str(config_toml).map_err(py_err)?;
        let splits = Splits {
            train: train.0.clone(),
            validation: validation.0.clone(),
            test: validation.0.clone(),
        };
        let run = py.detach(|| fit(&splits, &dag.0, &cfg)).map_err(py_err)?;
        Ok(Self {
            model: run.model,
            selection_score: Some(run.selection_score),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            model: load_model(path).map_err(py_err)?,
            selection_score: None,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(&self.model, path).map_err(py_err)
    }

    #[getter]
    fn selection_score(&self) -> Option<f64> {
        self.selection_score
    }

    #[getter]
    fn dag(&self) -> PyDag {
        PyDag(self.model.dag.clone())
    }

    /// `u`, concepts, scores and realised edge weights per row.
    fn predict<'py>(&self, py: Python<'py>, data: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let p = self.model.predict_dataset(&data.0).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("u", rows_of(&p.u))?;
        d.set_item("concepts", rows_of(&p.concepts))?;
        d.set_item("scores", p.scores)?;
        d.set_item("edge_weights", rows_of(&p.edge_weights))?;
        Ok(d)
    }

    /// Fidelity, concept accuracy, TPR at 5% FPR and completeness.
    fn evaluate<'py>(&self, py: Python<'py>, data: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let r = self.model.evaluate(&data.0).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("fidelity", r.fidelity)?;
        d.set_item("concept_accuracy", r.concept_accuracy)?;
        d.set_item("task_tpr_at_fpr", r.task_tpr_at_fpr)?;
        d.set_item("completeness", r.completeness)?;
        d.set_item("n_rows", r.n_rows)?;
        Ok(d)
    }

    /// `(factual, counterfactual, tce)` for `do(concept := low/high)`.
    #[pyo3(signature = (data, row, concept, high, mode="fixed"))]
    fn intervene(&self, data: &PyDataset, row: usize, concept: &str, high: bool, mode: &str) -> PyResult<(f64, f64, f64)> {
        let k = self.concept(concept)?;
        let m = self::mode(mode)?;
        let inst = self.model.abduct_row(&data.0, row).map_err(py_err)?;
        let factual = inst.evaluate(&self.model.dag, &[]).map_err(py_err)?;
        let table = self.model.intervention_table().map_err(py_err)?;
        let cf = counterfactual_score(&self.model.dag, table, &inst, &factual, k, high, m).map_err(py_err)?;
        Ok((factual.score, cf, cf - factual.score))
    }

    /// `{concept: (tce_low, tce_high)}` for one row.
    #[pyo3(signature = (data, row, mode="fixed"))]
    fn attribute<'py>(&self, py: Python<'py>, data: &PyDataset, row: usize, mode: &str) -> PyResult<Bound<'py, PyDict>> {
        let inst = self.model.abduct_row(&data.0, row).map_err(py_err)?;
        let a = self.model.attribute(&inst, self::mode(mode)?).map_err(py_err)?;
        let d = PyDict::new(py);
        for c in a.concepts {
            d.set_item(c.concept, (c.tce_low, c.tce_high))?;
        }
        Ok(d)
    }

    /// Explanation of one row as `(json, dot)`.
    #[pyo3(signature = (data, row, mode="fixed"))]
    fn explain(&self, data: &PyDataset, row: usize, mode: &str) -> PyResult<(String, String)> {
        let docs = explain_rows(&self.model, &data.0, &[row], self::mode(mode)?).map_err(py_err)?;
        Ok((export_explanation_json(&docs[0]), export_dot(&docs[0])))
    }
}

#[pyfunction]
fn fidelity(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    diconstruct::metrics::fidelity(&pred, &target).map_err(py_err)
}

#[pyfunction]
fn concept_accuracy(pred: Vec<Vec<f64>>, target: Vec<Vec<f64>>) -> PyResult<f64> {
    let (p, t) = (matrix(pred, None)?, matrix(target, None)?);
    diconstruct::metrics::concept_accuracy(p.view(), t.view()).map_err(py_err)
}

/// Mean per-concept variance of a rows × concepts TCE table.
#[pyfunction]
fn diversity(tces: Vec<Vec<f64>>) -> PyResult<f64> {
    diconstruct::counterfactual::diversity(matrix(tces, None)?.view()).map_err(py_err)
}

#[pymodule]
fn diconstruct_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDag>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(concept_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    Ok(())
}
