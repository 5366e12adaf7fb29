//! Abduction / action / prediction over an instance SCM, total concept
//! effects and attribution diversity.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dag::DagSpec;
use crate::error::{Error, Result};
use crate::scm::{InstanceScm, ScmForwardResult};

/// Smallest sample the percentile table is built from.
pub const MIN_TABLE_ROWS: usize = 20;

const LOW_PERCENTILE: f64 = 5.0;
const HIGH_PERCENTILE: f64 = 95.0;

/// Intervention values are kept strictly inside `(0, 1)` so their logits
/// stay finite.
const VALUE_EPS: f64 = 1e-6;

/// How an intervention reaches the sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    /// Only the sink assignment is recomputed; every other concept keeps its
    /// factual value.
    #[default]
    Fixed,
    /// Descendants of the intervened concept are re-evaluated in
    /// topological order before the sink.
    Propagate,
}

impl fmt::Display for PropagationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Propagate => "propagate",
        })
    }
}

impl FromStr for PropagationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "propagate" => Ok(Self::Propagate),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected fixed or propagate)"
            ))),
        }
    }
}

/// Per-concept intervention values: `low` for `do(C_k := 0)`, `high` for
/// `do(C_k := 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionTable {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl InterventionTable {
    pub fn value(&self, k: usize, high: bool) -> Result<f64> {
        let col = if high { &self.high } else { &self.low };
        col.get(k)
            .copied()
            .ok_or_else(|| Error::UnknownConcept(format!("concept index {k}")))
    }

    pub fn n_concepts(&self) -> usize {
        self.low.len()
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// 5th / 95th nearest-rank percentiles of each column of predicted
/// concepts.
pub fn build_intervention_table(concepts: ArrayView2<f64>) -> Result<InterventionTable> {
    if concepts.nrows() < MIN_TABLE_ROWS {
        return Err(Error::InvalidArgument(format!(
            "intervention table needs at least {MIN_TABLE_ROWS} rows, got {}",
            concepts.nrows()
        )));
    }
    let mut low = Vec::with_capacity(concepts.ncols());
    let mut high = Vec::with_capacity(concepts.ncols());
    for col in concepts.columns() {
        let mut v: Vec<f64> = col.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("predicted concepts".into()));
        }
        v.sort_by(f64::total_cmp);
        let clamp = |x: f64| x.clamp(VALUE_EPS, 1.0 - VALUE_EPS);
        low.push(clamp(nearest_rank(&v, LOW_PERCENTILE)));
        high.push(clamp(nearest_rank(&v, HIGH_PERCENTILE)));
    }
    Ok(InterventionTable { low, high })
}

/// `ŷ_B` after `do(C_k := value)` on an abducted instance. `factual` must
/// be `inst.evaluate(dag, &[])`.
pub fn intervene_value(
    dag: &DagSpec,
    inst: &InstanceScm,
    factual: &ScmForwardResult,
    k: usize,
    value: f64,
    mode: PropagationMode,
) -> Result<f64> {
    if k >= dag.n_concepts() {
        return Err(Error::UnknownConcept(format!("concept index {k}")));
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidArgument(format!(
            "intervention value {value} outside [0, 1]"
        )));
    }
    match mode {
        PropagationMode::Fixed => {
            let mut c = factual.concepts.clone();
            c[k] = value;
            Ok(inst.sink_score(dag, &c))
        }
        PropagationMode::Propagate => {
            let mut overrides = vec![None; dag.n_concepts()];
            overrides[k] = Some(value);
            Ok(inst.evaluate(dag, &overrides)?.score)
        }
    }
}

/// Counterfactual score for `do(C_k := a)` with the table's percentile
/// value (`a = false` → low, `a = true` → high).
pub fn counterfactual_score(
    dag: &DagSpec,
    table: &InterventionTable,
    inst: &InstanceScm,
    factual: &ScmForwardResult,
    k: usize,
    a: bool,
    mode: PropagationMode,
) -> Result<f64> {
    intervene_value(dag, inst, factual, k, table.value(k, a)?, mode)
}

/// Total concept effect: counterfactual minus factual `ŷ_B`.
pub fn tce(
    dag: &DagSpec,
    table: &InterventionTable,
    inst: &InstanceScm,
    factual: &ScmForwardResult,
    k: usize,
    a: bool,
    mode: PropagationMode,
) -> Result<f64> {
    Ok(counterfactual_score(dag, table, inst, factual, k, a, mode)? - factual.score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptAttribution {
    pub concept: String,
    pub tce_low: f64,
    pub tce_high: f64,
    /// `|TCE(0)| + |TCE(1)|`.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub factual_score: f64,
    pub mode: PropagationMode,
    pub concepts: Vec<ConceptAttribution>,
}

/// Both interventions for every concept.
pub fn attribute(
    dag: &DagSpec,
    table: &InterventionTable,
    inst: &InstanceScm,
    mode: PropagationMode,
) -> Result<AttributionResult> {
    if table.n_concepts() != dag.n_concepts() {
        return Err(Error::Dimension("intervention table does not match DAG".into()));
    }
    let factual = inst.evaluate(dag, &[])?;
    let concepts = (0..dag.n_concepts())
        .map(|k| {
            let lo = tce(dag, table, inst, &factual, k, false, mode)?;
            let hi = tce(dag, table, inst, &factual, k, true, mode)?;
            Ok(ConceptAttribution {
                concept: dag.node_name(k).to_owned(),
                tce_low: lo,
                tce_high: hi,
                magnitude: lo.abs() + hi.abs(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AttributionResult {
        factual_score: factual.score,
        mode,
        concepts,
    })
}

/// Mean per-concept variance of TCEs over instances (rows).
pub fn diversity(tces: ArrayView2<f64>) -> Result<f64> {
    let (m, k) = tces.dim();
    if m == 0 || k == 0 {
        return Err(Error::InvalidArgument("diversity of an empty TCE matrix".into()));
    }
    let mut total = 0.0;
    for col in tces.columns() {
        let mu = col.sum() / m as f64;
        total += col.iter().map(|t| (t - mu) * (t - mu)).sum::<f64>();
    }
    Ok(total / (k * m) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{logit, sigmoid};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    /// K=2: C1 -> C2 (w=2), C1 -> Y, C2 -> Y (w=1), u = (0.8, 0.5).
    fn worked() -> (DagSpec, InstanceScm) {
        let dag = DagSpec::parse("C1 -> C2\nC1 -> Y\nC2 -> Y\n", &names(&["C1", "C2"])).unwrap();
        let mut w = vec![0.0; dag.n_edges()];
        for (i, e) in dag.edges().iter().enumerate() {
            w[i] = if e.child == 1 { 2.0 } else { 1.0 };
        }
        let inst = InstanceScm {
            u: vec![0.8, 0.5],
            edge_weights: w,
            concept_bias: vec![0.0, 0.0],
            sink_bias: 0.0,
        };
        (dag, inst)
    }

    #[test]
    fn worked_fixed_intervention() {
        let (dag, inst) = worked();
        let f = inst.evaluate(&dag, &[]).unwrap();
        let y = intervene_value(&dag, &inst, &f, 1, 0.05, PropagationMode::Fixed).unwrap();
        assert_abs_diff_eq!(y, sigmoid(logit(0.8) + logit(0.05)), epsilon = 1e-15);
        assert_abs_diff_eq!(y, 0.1739, epsilon = 1e-4);
        assert_abs_diff_eq!(y - f.score, -0.8107, epsilon = 1e-4);
    }

    #[test]
    fn worked_propagated_intervention() {
        let (dag, inst) = worked();
        let f = inst.evaluate(&dag, &[]).unwrap();
        let y = intervene_value(&dag, &inst, &f, 0, 0.95, PropagationMode::Propagate).unwrap();
        let c2 = sigmoid(2.0 * logit(0.95));
        assert_abs_diff_eq!(c2, 0.99724, epsilon = 1e-5);
        assert_abs_diff_eq!(y, sigmoid(logit(0.95) + logit(c2)), epsilon = 1e-15);
        assert_abs_diff_eq!(y, 0.99985, epsilon = 1e-5);
    }

    #[test]
    fn noop_is_exact_in_both_modes() {
        let (dag, inst) = worked();
        let f = inst.evaluate(&dag, &[]).unwrap();
        for mode in [PropagationMode::Fixed, PropagationMode::Propagate] {
            for k in 0..2 {
                let y = intervene_value(&dag, &inst, &f, k, f.concepts[k], mode).unwrap();
                assert_eq!(y - f.score, 0.0);
            }
        }
    }

    #[test]
    fn worked_magnitude() {
        let (dag, inst) = worked();
        let table = InterventionTable {
            low: vec![0.05, 0.05],
            high: vec![0.95, 0.95],
        };
        let r = attribute(&dag, &table, &inst, PropagationMode::Fixed).unwrap();
        let f = r.factual_score;
        let c1 = 0.8;
        let lo = sigmoid(logit(c1) + logit(0.05)) - f;
        let hi = sigmoid(logit(c1) + logit(0.95)) - f;
        assert_abs_diff_eq!(r.concepts[1].magnitude, lo.abs() + hi.abs(), epsilon = 1e-15);
        assert!(r.concepts.iter().all(|c| (0.0..=2.0).contains(&c.magnitude)));
    }

    #[test]
    fn zero_weights_zero_attribution() {
        let (dag, mut inst) = worked();
        inst.edge_weights.iter_mut().for_each(|w| *w = 0.0);
        let table = InterventionTable {
            low: vec![0.05, 0.1],
            high: vec![0.9, 0.95],
        };
        for mode in [PropagationMode::Fixed, PropagationMode::Propagate] {
            let r = attribute(&dag, &table, &inst, mode).unwrap();
            assert!(r.concepts.iter().all(|c| c.magnitude == 0.0));
        }
    }

    #[test]
    fn unknown_concept_and_bad_value() {
        let (dag, inst) = worked();
        let f = inst.evaluate(&dag, &[]).unwrap();
        assert!(matches!(
            intervene_value(&dag, &inst, &f, 5, 0.5, PropagationMode::Fixed),
            Err(Error::UnknownConcept(_))
        ));
        assert!(intervene_value(&dag, &inst, &f, 0, 1.5, PropagationMode::Fixed).is_err());
    }

    #[test]
    fn table_constant_column() {
        let c = Array2::from_elem((25, 1), 0.7);
        let t = build_intervention_table(c.view()).unwrap();
        assert_eq!((t.low[0], t.high[0]), (0.7, 0.7));
    }

    #[test]
    fn table_fine_grid() {
        let n = 9801;
        let c = Array2::from_shape_fn((n, 1), |(i, _)| 0.01 + 0.98 * i as f64 / (n - 1) as f64);
        let t = build_intervention_table(c.view()).unwrap();
        assert_abs_diff_eq!(t.low[0], 0.059, epsilon = 1e-3);
        assert_abs_diff_eq!(t.high[0], 0.941, epsilon = 1e-3);
    }

    #[test]
    fn table_needs_rows() {
        let c = Array2::from_elem((19, 2), 0.5);
        assert!(build_intervention_table(c.view()).is_err());
    }

    #[test]
    fn nearest_rank_small() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(nearest_rank(&v, 5.0), 1.0);
        assert_eq!(nearest_rank(&v, 95.0), 4.0);
        assert_eq!(nearest_rank(&v, 50.0), 2.0);
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(diversity(array![[0.0], [1.0]].view()).unwrap(), 0.25);
        assert_eq!(diversity(array![[0.3, -0.2], [0.3, -0.2]].view()).unwrap(), 0.0);
        assert!(diversity(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn mode_parse() {
        assert_eq!("fixed".parse::<PropagationMode>().unwrap(), PropagationMode::Fixed);
        assert_eq!("propagate".parse::<PropagationMode>().unwrap().to_string(), "propagate");
        assert!("both".parse::<PropagationMode>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn diversity_order_invariant(rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 1..20)) {
            let m = rows.len();
            let a = Array2::from_shape_fn((m, 3), |(i, j)| rows[i][j]);
            let b = Array2::from_shape_fn((m, 3), |(i, j)| rows[m - 1 - i][j]);
            let (da, db) = (diversity(a.view()).unwrap(), diversity(b.view()).unwrap());
            proptest::prop_assert!((da - db).abs() < 1e-12);
        }
    }
}
