//! Concept-distillation SCM.
//!
//! Every edge `j -> k` contributes a partial assignment
//! `m_jk = logit(ĉ_j) · w_jk`, where the weight is either a learned constant
//! (global variant) or the output of a weighting network over `(u, y_B)`
//! (local variant). Concepts are evaluated in topological order as
//! `ĉ_k = σ(b_k + logit(u_k) + Σ_j m_jk)`; the sink has no exogenous term,
//! `ŷ_B = σ(b_B + Σ_j m_jB)`.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dag::DagSpec;
use crate::error::{Error, Result};
use crate::numeric::{
    bce_loss, logit, relu_plan, sigmoid, Activation, BnUpdates, GradientSet, Gradients,
    LayerBlock, Mlp, Mode, ParameterSet, Tape, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Global,
    Local,
}

/// Source of per-edge weights.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeWeighting {
    /// One `1×E` array `edge_weights`.
    Global(ParameterSet),
    /// A shared trunk with one linear output per edge.
    SharedTrunk(Mlp),
    /// An independent network per edge, each with a single output.
    PerEdge(Vec<Mlp>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmParameters {
    weighting: EdgeWeighting,
    /// `concept_bias` (`1×K`) and `sink_bias` (`1×1`) when enabled.
    biases: Option<ParameterSet>,
    use_blackbox_score: bool,
    n_concepts: usize,
    n_edges: usize,
}

/// Network layout for the local weighting functions.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPlan {
    pub widths: Vec<usize>,
    pub dropout: f64,
    pub batch_norm: bool,
    pub per_edge: bool,
}

/// Values of one structural evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmForwardResult {
    /// `ĉ_k` indexed by concept.
    pub concepts: Vec<f64>,
    /// `ŷ_B`.
    pub score: f64,
    /// Realised weight per edge.
    pub edge_weights: Vec<f64>,
    /// Partial assignment `m` per edge.
    pub partials: Vec<f64>,
}

pub struct ScmVars {
    weighting: Vec<Vec<Var>>,
    biases: Option<Vec<Var>>,
}

/// Tape handles produced by [`ScmParameters::forward_tape`].
pub struct ScmTapeOutput {
    /// `B×K`.
    pub concepts: Var,
    /// `B×1`.
    pub score: Var,
    /// `B×E`.
    pub weights: Var,
}

fn biases_set(k: usize) -> ParameterSet {
    let mut b = ParameterSet::new();
    b.push("concept_bias", Array2::zeros((1, k)));
    b.push("sink_bias", Array2::zeros((1, 1)));
    b
}

impl ScmParameters {
    /// Global variant with all edge weights and biases at zero.
    pub fn global(dag: &DagSpec, biases: bool) -> Self {
        let mut w = ParameterSet::new();
        w.push("edge_weights", Array2::zeros((1, dag.n_edges())));
        Self {
            weighting: EdgeWeighting::Global(w),
            biases: biases.then(|| biases_set(dag.n_concepts())),
            use_blackbox_score: false,
            n_concepts: dag.n_concepts(),
            n_edges: dag.n_edges(),
        }
    }

    /// Local variant. Hidden layers are randomly initialised; the output
    /// layer starts at zero, so every realised weight begins at the output
    /// bias and instance dependence is learned from there.
    pub fn local<R: Rng + ?Sized>(
        dag: &DagSpec,
        plan: &LocalPlan,
        biases: bool,
        use_blackbox_score: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let k = dag.n_concepts();
        let e = dag.n_edges();
        if e == 0 {
            return Err(Error::Config("local weighting needs at least one edge".into()));
        }
        let in_dim = k + usize::from(use_blackbox_score);
        let last = plan.widths.last().copied().unwrap_or(in_dim);
        let trunk = |out: usize, rng: &mut R| -> Result<Mlp> {
            let mut blocks = relu_plan(in_dim, &plan.widths, plan.dropout, plan.batch_norm);
            blocks.push(LayerBlock::head(last, out, Activation::Identity));
            let mut m = Mlp::new(blocks, rng)?;
            let head = m.params().len() - 2;
            m.params_mut().get_mut(head).fill(0.0);
            Ok(m)
        };
        let weighting = if plan.per_edge {
            EdgeWeighting::PerEdge((0..e).map(|_| trunk(1, rng)).collect::<Result<_>>()?)
        } else {
            EdgeWeighting::SharedTrunk(trunk(e, rng)?)
        };
        Ok(Self {
            weighting,
            biases: biases.then(|| biases_set(k)),
            use_blackbox_score,
            n_concepts: k,
            n_edges: e,
        })
    }

    pub fn from_parts(
        dag: &DagSpec,
        weighting: EdgeWeighting,
        biases: Option<ParameterSet>,
        use_blackbox_score: bool,
    ) -> Result<Self> {
        let (k, e) = (dag.n_concepts(), dag.n_edges());
        let in_dim = k + usize::from(use_blackbox_score);
        match &weighting {
            EdgeWeighting::Global(w) => {
                if w.len() != 1 || w.get(0).dim() != (1, e) {
                    return Err(Error::Dimension("global edge weights must be 1×E".into()));
                }
            }
            EdgeWeighting::SharedTrunk(m) => {
                if m.in_dim() != Some(in_dim) || m.out_dim() != Some(e) {
                    return Err(Error::Dimension("weighting trunk shape".into()));
                }
            }
            EdgeWeighting::PerEdge(ms) => {
                if ms.len() != e
                    || ms.iter().any(|m| m.in_dim() != Some(in_dim) || m.out_dim() != Some(1))
                {
                    return Err(Error::Dimension("per-edge weighting shape".into()));
                }
            }
        }
        if let Some(b) = &biases {
            if b.len() != 2 || b.get(0).dim() != (1, k) || b.get(1).dim() != (1, 1) {
                return Err(Error::Dimension("bias shapes".into()));
            }
        }
        Ok(Self {
            weighting,
            biases,
            use_blackbox_score,
            n_concepts: k,
            n_edges: e,
        })
    }

    pub fn variant(&self) -> Variant {
        match self.weighting {
            EdgeWeighting::Global(_) => Variant::Global,
            _ => Variant::Local,
        }
    }

    pub fn weighting(&self) -> &EdgeWeighting {
        &self.weighting
    }

    pub fn biases(&self) -> Option<&ParameterSet> {
        self.biases.as_ref()
    }

    pub fn uses_blackbox_score(&self) -> bool {
        self.use_blackbox_score
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Sets a global edge weight. Fails on the local variant.
    pub fn set_global_weight(&mut self, edge: usize, w: f64) -> Result<()> {
        match &mut self.weighting {
            EdgeWeighting::Global(ps) if edge < self.n_edges => {
                ps.get_mut(0)[[0, edge]] = w;
                Ok(())
            }
            _ => Err(Error::InvalidArgument("not a global edge weight".into())),
        }
    }

    pub fn set_concept_bias(&mut self, k: usize, b: f64) -> Result<()> {
        match &mut self.biases {
            Some(ps) if k < self.n_concepts => {
                ps.get_mut(0)[[0, k]] = b;
                Ok(())
            }
            _ => Err(Error::InvalidArgument("no such concept bias".into())),
        }
    }

    pub fn set_sink_bias(&mut self, b: f64) -> Result<()> {
        match &mut self.biases {
            Some(ps) => {
                ps.get_mut(1)[[0, 0]] = b;
                Ok(())
            }
            None => Err(Error::InvalidArgument("biases disabled".into())),
        }
    }

    pub fn concept_biases(&self) -> Vec<f64> {
        match &self.biases {
            Some(ps) => ps.get(0).iter().copied().collect(),
            None => vec![0.0; self.n_concepts],
        }
    }

    pub fn sink_bias(&self) -> f64 {
        self.biases.as_ref().map_or(0.0, |ps| ps.get(1)[[0, 0]])
    }

    pub fn parameter_sets(&self) -> Vec<&ParameterSet> {
        let mut out: Vec<&ParameterSet> = match &self.weighting {
            EdgeWeighting::Global(ps) => vec![ps],
            EdgeWeighting::SharedTrunk(m) => vec![m.params()],
            EdgeWeighting::PerEdge(ms) => ms.iter().map(Mlp::params).collect(),
        };
        out.extend(self.biases.as_ref());
        out
    }

    pub fn parameter_sets_mut(&mut self) -> Vec<&mut ParameterSet> {
        let mut out: Vec<&mut ParameterSet> = match &mut self.weighting {
            EdgeWeighting::Global(ps) => vec![ps],
            EdgeWeighting::SharedTrunk(m) => vec![m.params_mut()],
            EdgeWeighting::PerEdge(ms) => ms.iter_mut().map(Mlp::params_mut).collect(),
        };
        out.extend(self.biases.as_mut());
        out
    }

    pub fn register(&self, tape: &mut Tape) -> ScmVars {
        let weighting = match &self.weighting {
            EdgeWeighting::Global(ps) => vec![ps.register(tape)],
            EdgeWeighting::SharedTrunk(m) => vec![m.params().register(tape)],
            EdgeWeighting::PerEdge(ms) => ms.iter().map(|m| m.params().register(tape)).collect(),
        };
        ScmVars {
            weighting,
            biases: self.biases.as_ref().map(|b| b.register(tape)),
        }
    }

    pub fn gradients(&self, grads: &Gradients, vars: &ScmVars) -> Vec<GradientSet> {
        let mut out: Vec<GradientSet> = vars
            .weighting
            .iter()
            .map(|v| GradientSet::collect(grads, v))
            .collect();
        out.extend(vars.biases.as_ref().map(|v| GradientSet::collect(grads, v)));
        out
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdates]) {
        match &mut self.weighting {
            EdgeWeighting::Global(_) => {}
            EdgeWeighting::SharedTrunk(m) => {
                if let Some(u) = updates.first() {
                    m.apply_bn_updates(u)
                }
            }
            EdgeWeighting::PerEdge(ms) => {
                for (m, u) in ms.iter_mut().zip(updates) {
                    m.apply_bn_updates(u);
                }
            }
        }
    }

    fn weights_on_tape(
        &self,
        tape: &mut Tape,
        vars: &ScmVars,
        u: Var,
        y_b: Option<Var>,
        mode: &mut Mode,
    ) -> Result<(Var, Vec<BnUpdates>)> {
        let rows = tape.value(u).nrows();
        match &self.weighting {
            EdgeWeighting::Global(_) => {
                let ones = tape.leaf(Array2::ones((rows, 1)));
                Ok((tape.matmul(ones, vars.weighting[0][0])?, Vec::new()))
            }
            local => {
                let input = if self.use_blackbox_score {
                    let y = y_b.ok_or_else(|| {
                        Error::InvalidArgument("black-box score required by weighting functions".into())
                    })?;
                    tape.concat_cols(&[u, y])?
                } else {
                    u
                };
                match local {
                    EdgeWeighting::SharedTrunk(m) => {
                        let (w, upd) = m.forward(tape, &vars.weighting[0], input, mode)?;
                        Ok((w, vec![upd]))
                    }
                    EdgeWeighting::PerEdge(ms) => {
                        let mut cols = Vec::with_capacity(ms.len());
                        let mut upds = Vec::with_capacity(ms.len());
                        for (m, v) in ms.iter().zip(&vars.weighting) {
                            let (w, upd) = m.forward(tape, v, input, mode)?;
                            cols.push(w);
                            upds.push(upd);
                        }
                        Ok((tape.concat_cols(&cols)?, upds))
                    }
                    EdgeWeighting::Global(_) => unreachable!(),
                }
            }
        }
    }

    /// Records the structural evaluation of a batch. `u` is `B×K`, `y_b`
    /// (when given) `B×1`.
    pub fn forward_tape(
        &self,
        dag: &DagSpec,
        tape: &mut Tape,
        vars: &ScmVars,
        u: Var,
        y_b: Option<Var>,
        mode: &mut Mode,
    ) -> Result<(ScmTapeOutput, Vec<BnUpdates>)> {
        self.check_dag(dag)?;
        if tape.value(u).ncols() != self.n_concepts {
            return Err(Error::Dimension(format!(
                "u has {} columns, DAG has {} concepts",
                tape.value(u).ncols(),
                self.n_concepts
            )));
        }
        let rows = tape.value(u).nrows();
        let (weights, upd) = self.weights_on_tape(tape, vars, u, y_b, mode)?;
        let logit_u = tape.logit(u, crate::numeric::tape::LOGIT_EPS);

        let mut concept_vars: Vec<Option<Var>> = vec![None; self.n_concepts];
        let mut concept_logits: Vec<Option<Var>> = vec![None; self.n_concepts];
        let assign = |tape: &mut Tape,
                          node: usize,
                          base: Var,
                          concept_logits: &[Option<Var>]|
         -> Result<Var> {
            let mut pre = base;
            for &e in dag.incoming(node) {
                let parent = dag.edges()[e].parent;
                let lp = concept_logits[parent].expect("parents precede children");
                let w = tape.column(weights, e)?;
                let m = tape.mul(lp, w)?;
                pre = tape.add(pre, m)?;
            }
            Ok(tape.sigmoid(pre))
        };

        for k in dag.concept_order()? {
            let mut base = tape.column(logit_u, k)?;
            if let Some(b) = &vars.biases {
                let bk = tape.column(b[0], k)?;
                base = tape.add_row(base, bk)?;
            }
            let c = assign(tape, k, base, &concept_logits)?;
            concept_logits[k] = Some(tape.logit(c, crate::numeric::tape::LOGIT_EPS));
            concept_vars[k] = Some(c);
        }
        let mut base = tape.leaf(Array2::zeros((rows, 1)));
        if let Some(b) = &vars.biases {
            base = tape.add_row(base, b[1])?;
        }
        let score = assign(tape, dag.sink(), base, &concept_logits)?;
        let cols: Vec<Var> = concept_vars.into_iter().map(|c| c.expect("all concepts")).collect();
        let concepts = tape.concat_cols(&cols)?;
        Ok((
            ScmTapeOutput {
                concepts,
                score,
                weights,
            },
            upd,
        ))
    }

    fn check_dag(&self, dag: &DagSpec) -> Result<()> {
        if dag.n_concepts() != self.n_concepts || dag.n_edges() != self.n_edges {
            return Err(Error::Dimension(format!(
                "SCM parameters for {} concepts / {} edges, DAG has {} / {}",
                self.n_concepts,
                self.n_edges,
                dag.n_concepts(),
                dag.n_edges()
            )));
        }
        Ok(())
    }

    /// Realised per-edge weights for one instance.
    pub fn edge_weights(&self, u: &[f64], y_b: Option<f64>) -> Result<Vec<f64>> {
        let u2 = Array2::from_shape_vec((1, u.len()), u.to_vec()).expect("row");
        let y2 = y_b.map(|y| Array2::from_elem((1, 1), y));
        Ok(self.edge_weights_batch(&u2, y2.as_ref())?.iter().copied().collect())
    }

    /// Realised weights (`B×E`) for a batch in eval mode.
    pub fn edge_weights_batch(&self, u: &Array2<f64>, y_b: Option<&Array2<f64>>) -> Result<Array2<f64>> {
        if u.ncols() != self.n_concepts {
            return Err(Error::Dimension("u width".into()));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let uv = tape.leaf(u.clone());
        let yv = y_b.map(|y| tape.leaf(y.clone()));
        let (w, _) = self.weights_on_tape(&mut tape, &vars, uv, yv, &mut Mode::Eval)?;
        Ok(tape.value(w).clone())
    }
}

/// One instance's SCM after abduction: exogenous values, realised edge
/// weights and biases. Everything needed to evaluate or intervene without
/// touching the networks again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScm {
    pub u: Vec<f64>,
    pub edge_weights: Vec<f64>,
    pub concept_bias: Vec<f64>,
    pub sink_bias: f64,
}

impl InstanceScm {
    /// Evaluates every structural assignment in topological order.
    /// `overrides[k] = Some(v)` severs the incoming edges of concept `k`
    /// and fixes its value to `v`.
    pub fn evaluate(&self, dag: &DagSpec, overrides: &[Option<f64>]) -> Result<ScmForwardResult> {
        let k = dag.n_concepts();
        if self.u.len() != k || self.edge_weights.len() != dag.n_edges() || self.concept_bias.len() != k {
            return Err(Error::Dimension("instance SCM does not match DAG".into()));
        }
        let mut concepts = vec![f64::NAN; k];
        let mut partials = vec![0.0; dag.n_edges()];
        for node in dag.concept_order()? {
            if let Some(Some(v)) = overrides.get(node) {
                concepts[node] = *v;
                continue;
            }
            let mut pre = self.concept_bias[node] + logit(self.u[node]);
            for &e in dag.incoming(node) {
                let m = logit(concepts[dag.edges()[e].parent]) * self.edge_weights[e];
                partials[e] = m;
                pre += m;
            }
            concepts[node] = sigmoid(pre);
        }
        let mut pre = self.sink_bias;
        for &e in dag.incoming(dag.sink()) {
            let m = logit(concepts[dag.edges()[e].parent]) * self.edge_weights[e];
            partials[e] = m;
            pre += m;
        }
        Ok(ScmForwardResult {
            concepts,
            score: sigmoid(pre),
            edge_weights: self.edge_weights.clone(),
            partials,
        })
    }

    /// The sink assignment alone, given concept values.
    pub fn sink_score(&self, dag: &DagSpec, concepts: &[f64]) -> f64 {
        // same accumulation order as `evaluate`, so a no-op substitution is exact
        let mut pre = self.sink_bias;
        for &e in dag.incoming(dag.sink()) {
            pre += logit(concepts[dag.edges()[e].parent]) * self.edge_weights[e];
        }
        sigmoid(pre)
    }
}

/// `logit(ĉ_j) · weight`.
pub fn partial_assignment(parent_value: f64, weight: f64) -> f64 {
    logit(parent_value) * weight
}

/// Abducts the instance SCM (realised weights for this `u`, `y_B`).
pub fn abduct(params: &ScmParameters, u: &[f64], y_b: Option<f64>) -> Result<InstanceScm> {
    if u.len() != params.n_concepts {
        return Err(Error::Dimension(format!(
            "u has {} entries, expected {}",
            u.len(),
            params.n_concepts
        )));
    }
    Ok(InstanceScm {
        u: u.to_vec(),
        edge_weights: params.edge_weights(u, y_b)?,
        concept_bias: params.concept_biases(),
        sink_bias: params.sink_bias(),
    })
}

/// Structural evaluation of one instance.
pub fn scm_forward(
    dag: &DagSpec,
    params: &ScmParameters,
    u: &[f64],
    y_b: Option<f64>,
) -> Result<ScmForwardResult> {
    params.check_dag(dag)?;
    abduct(params, u, y_b)?.evaluate(dag, &[])
}

/// `γ·L_E + β·L_C + L_D` with `L_C`, `L_D` the mean BCE of concepts and
/// score.
pub fn combined_loss(
    concepts_hat: &[f64],
    concepts: &[f64],
    score_hat: &[f64],
    score: &[f64],
    independence: f64,
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    let lc = bce_loss(concepts_hat, concepts)?;
    let ld = bce_loss(score_hat, score)?;
    combine_losses(independence, lc, ld, beta, gamma)
}

/// `γ·L_E + β·L_C + L_D` from precomputed terms.
pub fn combine_losses(independence: f64, concept: f64, distill: f64, beta: f64, gamma: f64) -> Result<f64> {
    if beta < 0.0 || gamma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "loss weights must be non-negative (beta {beta}, gamma {gamma})"
        )));
    }
    Ok(gamma * independence + beta * concept + distill)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn worked() -> (DagSpec, ScmParameters) {
        let dag = DagSpec::parse("C1 -> C2\nC1 -> Y\nC2 -> Y", &names(&["C1", "C2"])).unwrap();
        let mut p = ScmParameters::global(&dag, true);
        p.set_global_weight(0, 2.0).unwrap();
        p.set_global_weight(1, 1.0).unwrap();
        p.set_global_weight(2, 1.0).unwrap();
        (dag, p)
    }

    #[test]
    fn partial_assignment_values() {
        assert_eq!(partial_assignment(0.5, 7.0), 0.0);
        assert!((partial_assignment(0.8, 2.0) - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(partial_assignment(0.3, 0.0), 0.0);
    }

    #[test]
    fn worked_example() {
        let (dag, p) = worked();
        let r = scm_forward(&dag, &p, &[0.8, 0.5], None).unwrap();
        assert!((r.concepts[0] - 0.8).abs() < 1e-12);
        assert!((r.partials[0] - 2.772588722239781).abs() < 1e-12);
        assert!((r.concepts[1] - 0.9411764705882353).abs() < 1e-12);
        assert!((r.score - sigmoid(4f64.ln() + 2.0 * 4f64.ln())).abs() < 1e-12);
        assert!((r.score - 0.9846).abs() < 1e-4);
    }

    #[test]
    fn root_and_isolated_concepts_copy_u() {
        let dag = DagSpec::parse("A -> Y", &names(&["A", "B"])).unwrap();
        let p = ScmParameters::global(&dag, true);
        let r = scm_forward(&dag, &p, &[0.7, 0.3], None).unwrap();
        assert!((r.concepts[0] - 0.7).abs() < 1e-12);
        assert!((r.concepts[1] - 0.3).abs() < 1e-12);
        assert_eq!(r.score, 0.5);
    }

    #[test]
    fn tape_and_value_paths_agree() {
        let dag = DagSpec::parse("A -> B\nA -> Y\nB -> Y\nC -> B", &names(&["A", "B", "C"])).unwrap();
        let plan = LocalPlan {
            widths: vec![5],
            dropout: 0.0,
            batch_norm: false,
            per_edge: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = ScmParameters::local(&dag, &plan, true, true, &mut rng).unwrap();
        p.set_concept_bias(1, 0.4).unwrap();
        p.set_sink_bias(-0.2).unwrap();
        let u = Array2::from_shape_vec((2, 3), vec![0.2, 0.6, 0.9, 0.45, 0.1, 0.3]).unwrap();
        let y = Array2::from_shape_vec((2, 1), vec![0.3, 0.8]).unwrap();
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let uv = tape.leaf(u.clone());
        let yv = tape.leaf(y.clone());
        let (out, _) = p.forward_tape(&dag, &mut tape, &vars, uv, Some(yv), &mut Mode::Eval).unwrap();
        for i in 0..2 {
            let r = scm_forward(&dag, &p, &u.row(i).to_vec(), Some(y[[i, 0]])).unwrap();
            for k in 0..3 {
                assert!((tape.value(out.concepts)[[i, k]] - r.concepts[k]).abs() < 1e-12);
            }
            assert!((tape.value(out.score)[[i, 0]] - r.score).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_local_trunk_gives_zero_weights() {
        let dag = DagSpec::trivial(&names(&["A", "B"])).unwrap();
        let plan = LocalPlan {
            widths: vec![4],
            dropout: 0.0,
            batch_norm: false,
            per_edge: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ScmParameters::local(&dag, &plan, true, true, &mut rng).unwrap();
        for ps in p.parameter_sets_mut() {
            for i in 0..ps.len() {
                ps.get_mut(i).fill(0.0);
            }
        }
        assert_eq!(p.edge_weights(&[0.3, 0.9], Some(0.2)).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn blackbox_score_excluded_when_disabled() {
        let dag = DagSpec::trivial(&names(&["A", "B"])).unwrap();
        let plan = LocalPlan {
            widths: vec![4],
            dropout: 0.0,
            batch_norm: false,
            per_edge: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ScmParameters::local(&dag, &plan, true, false, &mut rng).unwrap();
        let u = [0.3, 0.6];
        assert_eq!(
            p.edge_weights(&u, Some(0.1)).unwrap(),
            p.edge_weights(&u, Some(0.9)).unwrap()
        );
        let with_score = ScmParameters::local(&dag, &plan, true, true, &mut rng).unwrap();
        assert!(with_score.edge_weights(&u, None).is_err());
    }

    #[test]
    fn global_weights_do_not_depend_on_inputs() {
        let (_, p) = worked();
        assert_eq!(
            p.edge_weights(&[0.1, 0.2], Some(0.3)).unwrap(),
            p.edge_weights(&[0.9, 0.5], None).unwrap()
        );
    }

    #[test]
    fn combined_loss_weights() {
        let lc = bce_loss(&[0.7], &[1.0]).unwrap();
        let ld = bce_loss(&[0.4], &[0.0]).unwrap();
        assert!((combined_loss(&[0.7], &[1.0], &[0.4], &[0.0], 5.0, 0.0, 0.0).unwrap() - ld).abs() < 1e-15);
        let b1 = combined_loss(&[0.7], &[1.0], &[0.4], &[0.0], 1.0, 1.0, 0.1).unwrap();
        let b2 = combined_loss(&[0.7], &[1.0], &[0.4], &[0.0], 1.0, 2.0, 0.1).unwrap();
        assert!((b2 - b1 - lc).abs() < 1e-12);
        assert!(combined_loss(&[0.7], &[1.0], &[0.4], &[0.0], 1.0, -1.0, 0.0).is_err());
        assert!((combine_losses(1.0, 2.0, 3.0, 0.5, 0.1).unwrap() - 4.1).abs() < 1e-12);
    }

    #[test]
    fn mismatched_dag_rejected() {
        let (_, p) = worked();
        let other = DagSpec::trivial(&names(&["C1", "C2"])).unwrap();
        assert!(scm_forward(&other, &p, &[0.5, 0.5], None).is_err());
    }
}
