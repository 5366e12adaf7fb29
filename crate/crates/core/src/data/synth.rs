//! Seeded synthetic benchmark with a known ground-truth SCM.
//!
//! Per row: exogenous logits `e_k ~ N(0, exo_scale²)`; concept logits follow
//! the same structural form the explainer fits,
//! `z_k = b_k + e_k + Σ_j w_jk · logit(σ(z_j))`, and `c_k = σ(z_k)`. A hidden
//! nuisance factor `h ~ N(0, 1)` enters the black box but no concept:
//! `y_B = σ(b_B + Σ_j w_jB · (1 + modulation · h) · logit(c_j) + nuisance_scale · h)`,
//! so the black box's reliance on each concept varies per instance with a
//! factor the concepts do not carry. Features are a
//! fixed random linear encoding of `(z, h)` plus Gaussian noise, so the
//! black box is a function of the features alone up to that noise.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Splits, SplitTag};
use crate::dag::DagSpec;
use crate::error::{Error, Result};
use crate::numeric::{logit, sigmoid};

/// Pre-activations are clipped here so every generated probability stays
/// strictly inside `(0, 1)`.
const LOGIT_CLIP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_concepts: usize,
    /// Feature count; ignored when `identity_features` is set (then `K + 1`).
    pub n_features: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Probability of each concept-to-concept edge `i -> j`, `i < j`.
    pub edge_prob: f64,
    /// Magnitude range of concept-to-concept weights; signs are random.
    pub weight_range: [f64; 2],
    /// Magnitude range of concept-to-sink weights; signs are random.
    pub sink_weight_range: [f64; 2],
    /// Standard deviation of the concept biases.
    pub bias_scale: f64,
    /// Standard deviation of the exogenous logits.
    pub exo_scale: f64,
    /// Standard deviation of additive feature noise.
    pub feature_noise: f64,
    /// Additive weight of the hidden factor in the black box.
    pub nuisance_scale: f64,
    /// Multiplicative effect of the hidden factor on every concept-to-sink
    /// weight.
    pub modulation: f64,
    /// Features are exactly `(z_1..z_K, h)` before noise.
    pub identity_features: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_concepts: 6,
            n_features: 16,
            n_train: 12_000,
            n_validation: 4_000,
            n_test: 4_000,
            edge_prob: 0.5,
            weight_range: [0.6, 1.2],
            sink_weight_range: [0.4, 1.0],
            bias_scale: 0.3,
            exo_scale: 1.5,
            feature_noise: 0.1,
            nuisance_scale: 0.3,
            modulation: 1.0,
            identity_features: false,
            seed: 0,
        }
    }
}

/// Generated splits with the ground truth used to produce them.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub splits: Splits,
    pub dag: DagSpec,
    /// Ground-truth weight per DAG edge.
    pub edge_weights: Vec<f64>,
    pub concept_bias: Vec<f64>,
    pub sink_bias: f64,
    /// Ground-truth exogenous values `σ(e)` per split, row-aligned.
    pub exogenous: [Array2<f64>; 3],
    /// Hidden factor `h` per split, row-aligned.
    pub hidden: [Vec<f64>; 3],
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::Config(format!(
                "edge probability {} outside [0, 1]",
                self.edge_prob
            )));
        }
        if self.n_concepts == 0 || (!self.identity_features && self.n_features == 0) {
            return Err(Error::Config("need at least one concept and one feature".into()));
        }
        for r in [self.weight_range, self.sink_weight_range] {
            if !(r[0] >= 0.0 && r[0] <= r[1]) {
                return Err(Error::Config(format!("bad weight range {r:?}")));
            }
        }
        for (name, v) in [
            ("bias_scale", self.bias_scale),
            ("exo_scale", self.exo_scale),
            ("feature_noise", self.feature_noise),
            ("nuisance_scale", self.nuisance_scale),
            ("modulation", self.modulation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn concept_names(&self) -> Vec<String> {
        (1..=self.n_concepts).map(|i| format!("C{i}")).collect()
    }

    pub fn feature_dim(&self) -> usize {
        if self.identity_features {
            self.n_concepts + 1
        } else {
            self.n_features
        }
    }
}

fn signed<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    let mag = range[0] + (range[1] - range[0]) * rng.random::<f64>();
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

/// Generates the three splits and the ground truth from `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let k = spec.n_concepts;
    let names = spec.concept_names();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut named_edges: Vec<(String, String)> = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if rng.random::<f64>() < spec.edge_prob {
                named_edges.push((names[i].clone(), names[j].clone()));
            }
        }
    }
    for n in &names {
        named_edges.push((n.clone(), crate::dag::SINK.to_owned()));
    }
    let dag = DagSpec::from_named_edges(&names, &named_edges)?;
    let edge_weights: Vec<f64> = dag
        .edges()
        .iter()
        .map(|e| {
            if e.child == dag.sink() {
                signed(&mut rng, spec.sink_weight_range)
            } else {
                signed(&mut rng, spec.weight_range)
            }
        })
        .collect();
    let bias_dist = Normal::new(0.0, spec.bias_scale.max(0.0)).expect("finite scale");
    let concept_bias: Vec<f64> = (0..k).map(|_| bias_dist.sample(&mut rng)).collect();
    let sink_bias = 0.0;

    let d = spec.feature_dim();
    let encoding: Array2<f64> = if spec.identity_features {
        Array2::eye(k + 1)
    } else {
        let scale = 1.0 / ((k + 1) as f64).sqrt();
        Array2::from_shape_simple_fn((k + 1, d), || {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        })
    };

    let order = dag.concept_order()?;
    let generate = |m: usize, tag: SplitTag, stream: u64| -> Result<(Dataset, Array2<f64>, Vec<f64>)> {
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        r.set_stream(stream);
        let mut feats = Array2::zeros((m, d));
        let mut concepts = Array2::zeros((m, k));
        let mut exo = Array2::zeros((m, k));
        let mut scores = Vec::with_capacity(m);
        let mut labels = Vec::with_capacity(m);
        let mut hidden = Vec::with_capacity(m);
        let mut latent = vec![0.0; k + 1];
        let mut c = vec![0.0; k];
        for i in 0..m {
            let e: Vec<f64> = (0..k)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut r);
                    v * spec.exo_scale
                })
                .collect();
            for &node in &order {
                let mut z = concept_bias[node] + e[node];
                for &ei in dag.incoming(node) {
                    z += edge_weights[ei] * logit(c[dag.edges()[ei].parent]);
                }
                let z = z.clamp(-LOGIT_CLIP, LOGIT_CLIP);
                latent[node] = z;
                c[node] = sigmoid(z);
            }
            let h: f64 = StandardNormal.sample(&mut r);
            latent[k] = h;
            hidden.push(h);
            let mut y = sink_bias + spec.nuisance_scale * h;
            let gain = 1.0 + spec.modulation * h;
            for &ei in dag.incoming(dag.sink()) {
                y += gain * edge_weights[ei] * logit(c[dag.edges()[ei].parent]);
            }
            let y_b = sigmoid(y.clamp(-LOGIT_CLIP, LOGIT_CLIP));
            for j in 0..d {
                let noise: f64 = StandardNormal.sample(&mut r);
                feats[[i, j]] = (0..=k).map(|l| latent[l] * encoding[[l, j]]).sum::<f64>()
                    + spec.feature_noise * noise;
            }
            for j in 0..k {
                concepts[[i, j]] = c[j];
                exo[[i, j]] = sigmoid(e[j]);
            }
            scores.push(y_b);
            labels.push(r.random::<f64>() < y_b);
        }
        let mut ds = Dataset::new(
            feats,
            (0..d).map(|j| format!("f{j}")).collect(),
            scores,
            concepts,
            names.clone(),
            Some(labels),
        )?;
        ds.split = tag;
        Ok((ds, exo, hidden))
    };

    let (train, e0, h0) = generate(spec.n_train, SplitTag::Train, 1)?;
    let (validation, e1, h1) = generate(spec.n_validation, SplitTag::Validation, 2)?;
    let (test, e2, h2) = generate(spec.n_test, SplitTag::Test, 3)?;
    Ok(SynthOutput {
        splits: Splits {
            train,
            validation,
            test,
        },
        dag,
        edge_weights,
        concept_bias,
        sink_bias,
        exogenous: [e0, e1, e2],
        hidden: [h0, h1, h2],
    })
}
