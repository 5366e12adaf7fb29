//! Parameter containers and feed-forward layer blocks.

use ndarray::{Array1, Array2};
use rand::distr::{Bernoulli, Distribution, Uniform};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Named, ordered collection of parameter matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.names.push(name.into());
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Array2<f64> {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.values[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array2<f64>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Records every parameter as a tape leaf, in order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    /// Bitwise fingerprint used to check that a parameter group is untouched.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over names and IEEE bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for (name, v) in self.iter() {
            name.bytes().for_each(&mut eat);
            for x in v.iter() {
                x.to_bits().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }
}

/// Gradients aligned one-to-one with a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub grads: Vec<Array2<f64>>,
}

impl GradientSet {
    pub fn collect(grads: &super::tape::Gradients, vars: &[Var]) -> Self {
        Self {
            grads: vars.iter().map(|v| grads.get(*v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
}

/// Dropout, linear transform, optional batch norm, activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBlock {
    pub in_dim: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub batch_norm: bool,
    pub activation: Activation,
}

impl LayerBlock {
    pub fn relu(in_dim: usize, out_dim: usize, dropout: f64, batch_norm: bool) -> Self {
        Self {
            in_dim,
            out_dim,
            dropout,
            batch_norm,
            activation: Activation::Relu,
        }
    }

    /// Plain linear layer followed by `activation`, no dropout or batch norm.
    pub fn head(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            dropout: 0.0,
            batch_norm: false,
            activation,
        }
    }

    fn n_params(&self) -> usize {
        if self.batch_norm {
            4
        } else {
            2
        }
    }
}

/// Builds `widths.len()` ReLU blocks starting from `in_dim`.
pub fn relu_plan(in_dim: usize, widths: &[usize], dropout: f64, batch_norm: bool) -> Vec<LayerBlock> {
    let mut prev = in_dim;
    widths
        .iter()
        .map(|&w| {
            let b = LayerBlock::relu(prev, w, dropout, batch_norm);
            prev = w;
            b
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Forward-pass mode. Training draws dropout masks from the supplied stream
/// and normalises with batch statistics.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Batch statistics observed during a training forward pass, one slot per
/// block.
pub type BnUpdates = Vec<Option<(Array1<f64>, Array1<f64>)>>;

/// A stack of [`LayerBlock`]s with its parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    blocks: Vec<LayerBlock>,
    params: ParameterSet,
    running: Vec<Option<RunningStats>>,
}

fn validate_blocks(blocks: &[LayerBlock]) -> Result<()> {
    for (i, b) in blocks.iter().enumerate() {
        if b.in_dim == 0 || b.out_dim == 0 {
            return Err(Error::Config(format!("block {i} has a zero dimension")));
        }
        if !(0.0..1.0).contains(&b.dropout) {
            return Err(Error::Config(format!(
                "block {i} dropout {} outside [0, 1)",
                b.dropout
            )));
        }
        if i > 0 && blocks[i - 1].out_dim != b.in_dim {
            return Err(Error::Config(format!(
                "block {i} expects {} inputs but block {} emits {}",
                b.in_dim,
                i - 1,
                blocks[i - 1].out_dim
            )));
        }
    }
    Ok(())
}

impl Mlp {
    /// Fan-in scaled uniform weights (±√(6/fan_in) for ReLU blocks, Glorot
    /// otherwise), zero biases, unit batch-norm scale.
    pub fn new<R: Rng + ?Sized>(blocks: Vec<LayerBlock>, rng: &mut R) -> Result<Self> {
        Self::build(blocks, |b, _| {
            let limit = match b.activation {
                Activation::Relu => (6.0 / b.in_dim as f64).sqrt(),
                _ => (6.0 / (b.in_dim + b.out_dim) as f64).sqrt(),
            };
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            Array2::from_shape_simple_fn((b.in_dim, b.out_dim), || dist.sample(&mut *rng))
        })
    }

    /// All-zero weights and biases.
    pub fn zeros(blocks: Vec<LayerBlock>) -> Result<Self> {
        Self::build(blocks, |b, _| Array2::zeros((b.in_dim, b.out_dim)))
    }

    fn build(
        blocks: Vec<LayerBlock>,
        mut weight: impl FnMut(&LayerBlock, usize) -> Array2<f64>,
    ) -> Result<Self> {
        validate_blocks(&blocks)?;
        let mut params = ParameterSet::new();
        let mut running = Vec::with_capacity(blocks.len());
        for (i, b) in blocks.iter().enumerate() {
            params.push(format!("block{i}.weight"), weight(b, i));
            params.push(format!("block{i}.bias"), Array2::zeros((1, b.out_dim)));
            if b.batch_norm {
                params.push(format!("block{i}.bn_scale"), Array2::ones((1, b.out_dim)));
                params.push(format!("block{i}.bn_shift"), Array2::zeros((1, b.out_dim)));
                running.push(Some(RunningStats {
                    mean: vec![0.0; b.out_dim],
                    var: vec![1.0; b.out_dim],
                }));
            } else {
                running.push(None);
            }
        }
        Ok(Self {
            blocks,
            params,
            running,
        })
    }

    /// Reassembles a network from stored parts, checking shapes.
    pub fn from_parts(
        blocks: Vec<LayerBlock>,
        params: ParameterSet,
        running: Vec<Option<RunningStats>>,
    ) -> Result<Self> {
        validate_blocks(&blocks)?;
        let expected: usize = blocks.iter().map(LayerBlock::n_params).sum();
        if params.len() != expected || running.len() != blocks.len() {
            return Err(Error::Dimension(format!(
                "layer plan needs {expected} parameter arrays, got {}",
                params.len()
            )));
        }
        let mut idx = 0;
        for (b, r) in blocks.iter().zip(&running) {
            let shapes: &[(usize, usize)] = if b.batch_norm {
                &[(b.in_dim, b.out_dim), (1, b.out_dim), (1, b.out_dim), (1, b.out_dim)]
            } else {
                &[(b.in_dim, b.out_dim), (1, b.out_dim)]
            };
            for s in shapes {
                if params.get(idx).dim() != *s {
                    return Err(Error::Dimension(format!(
                        "parameter `{}` has shape {:?}, expected {s:?}",
                        params.names()[idx],
                        params.get(idx).dim()
                    )));
                }
                idx += 1;
            }
            match (b.batch_norm, r) {
                (true, Some(r)) if r.mean.len() == b.out_dim && r.var.len() == b.out_dim => {}
                (false, None) => {}
                _ => return Err(Error::Dimension("running statistics mismatch".into())),
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(Self {
            blocks,
            params,
            running,
        })
    }

    pub fn blocks(&self) -> &[LayerBlock] {
        &self.blocks
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn running(&self) -> &[Option<RunningStats>] {
        &self.running
    }

    pub fn in_dim(&self) -> Option<usize> {
        self.blocks.first().map(|b| b.in_dim)
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.blocks.last().map(|b| b.out_dim)
    }

    /// Records the forward pass of a batch (`B×in`) on `tape`. `vars` must
    /// come from `self.params().register(tape)`. An empty plan is the
    /// identity.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        input: Var,
        mode: &mut Mode,
    ) -> Result<(Var, BnUpdates)> {
        if let Some(d) = self.in_dim() {
            if tape.value(input).ncols() != d {
                return Err(Error::Dimension(format!(
                    "network expects {d} inputs, got {}",
                    tape.value(input).ncols()
                )));
            }
        }
        let mut h = input;
        let mut updates = Vec::with_capacity(self.blocks.len());
        let mut p = 0;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.dropout > 0.0 {
                if let Mode::Train(rng) = mode {
                    let keep = 1.0 - b.dropout;
                    let bern = Bernoulli::new(keep).expect("valid probability");
                    let shape = tape.value(h).dim();
                    let mask = Array2::from_shape_simple_fn(shape, || {
                        if bern.sample(&mut **rng) {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    h = tape.mul_const(h, mask)?;
                }
            }
            h = tape.matmul(h, vars[p])?;
            h = tape.add_row(h, vars[p + 1])?;
            p += 2;
            let mut update = None;
            if b.batch_norm {
                let (scale, shift) = (vars[p], vars[p + 1]);
                p += 2;
                if mode.is_train() {
                    let (out, mean, var) = tape.batch_norm(h, scale, shift, BN_EPS)?;
                    update = Some((mean, var));
                    h = out;
                } else {
                    let stats = self.running[i].as_ref().expect("batch-norm block has stats");
                    let rows = tape.value(h).nrows();
                    let neg_mean = Array2::from_shape_fn((1, b.out_dim), |(_, j)| -stats.mean[j]);
                    let inv = Array2::from_shape_fn((rows, b.out_dim), |(_, j)| {
                        1.0 / (stats.var[j] + BN_EPS).sqrt()
                    });
                    let shift_leaf = tape.leaf(neg_mean);
                    h = tape.add_row(h, shift_leaf)?;
                    h = tape.mul_const(h, inv)?;
                    h = tape.mul_row(h, scale)?;
                    h = tape.add_row(h, shift)?;
                }
            }
            h = match b.activation {
                Activation::Relu => tape.relu(h),
                Activation::Sigmoid => tape.sigmoid(h),
                Activation::Identity => h,
            };
            updates.push(update);
        }
        Ok((h, updates))
    }

    /// Folds batch statistics from a training pass into the running
    /// averages.
    pub fn apply_bn_updates(&mut self, updates: &BnUpdates) {
        for (slot, upd) in self.running.iter_mut().zip(updates) {
            if let (Some(stats), Some((mean, var))) = (slot.as_mut(), upd) {
                for j in 0..stats.mean.len() {
                    stats.mean[j] = (1.0 - BN_MOMENTUM) * stats.mean[j] + BN_MOMENTUM * mean[j];
                    stats.var[j] = (1.0 - BN_MOMENTUM) * stats.var[j] + BN_MOMENTUM * var[j];
                }
            }
        }
    }

    /// Eval-mode forward over a batch of rows.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let input = tape.leaf(x.clone());
        let (out, _) = self.forward(&mut tape, &vars, input, &mut Mode::Eval)?;
        Ok(tape.value(out).clone())
    }

    /// Forward pass of a single feature vector.
    pub fn forward_vector(&self, input: &[f64], mode: &mut Mode) -> Result<Vec<f64>> {
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        if mode.is_train() && self.blocks.iter().any(|b| b.batch_norm) {
            return Err(Error::InvalidArgument(
                "training-mode batch norm needs a batch, not a single vector".into(),
            ));
        }
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let x = tape.leaf(Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row"));
        let (out, _) = self.forward(&mut tape, &vars, x, mode)?;
        Ok(tape.value(out).iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn zero_network_with_sigmoid_head_gives_half() {
        let blocks = vec![
            LayerBlock::relu(3, 4, 0.0, false),
            LayerBlock::head(4, 2, Activation::Sigmoid),
        ];
        let net = Mlp::zeros(blocks).unwrap();
        let out = net.forward_vector(&[1.0, -2.0, 3.0], &mut Mode::Eval).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_relu_passes_positive_input() {
        let mut net = Mlp::zeros(vec![LayerBlock::relu(3, 3, 0.0, false)]).unwrap();
        *net.params_mut().get_mut(0) = Array2::eye(3);
        let out = net.forward_vector(&[0.5, 2.0, 7.0], &mut Mode::Eval).unwrap();
        assert_eq!(out, vec![0.5, 2.0, 7.0]);
    }

    #[test]
    fn hand_evaluated_single_layer() {
        let mut net = Mlp::zeros(vec![LayerBlock::head(1, 1, Activation::Identity)]).unwrap();
        *net.params_mut().get_mut(0) = array![[2.0]];
        *net.params_mut().get_mut(1) = array![[-1.0]];
        let out = net.forward_vector(&[1.0], &mut Mode::Eval).unwrap();
        assert_eq!(out, vec![1.0]);
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let net = Mlp::zeros(vec![LayerBlock::relu(2, 2, 0.0, false)]).unwrap();
        assert!(matches!(
            net.forward_vector(&[1.0], &mut Mode::Eval),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            net.forward_vector(&[1.0, f64::NAN], &mut Mode::Eval),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn eval_forward_is_bit_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let blocks = vec![
            LayerBlock::relu(4, 8, 0.3, true),
            LayerBlock::head(8, 1, Activation::Sigmoid),
        ];
        let net = Mlp::new(blocks, &mut rng).unwrap();
        let x = array![[0.1, 0.2, -0.3, 1.4], [2.0, -1.0, 0.0, 0.5]];
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn train_mode_dropout_follows_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(vec![LayerBlock::relu(6, 6, 0.5, false)], &mut rng).unwrap();
        let x = vec![1.0; 6];
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            net.forward_vector(&x, &mut Mode::Train(&mut r)).unwrap()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), net.forward_vector(&x, &mut Mode::Eval).unwrap());
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(Mlp::zeros(vec![LayerBlock::relu(2, 3, 1.0, false)]).is_err());
        assert!(Mlp::zeros(vec![
            LayerBlock::relu(2, 3, 0.0, false),
            LayerBlock::relu(4, 1, 0.0, false)
        ])
        .is_err());
    }
}
