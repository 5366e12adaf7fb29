//! Exogenous network `x -> u ∈ (0,1)^K` and the independence discriminator.
//!
//! The discriminator estimates the probability that a row of `u` came from
//! the joint distribution rather than from the column-shuffled product of
//! marginals, so `ln(f/(1-f))` is a density-ratio estimate whose mean over
//! joint samples approximates the KL divergence between the two.

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::tape::{logit_eps, PROB_EPS};
use crate::numeric::{
    relu_plan, sgd_step, Activation, BnUpdates, GradientSet, LayerBlock, Mlp, Mode, ParameterSet,
    Tape, Var,
};

/// `L` shared blocks followed by one tower of `N` blocks and a sigmoid head
/// per concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousNet {
    common: Mlp,
    towers: Vec<Mlp>,
    n_features: usize,
}

/// Tape handles for every parameter of an [`ExogenousNet`].
pub struct ExoVars {
    pub common: Vec<Var>,
    pub towers: Vec<Vec<Var>>,
}

pub struct ExoBnUpdates {
    common: BnUpdates,
    towers: Vec<BnUpdates>,
}

fn tower_plan(in_dim: usize, widths: &[usize], dropout: f64, batch_norm: bool) -> Vec<LayerBlock> {
    let mut blocks = relu_plan(in_dim, widths, dropout, batch_norm);
    let last = widths.last().copied().unwrap_or(in_dim);
    blocks.push(LayerBlock::head(last, 1, Activation::Sigmoid));
    blocks
}

impl ExogenousNet {
    pub fn new<R: Rng + ?Sized>(
        n_features: usize,
        n_concepts: usize,
        common_widths: &[usize],
        tower_widths: &[usize],
        dropout: f64,
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if n_features == 0 || n_concepts == 0 {
            return Err(Error::Config("exogenous net needs features and concepts".into()));
        }
        let common = Mlp::new(relu_plan(n_features, common_widths, dropout, batch_norm), rng)?;
        let tower_in = common_widths.last().copied().unwrap_or(n_features);
        let towers = (0..n_concepts)
            .map(|_| Mlp::new(tower_plan(tower_in, tower_widths, dropout, batch_norm), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            common,
            towers,
            n_features,
        })
    }

    pub fn from_parts(common: Mlp, towers: Vec<Mlp>, n_features: usize) -> Result<Self> {
        if towers.is_empty() {
            return Err(Error::Config("exogenous net needs at least one tower".into()));
        }
        let tower_in = common.out_dim().unwrap_or(n_features);
        for t in &towers {
            if t.in_dim() != Some(tower_in) || t.out_dim() != Some(1) {
                return Err(Error::Dimension("exogenous tower shape".into()));
            }
        }
        Ok(Self {
            common,
            towers,
            n_features,
        })
    }

    /// Zeroes every weight and bias; `u` becomes `0.5` everywhere.
    pub fn zeroed(mut self) -> Self {
        for ps in self.parameter_sets_mut() {
            for i in 0..ps.len() {
                if !ps.names()[i].ends_with("bn_scale") {
                    ps.get_mut(i).fill(0.0);
                }
            }
        }
        self
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_concepts(&self) -> usize {
        self.towers.len()
    }

    pub fn common(&self) -> &Mlp {
        &self.common
    }

    pub fn towers(&self) -> &[Mlp] {
        &self.towers
    }

    pub fn register(&self, tape: &mut Tape) -> ExoVars {
        ExoVars {
            common: self.common.params().register(tape),
            towers: self.towers.iter().map(|t| t.params().register(tape)).collect(),
        }
    }

    /// Records `u` (`B×K`) for the batch `x`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &ExoVars,
        x: Var,
        mode: &mut Mode,
    ) -> Result<(Var, ExoBnUpdates)> {
        if tape.value(x).ncols() != self.n_features {
            return Err(Error::Dimension(format!(
                "exogenous net expects {} features, got {}",
                self.n_features,
                tape.value(x).ncols()
            )));
        }
        let (h, common) = self.common.forward(tape, &vars.common, x, mode)?;
        let mut outs = Vec::with_capacity(self.towers.len());
        let mut towers = Vec::with_capacity(self.towers.len());
        for (t, tv) in self.towers.iter().zip(&vars.towers) {
            let (o, upd) = t.forward(tape, tv, h, mode)?;
            outs.push(o);
            towers.push(upd);
        }
        let u = tape.concat_cols(&outs)?;
        Ok((u, ExoBnUpdates { common, towers }))
    }

    pub fn apply_bn_updates(&mut self, upd: &ExoBnUpdates) {
        self.common.apply_bn_updates(&upd.common);
        for (t, u) in self.towers.iter_mut().zip(&upd.towers) {
            t.apply_bn_updates(u);
        }
    }

    pub fn gradients(&self, grads: &crate::numeric::Gradients, vars: &ExoVars) -> Vec<GradientSet> {
        std::iter::once(GradientSet::collect(grads, &vars.common))
            .chain(vars.towers.iter().map(|v| GradientSet::collect(grads, v)))
            .collect()
    }

    pub fn parameter_sets(&self) -> Vec<&ParameterSet> {
        std::iter::once(self.common.params())
            .chain(self.towers.iter().map(Mlp::params))
            .collect()
    }

    pub fn parameter_sets_mut(&mut self) -> Vec<&mut ParameterSet> {
        std::iter::once(self.common.params_mut())
            .chain(self.towers.iter_mut().map(Mlp::params_mut))
            .collect()
    }

    /// Eval-mode `u` for a batch of feature rows.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let xv = tape.leaf(x.clone());
        let (u, _) = self.forward(&mut tape, &vars, xv, &mut Mode::Eval)?;
        Ok(tape.value(u).clone())
    }

    /// Eval-mode `u` for one feature vector.
    pub fn exo_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        Ok(self.predict(&row)?.iter().copied().collect())
    }
}

/// Feed-forward classifier over `u` with a sigmoid head, plus its own
/// learning rate and update period (in epochs).
#[derive(Debug, Clone, PartialEq)]
pub struct IndependenceDiscriminator {
    net: Mlp,
    pub lr: f64,
    pub period: usize,
}

impl IndependenceDiscriminator {
    pub fn new<R: Rng + ?Sized>(
        n_concepts: usize,
        widths: &[usize],
        dropout: f64,
        lr: f64,
        period: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut blocks = relu_plan(n_concepts, widths, dropout, false);
        let last = widths.last().copied().unwrap_or(n_concepts);
        blocks.push(LayerBlock::head(last, 1, Activation::Sigmoid));
        Self::from_net(Mlp::new(blocks, rng)?, lr, period)
    }

    pub fn from_net(net: Mlp, lr: f64, period: usize) -> Result<Self> {
        if net.out_dim() != Some(1) || net.blocks().last().map(|b| b.activation) != Some(Activation::Sigmoid) {
            return Err(Error::Config("discriminator must end in a 1-unit sigmoid head".into()));
        }
        if period == 0 {
            return Err(Error::Config("discriminator period must be >= 1".into()));
        }
        Ok(Self { net, lr, period })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &ParameterSet {
        self.net.params()
    }

    /// Zeroes every weight and bias so that `f_I ≡ 0.5`.
    pub fn zeroed(mut self) -> Self {
        let ps = self.net.params_mut();
        for i in 0..ps.len() {
            ps.get_mut(i).fill(0.0);
        }
        self
    }

    /// Records `f_I(u)` with the discriminator parameters as tape leaves
    /// whose gradients are never read (main-step use).
    pub fn forward_frozen(&self, tape: &mut Tape, u: Var) -> Result<Var> {
        let vars = self.net.params().register(tape);
        let (p, _) = self.net.forward(tape, &vars, u, &mut Mode::Eval)?;
        Ok(p)
    }

    pub fn predict(&self, u: &Array2<f64>) -> Result<Array2<f64>> {
        self.net.predict(u)
    }

    /// One gradient step on BCE with label 1 for joint rows and 0 for
    /// shuffled rows. Inputs are plain arrays, so nothing upstream of `u`
    /// can receive a gradient. Returns the BCE before the step.
    pub fn step(
        &mut self,
        joint: &Array2<f64>,
        marginal: &Array2<f64>,
        lr: f64,
        mode: &mut Mode,
    ) -> Result<f64> {
        if joint.nrows() != marginal.nrows() || joint.ncols() != marginal.ncols() {
            return Err(Error::Dimension(format!(
                "joint batch {:?} vs shuffled batch {:?}",
                joint.dim(),
                marginal.dim()
            )));
        }
        let m = joint.nrows();
        let mut tape = Tape::new();
        let vars = self.net.params().register(&mut tape);
        let both = concatenate(Axis(0), &[joint.view(), marginal.view()])
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let x = tape.leaf(both);
        let (p, upd) = self.net.forward(&mut tape, &vars, x, mode)?;
        let labels = Array2::from_shape_fn((2 * m, 1), |(i, _)| if i < m { 1.0 } else { 0.0 });
        let loss = tape.bce(p, labels)?;
        let value = tape.scalar(loss);
        let grads = tape.backward(loss)?;
        let gs = GradientSet::collect(&grads, &vars);
        sgd_step(self.net.params_mut(), &gs, lr, 0.0)?;
        self.net.apply_bn_updates(&upd);
        Ok(value)
    }

    /// Discriminator BCE on a joint/shuffled pair without updating.
    pub fn loss(&self, joint: &Array2<f64>, marginal: &Array2<f64>) -> Result<f64> {
        let pj = self.predict(joint)?;
        let pm = self.predict(marginal)?;
        let preds = pj.iter().chain(pm.iter()).copied();
        let labels = std::iter::repeat_n(1.0, pj.len()).chain(std::iter::repeat_n(0.0, pm.len()));
        Ok(crate::numeric::tape::bce_value(preds, labels))
    }
}

/// Samples from the product of marginals by permuting each column of `u`
/// independently; column `k` uses stream `k` of a ChaCha generator seeded
/// with `seed`.
pub fn shuffle_batch(u: &Array2<f64>, seed: u64) -> Result<Array2<f64>> {
    let m = u.nrows();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "shuffling needs at least 2 rows, got {m}"
        )));
    }
    let mut out = u.clone();
    for k in 0..u.ncols() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        for (i, &src) in perm.iter().enumerate() {
            out[[i, k]] = u[[src, k]];
        }
    }
    Ok(out)
}

/// Mean over rows of `ln(f_I(u) / (1 - f_I(u)))`, with `f_I` clamped to
/// `[1e-7, 1-1e-7]`.
pub fn kl_estimate(disc: &IndependenceDiscriminator, u: &Array2<f64>) -> Result<f64> {
    if u.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let p = disc.predict(u)?;
    Ok(p.iter().map(|&v| logit_eps(v, PROB_EPS)).sum::<f64>() / p.len() as f64)
}

/// Tape version of [`kl_estimate`]; gradients reach `u` but the
/// discriminator parameters are never updated from it.
pub fn kl_estimate_on_tape(disc: &IndependenceDiscriminator, tape: &mut Tape, u: Var) -> Result<Var> {
    if tape.value(u).nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let p = disc.forward_frozen(tape, u)?;
    let l = tape.logit(p, PROB_EPS);
    Ok(tape.mean(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn disc_with_constant(p: f64) -> IndependenceDiscriminator {
        // single head with zero weight and bias logit(p)
        let mut net = Mlp::zeros(vec![LayerBlock::head(2, 1, Activation::Sigmoid)]).unwrap();
        net.params_mut().get_mut(1)[[0, 0]] = logit_eps(p, 0.0);
        IndependenceDiscriminator::from_net(net, 0.1, 1).unwrap()
    }

    #[test]
    fn zero_network_outputs_half() {
        let net = ExogenousNet::new(3, 4, &[5], &[3], 0.0, false, &mut rng(1))
            .unwrap()
            .zeroed();
        assert_eq!(net.exo_forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn outputs_inside_unit_interval_and_deterministic() {
        let net = ExogenousNet::new(3, 2, &[8, 8], &[4], 0.2, true, &mut rng(2)).unwrap();
        let x = [4.0, -30.0, 2.5];
        let a = net.exo_forward(&x).unwrap();
        assert_eq!(a, net.exo_forward(&x).unwrap());
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn feature_dimension_checked() {
        let net = ExogenousNet::new(3, 2, &[], &[], 0.0, false, &mut rng(2)).unwrap();
        assert!(matches!(net.exo_forward(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn shuffle_preserves_constant_rows() {
        let u = Array2::from_elem((5, 3), 0.25);
        assert_eq!(shuffle_batch(&u, 9).unwrap(), u);
    }

    #[test]
    fn shuffle_requires_two_rows() {
        assert!(shuffle_batch(&Array2::zeros((1, 3)), 0).is_err());
    }

    #[test]
    fn shuffle_two_by_two_is_one_of_four_and_reproducible() {
        let u = array![[0.1, 0.3], [0.2, 0.4]];
        let candidates: Vec<Array2<f64>> = [(false, false), (true, false), (false, true), (true, true)]
            .iter()
            .map(|&(s0, s1)| {
                let c0 = if s0 { [0.2, 0.1] } else { [0.1, 0.2] };
                let c1 = if s1 { [0.4, 0.3] } else { [0.3, 0.4] };
                array![[c0[0], c1[0]], [c0[1], c1[1]]]
            })
            .collect();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..64 {
            let out = shuffle_batch(&u, seed).unwrap();
            let which = candidates.iter().position(|c| *c == out).expect("valid outcome");
            assert_eq!(out, shuffle_batch(&u, seed).unwrap());
            seen.insert(which);
        }
        assert_eq!(seen.len(), 4, "all combinations reachable across seeds");
    }

    #[test]
    fn kl_estimate_values() {
        let u = Array2::from_elem((4, 2), 0.3);
        assert!(kl_estimate(&disc_with_constant(0.5), &u).unwrap().abs() < 1e-12);
        assert!((kl_estimate(&disc_with_constant(0.75), &u).unwrap() - 3f64.ln()).abs() < 1e-9);
        let mut saturated = disc_with_constant(0.5);
        saturated.net.params_mut().get_mut(1)[[0, 0]] = 1e3;
        let v = kl_estimate(&saturated, &u).unwrap();
        assert!((v - ((1.0 - 1e-7) / 1e-7f64).ln()).abs() < 1e-6);
        assert!(kl_estimate(&saturated, &Array2::zeros((0, 2))).is_err());
    }

    #[test]
    fn balanced_batch_at_half_has_bce_ln2() {
        let mut d = disc_with_constant(0.5);
        let j = array![[0.1, 0.9], [0.4, 0.6]];
        let m = shuffle_batch(&j, 1).unwrap();
        let v = d.step(&j, &m, 0.1, &mut Mode::Eval).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn step_decreases_loss_for_small_lr() {
        let mut d = IndependenceDiscriminator::new(2, &[6], 0.0, 0.05, 1, &mut rng(4)).unwrap();
        let j = array![[0.1, 0.1], [0.9, 0.9], [0.2, 0.25], [0.8, 0.7]];
        let m = array![[0.1, 0.9], [0.9, 0.1], [0.2, 0.7], [0.8, 0.25]];
        let before = d.loss(&j, &m).unwrap();
        d.step(&j, &m, 1e-3, &mut Mode::Eval).unwrap();
        assert!(d.loss(&j, &m).unwrap() < before);
    }

    #[test]
    fn step_row_mismatch() {
        let mut d = disc_with_constant(0.5);
        assert!(d
            .step(&Array2::zeros((2, 2)), &Array2::zeros((3, 2)), 0.1, &mut Mode::Eval)
            .is_err());
    }
}
