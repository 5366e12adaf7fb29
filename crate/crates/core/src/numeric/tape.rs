//! Reverse-mode differentiation over row-major matrices.
//!
//! Every value on the tape is an `Array2<f64>`; scalars are `1×1`. Nodes are
//! appended in evaluation order, so a single reverse sweep yields exact
//! gradients of a scalar output with respect to every recorded node.

use ndarray::{concatenate, s, Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// `a (B×n) + row (1×n)`, row broadcast over the batch.
    AddRow(usize, usize),
    /// `a (B×n) * row (1×n)`, row broadcast over the batch.
    MulRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulConst(usize, Array2<f64>),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Logit {
        input: usize,
        eps: f64,
    },
    Clamp {
        input: usize,
        lo: f64,
        hi: f64,
    },
    Column(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    BatchNorm {
        input: usize,
        scale: usize,
        shift: usize,
        normalized: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Mean(usize),
    Bce {
        pred: usize,
        target: Array2<f64>,
        eps: f64,
    },
    /// BCE of `σ(z)` computed from the logits `z`, clamped to `±bound`.
    BceLogits {
        logits: usize,
        target: Array2<f64>,
        bound: f64,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the output does not depend on it.
    pub fn get(&self, var: Var) -> Array2<f64> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[var.0]),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Clamp used by [`logit`].
pub const LOGIT_EPS: f64 = 1e-6;
/// Clamp applied to probabilities before the logarithms of BCE and the
/// density-ratio estimate.
pub const PROB_EPS: f64 = 1e-7;

/// `ln(p/(1-p))` with `p` clamped to `[1e-6, 1-1e-6]`.
pub fn logit(p: f64) -> f64 {
    logit_eps(p, LOGIT_EPS)
}

pub fn logit_eps(p: f64, eps: f64) -> f64 {
    let q = p.clamp(eps, 1.0 - eps);
    (q / (1.0 - q)).ln()
}

fn logit_grad(p: f64, eps: f64) -> f64 {
    if p > eps && p < 1.0 - eps {
        1.0 / (p * (1.0 - p))
    } else {
        0.0
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Array2<f64> {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[[0, 0]]
    }

    /// Records an input or parameter. Inputs and parameters are both
    /// leaves; whether a gradient is read back is up to the caller.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                va.nrows(),
                va.ncols(),
                vb.nrows(),
                vb.ncols()
            )));
        }
        let v = va.dot(vb);
        Ok(self.push(v, Op::MatMul(a.0, b.0)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::Dimension(format!(
                "row broadcast of {}x{} onto {}x{}",
                vr.nrows(),
                vr.ncols(),
                va.nrows(),
                va.ncols()
            )));
        }
        let v = va + vr;
        Ok(self.push(v, Op::AddRow(a.0, row.0)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).dim(), self.value(b).dim());
        if sa != sb {
            return Err(Error::Dimension(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::Dimension(format!(
                "row product of {}x{} with {}x{}",
                vr.nrows(),
                vr.ncols(),
                va.nrows(),
                va.ncols()
            )));
        }
        let v = va * vr;
        Ok(self.push(v, Op::MulRow(a.0, row.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a.0, b.0)))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Result<Var> {
        if self.value(a).dim() != c.dim() {
            return Err(Error::Dimension("mul_const shape".into()));
        }
        let v = self.value(a) * &c;
        Ok(self.push(v, Op::MulConst(a.0, c)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a.0, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a.0))
    }

    /// `logit` of a sigmoid node is taken as a clamp of its pre-activation:
    /// the round trip through a saturated probability would amplify
    /// rounding error by up to `e^|z|`.
    pub fn logit(&mut self, a: Var, eps: f64) -> Var {
        if let Ok(Some(z)) = self.sigmoid_input(a) {
            let bound = logit_eps(1.0 - eps, eps);
            return self.clamp(z, -bound, bound);
        }
        let v = self.value(a).mapv(|p| logit_eps(p, eps));
        self.push(v, Op::Logit { input: a.0, eps })
    }

    /// Elementwise clamp to `[lo, hi]`; zero gradient outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp { input: a.0, lo, hi })
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let va = self.value(a);
        if j >= va.ncols() {
            return Err(Error::Dimension(format!(
                "column {j} of {} columns",
                va.ncols()
            )));
        }
        let v = va.slice(s![.., j..j + 1]).to_owned();
        Ok(self.push(v, Op::Column(a.0, j)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views)
            .map_err(|e| Error::Dimension(format!("concat_cols: {e}")))?;
        Ok(self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views)
            .map_err(|e| Error::Dimension(format!("concat_rows: {e}")))?;
        Ok(self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect())))
    }

    /// Training-mode batch normalisation over rows. Returns the output and
    /// the batch mean and (biased) variance for running-statistics updates.
    pub fn batch_norm(
        &mut self,
        a: Var,
        scale: Var,
        shift: Var,
        eps: f64,
    ) -> Result<(Var, Array1<f64>, Array1<f64>)> {
        let x = self.value(a);
        let rows = x.nrows();
        if rows < 2 {
            return Err(Error::Dimension(
                "batch normalisation needs at least 2 rows".into(),
            ));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = x - &mean;
        let var = centered.mapv(|c| c * c).mean_axis(Axis(0)).expect("non-empty");
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let normalized = &centered * &inv_std;
        let out = &normalized * &self.value(scale).row(0) + &self.value(shift).row(0);
        let v = self.push(
            out,
            Op::BatchNorm {
                input: a.0,
                scale: scale.0,
                shift: shift.0,
                normalized,
                inv_std,
            },
        );
        Ok((v, mean, var))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a).mean().unwrap_or(0.0);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a.0))
    }

    /// Mean binary cross-entropy of `pred` against constant `target`.
    pub fn bce(&mut self, pred: Var, target: Array2<f64>) -> Result<Var> {
        let dim = self.value(pred).dim();
        if dim != target.dim() {
            return Err(Error::Dimension(format!(
                "bce prediction {dim:?} vs target {:?}",
                target.dim()
            )));
        }
        if let Some(z) = self.sigmoid_input(pred)? {
            let bound = logit_eps(1.0 - PROB_EPS, PROB_EPS);
            let zs = self.value(z);
            let sum: f64 = zs
                .iter()
                .zip(&target)
                .map(|(&z, &t)| {
                    let z = z.clamp(-bound, bound);
                    t * softplus(-z) + (1.0 - t) * softplus(z)
                })
                .sum();
            let loss = sum / zs.len().max(1) as f64;
            return Ok(self.push(
                Array2::from_elem((1, 1), loss),
                Op::BceLogits {
                    logits: z.0,
                    target,
                    bound,
                },
            ));
        }
        let loss = bce_value(self.value(pred).iter().copied(), target.iter().copied());
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::Bce {
                pred: pred.0,
                target,
                eps: PROB_EPS,
            },
        ))
    }

    /// Pre-activation of a sigmoid node, or of a column concatenation of
    /// sigmoid nodes, so that saturated probabilities can be avoided.
    fn sigmoid_input(&mut self, a: Var) -> Result<Option<Var>> {
        match &self.nodes[a.0].op {
            Op::Sigmoid(z) => Ok(Some(Var(*z))),
            Op::ConcatCols(parts) => {
                let zs: Option<Vec<Var>> = parts
                    .iter()
                    .map(|&p| match self.nodes[p].op {
                        Op::Sigmoid(z) => Some(Var(z)),
                        _ => None,
                    })
                    .collect();
                match zs {
                    Some(zs) => Ok(Some(self.concat_cols(&zs)?)),
                    None => Ok(None),
                }
            }
            _ => Ok(None),
        }
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.dim() != (1, 1) {
            return Err(Error::Dimension("backward needs a scalar output".into()));
        }
        if !out[[0, 0]].is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones((1, 1)));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&g);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[*r], gr);
                    accumulate(&mut grads[*a], g);
                }
                Op::MulRow(a, r) => {
                    let gr = (&g * &self.nodes[*a].value)
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    let ga = &g * &self.nodes[*r].value;
                    accumulate(&mut grads[*r], gr);
                    accumulate(&mut grads[*a], ga);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*b], g.clone());
                    accumulate(&mut grads[*a], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*b], -&g);
                    accumulate(&mut grads[*a], g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[*b].value;
                    let gb = &g * &self.nodes[*a].value;
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::MulConst(a, c) => accumulate(&mut grads[*a], &g * c),
                Op::Scale(a, s) => accumulate(&mut grads[*a], &g * *s),
                Op::Relu(a) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(&self.nodes[*a].value)
                        .for_each(|gv, &x| {
                            if x <= 0.0 {
                                *gv = 0.0
                            }
                        });
                    accumulate(&mut grads[*a], ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gv, &s| *gv *= s * (1.0 - s));
                    accumulate(&mut grads[*a], ga);
                }
                Op::Logit { input, eps } => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(&self.nodes[*input].value)
                        .for_each(|gv, &p| *gv *= logit_grad(p, *eps));
                    accumulate(&mut grads[*input], ga);
                }
                Op::Clamp { input, lo, hi } => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(&self.nodes[*input].value)
                        .for_each(|gv, &x| {
                            if x < *lo || x > *hi {
                                *gv = 0.0
                            }
                        });
                    accumulate(&mut grads[*input], ga);
                }
                Op::Column(a, j) => {
                    let mut ga = Array2::zeros(self.nodes[*a].value.dim());
                    ga.slice_mut(s![.., *j..*j + 1]).assign(&g);
                    accumulate(&mut grads[*a], ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.nodes[*p].value.ncols();
                        let gp = g.slice(s![.., offset..offset + w]).to_owned();
                        accumulate(&mut grads[*p], gp);
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let h = self.nodes[*p].value.nrows();
                        let gp = g.slice(s![offset..offset + h, ..]).to_owned();
                        accumulate(&mut grads[*p], gp);
                        offset += h;
                    }
                }
                Op::BatchNorm {
                    input,
                    scale,
                    shift,
                    normalized,
                    inv_std,
                } => {
                    let gamma = self.nodes[*scale].value.row(0).to_owned();
                    let rows = g.nrows() as f64;
                    let g_shift = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let g_scale = (&g * normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let g_norm = &g * &gamma;
                    let sum_gn = g_norm.sum_axis(Axis(0));
                    let sum_gn_x = (&g_norm * normalized).sum_axis(Axis(0));
                    let gx = (&g_norm * rows - &sum_gn - &(normalized * &sum_gn_x))
                        * &(inv_std / rows);
                    accumulate(&mut grads[*shift], g_shift);
                    accumulate(&mut grads[*scale], g_scale);
                    accumulate(&mut grads[*input], gx);
                }
                Op::Mean(a) => {
                    let shape = self.nodes[*a].value.dim();
                    let count = (shape.0 * shape.1).max(1) as f64;
                    accumulate(&mut grads[*a], Array2::from_elem(shape, g[[0, 0]] / count));
                }
                Op::Bce { pred, target, eps } => {
                    let p = &self.nodes[*pred].value;
                    let count = p.len().max(1) as f64;
                    let scale = g[[0, 0]] / count;
                    let mut gp = Array2::zeros(p.dim());
                    ndarray::Zip::from(&mut gp)
                        .and(p)
                        .and(target)
                        .for_each(|gv, &pv, &t| {
                            if pv > *eps && pv < 1.0 - *eps {
                                *gv = scale * (pv - t) / (pv * (1.0 - pv));
                            }
                        });
                    accumulate(&mut grads[*pred], gp);
                }
                Op::BceLogits { logits, target, bound } => {
                    let z = &self.nodes[*logits].value;
                    let scale = g[[0, 0]] / z.len().max(1) as f64;
                    let mut gz = Array2::zeros(z.dim());
                    ndarray::Zip::from(&mut gz)
                        .and(z)
                        .and(target)
                        .for_each(|gv, &zv, &t| {
                            if zv > -*bound && zv < *bound {
                                *gv = scale * (sigmoid(zv) - t);
                            }
                        });
                    accumulate(&mut grads[*logits], gz);
                }
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        })
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean two-term binary cross-entropy with predictions clamped to
/// `[1e-7, 1-1e-7]`.
pub fn bce_value(
    pred: impl IntoIterator<Item = f64>,
    target: impl IntoIterator<Item = f64>,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.into_iter().zip(target) {
        let q = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        sum -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn logit_values() {
        assert_eq!(logit(0.5), 0.0);
        assert!((logit(0.9) - 9f64.ln()).abs() < 1e-12);
        assert!((logit(0.0) - (-13.815509557963773)).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_inverts_logit() {
        for i in 0..=1000 {
            let p = LOGIT_EPS + (1.0 - 2.0 * LOGIT_EPS) * i as f64 / 1000.0;
            assert!((sigmoid(logit(p)) - p).abs() < 1e-9);
        }
    }

    #[test]
    fn bce_at_matching_sigmoid_has_zero_logit_gradient() {
        let mut tape = Tape::new();
        let z = tape.leaf(array![[0.3]]);
        let p = tape.sigmoid(z);
        let t = sigmoid(0.3);
        let loss = tape.bce(p, array![[t]]).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(z)[[0, 0]].abs() < 1e-15);
    }

    #[test]
    fn unused_leaf_has_exact_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(array![[2.0]]);
        let unused = tape.leaf(array![[5.0, 1.0]]);
        let m = tape.mean(a);
        let g = tape.backward(m).unwrap();
        assert_eq!(g.get(unused), Array2::<f64>::zeros((1, 2)));
        assert_eq!(g.get(a)[[0, 0]], 1.0);
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(array![[f64::NAN]]);
        assert!(matches!(tape.backward(a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(Array2::zeros((2, 3)));
        let b = tape.leaf(Array2::zeros((2, 3)));
        assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn batch_norm_gradient_matches_finite_differences() {
        let x0 = array![[0.3, -1.2], [1.5, 0.4], [-0.7, 2.2], [0.1, 0.05]];
        let weights = array![[0.7, -0.4], [1.3, 0.2], [-0.5, 0.9], [0.25, -1.1]];
        let f = |x: &Array2<f64>| -> (f64, Array2<f64>) {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let sc = tape.leaf(array![[1.2, 0.8]]);
            let sh = tape.leaf(array![[0.1, -0.3]]);
            let (y, _, _) = tape.batch_norm(xv, sc, sh, 1e-5).unwrap();
            let w = tape.mul_const(y, weights.clone()).unwrap();
            let s = tape.sigmoid(w);
            let m = tape.mean(s);
            let g = tape.backward(m).unwrap();
            (tape.scalar(m), g.get(xv))
        };
        let (_, analytic) = f(&x0);
        let h = 1e-5;
        for i in 0..4 {
            for j in 0..2 {
                let mut xp = x0.clone();
                xp[[i, j]] += h;
                let mut xm = x0.clone();
                xm[[i, j]] -= h;
                let fd = (f(&xp).0 - f(&xm).0) / (2.0 * h);
                assert!((fd - analytic[[i, j]]).abs() < 1e-8, "{i},{j}");
            }
        }
    }
}
