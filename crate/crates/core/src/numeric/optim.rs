//! Plain gradient descent with decoupled L2 decay.

use super::layers::{GradientSet, ParameterSet};
use crate::error::{Error, Result};

/// Applies `p ← p − lr·(g + l2·p)` elementwise, in place.
pub fn sgd_step(params: &mut ParameterSet, grads: &GradientSet, lr: f64, l2: f64) -> Result<()> {
    if !(lr > 0.0) || !(l2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate {lr} must be > 0 and decay {l2} >= 0"
        )));
    }
    if grads.grads.len() != params.len() {
        return Err(Error::Dimension(format!(
            "{} gradients for {} parameters",
            grads.grads.len(),
            params.len()
        )));
    }
    for (i, g) in grads.grads.iter().enumerate() {
        if g.dim() != params.get(i).dim() {
            return Err(Error::Dimension(format!(
                "gradient {i} shape {:?} vs parameter {:?}",
                g.dim(),
                params.get(i).dim()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", params.names()[i])));
        }
    }
    for (i, g) in grads.grads.iter().enumerate() {
        params
            .get_mut(i)
            .zip_mut_with(g, |p, &gv| *p -= lr * (gv + l2 * *p));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(p: f64) -> ParameterSet {
        let mut ps = ParameterSet::new();
        ps.push("p", array![[p]]);
        ps
    }

    fn grad(g: f64) -> GradientSet {
        GradientSet {
            grads: vec![array![[g]]],
        }
    }

    #[test]
    fn plain_step() {
        let mut ps = single(1.0);
        sgd_step(&mut ps, &grad(0.5), 0.1, 0.0).unwrap();
        assert!((ps.get(0)[[0, 0]] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn step_with_decay() {
        let mut ps = single(1.0);
        sgd_step(&mut ps, &grad(0.5), 0.1, 0.1).unwrap();
        assert!((ps.get(0)[[0, 0]] - 0.94).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut ps = single(0.123);
        sgd_step(&mut ps, &grad(0.0), 0.3, 0.0).unwrap();
        assert_eq!(ps.get(0)[[0, 0]], 0.123);
    }

    #[test]
    fn non_finite_gradient_rejected_without_partial_update() {
        let mut ps = single(1.0);
        assert!(matches!(
            sgd_step(&mut ps, &grad(f64::INFINITY), 0.1, 0.0),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(ps.get(0)[[0, 0]], 1.0);
    }
}
