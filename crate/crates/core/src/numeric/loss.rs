//! Value-level losses.

use super::tape::bce_value;
use crate::error::{Error, Result};

/// Mean two-term binary cross-entropy. Targets may be probabilities.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!(
            "bce over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(bce_value(pred.iter().copied(), target.iter().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(&[0.5], &[0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let v = bce_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap();
        assert!((v - 0.10536051565782628).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn non_negative(p in 0.0f64..=1.0, t in 0.0f64..=1.0) {
            prop_assert!(bce_loss(&[p], &[t]).unwrap() >= 0.0);
        }
    }
}
