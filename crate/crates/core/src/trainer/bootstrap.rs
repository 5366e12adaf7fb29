use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate of the pool: its selection score and the metrics reported
/// if it is selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub selection_score: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over trials.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub trials: usize,
    pub draw_size: usize,
    pub pool_size: usize,
    pub metrics: BTreeMap<String, MeanStd>,
    /// How often each pool entry was selected.
    pub selections: Vec<usize>,
}

/// Each trial draws `draw_size` entries without replacement and keeps the
/// one with the highest selection score (ties to the lowest pool index);
/// reports the mean and standard deviation of the kept entries' metrics.
pub fn bootstrap_select(
    pool: &[PoolEntry],
    trials: usize,
    draw_size: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("bootstrap over an empty pool".into()));
    }
    if draw_size == 0 || draw_size > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "draw size {draw_size} must lie in 1..={}",
            pool.len()
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one trial".into()));
    }
    let keys: Vec<&String> = pool[0].metrics.keys().collect();
    if pool.iter().any(|e| e.metrics.keys().ne(keys.iter().copied())) {
        return Err(Error::InvalidArgument("pool entries report different metrics".into()));
    }
    if pool.iter().any(|e| !e.selection_score.is_finite()) {
        return Err(Error::NonFinite("selection score".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selections = vec![0; pool.len()];
    let mut picked = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut drawn = sample(&mut rng, pool.len(), draw_size).into_vec();
        drawn.sort_unstable();
        let best = drawn
            .into_iter()
            .reduce(|a, b| if pool[b].selection_score > pool[a].selection_score { b } else { a })
            .expect("draw size >= 1");
        selections[best] += 1;
        picked.push(best);
    }
    let n = trials as f64;
    let metrics = keys
        .into_iter()
        .map(|k| {
            let vals: Vec<f64> = picked.iter().map(|&i| pool[i].metrics[k]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (k.clone(), MeanStd { mean, std: var.sqrt() })
        })
        .collect();
    Ok(BootstrapReport {
        trials,
        draw_size,
        pool_size: pool.len(),
        metrics,
        selections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(score: f64, fid: f64) -> PoolEntry {
        PoolEntry {
            selection_score: score,
            metrics: BTreeMap::from([("fidelity".to_string(), fid)]),
        }
    }

    #[test]
    fn identical_pool_has_zero_spread() {
        let pool = vec![entry(1.0, 0.9); 5];
        let r = bootstrap_select(&pool, 100, 3, 1).unwrap();
        let m = r.metrics["fidelity"];
        approx::assert_abs_diff_eq!(m.mean, 0.9, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(m.std, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn full_draw_always_picks_argmax() {
        let pool: Vec<_> = (0..10).map(|i| entry(i as f64 % 7.0, i as f64)).collect();
        let r = bootstrap_select(&pool, 50, 10, 2).unwrap();
        assert_eq!(r.metrics["fidelity"], MeanStd { mean: 6.0, std: 0.0 });
        assert_eq!(r.selections[6], 50);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let pool = vec![entry(1.0, 1.0), entry(1.0, 2.0)];
        let r = bootstrap_select(&pool, 10, 2, 0).unwrap();
        assert_eq!(r.metrics["fidelity"].mean, 1.0);
    }

    #[test]
    fn errors() {
        assert!(bootstrap_select(&[], 1, 1, 0).is_err());
        assert!(bootstrap_select(&[entry(1.0, 1.0)], 1, 2, 0).is_err());
        let mut odd = entry(0.5, 0.5);
        odd.metrics.insert("other".into(), 1.0);
        assert!(bootstrap_select(&[entry(1.0, 1.0), odd], 1, 1, 0).is_err());
    }

    #[test]
    fn seeded() {
        let pool: Vec<_> = (0..30).map(|i| entry((i * 7 % 11) as f64, i as f64)).collect();
        assert_eq!(
            bootstrap_select(&pool, 200, 5, 4).unwrap(),
            bootstrap_select(&pool, 200, 5, 4).unwrap()
        );
    }
}
