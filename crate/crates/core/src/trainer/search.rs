use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use toml::{Table, Value};

use super::{fit, TrainConfig, TrainedRun};
use crate::dag::DagSpec;
use crate::data::Splits;
use crate::error::{Error, Result};

/// Keys sampled on a log scale when given as a range.
const LOG_SCALE: &[&str] = &["lr", "disc_lr", "l2"];

/// Flat search space over [`TrainConfig`] keys.
///
/// A two-element numeric array for a numeric key is a range (integers
/// inclusive, log-uniform for `lr`, `disc_lr` and `l2`, uniform
/// otherwise); any other array is a list of choices; a scalar is fixed.
/// `data`, `dag` and `seed` (the master seed) are carried alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    keys: Table,
    pub data: Option<String>,
    pub dag: Option<String>,
    pub seed: u64,
}

impl SearchSpace {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut keys: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        let take_str = |keys: &mut Table, k: &str| -> Result<Option<String>> {
            match keys.remove(k) {
                None => Ok(None),
                Some(Value::String(s)) => Ok(Some(s)),
                Some(_) => Err(Error::Config(format!("`{k}` must be a string"))),
            }
        };
        let data = take_str(&mut keys, "data")?;
        let dag = take_str(&mut keys, "dag")?;
        let seed = match keys.remove("seed") {
            None => 0,
            Some(Value::Integer(s)) if s >= 0 => s as u64,
            Some(_) => return Err(Error::Config("`seed` must be a non-negative integer".into())),
        };
        if keys.is_empty() {
            return Err(Error::Config("search space has no configuration keys".into()));
        }
        let space = Self {
            keys,
            data,
            dag,
            seed,
        };
        // a first draw surfaces unknown keys and malformed ranges early
        space.sample(&mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(space)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.keys.keys().map(String::as_str)
    }

    /// One configuration; its `seed` is drawn from `rng` as well.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrainConfig> {
        let base = Value::try_from(TrainConfig::default()).expect("config serialises");
        let Value::Table(mut table) = base else {
            unreachable!("config is a table")
        };
        for (key, spec) in &self.keys {
            let default = table
                .get(key)
                .ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))?;
            let value = sample_value(key, spec, default, rng)?;
            table.insert(key.clone(), value);
        }
        table.insert("seed".into(), Value::Integer((rng.random::<u64>() >> 1) as i64));
        let cfg: TrainConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `n` configurations from the master seed.
    pub fn sample_configs(&self, n: usize) -> Result<Vec<TrainConfig>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Integer(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

fn sample_value<R: Rng + ?Sized>(key: &str, spec: &Value, default: &Value, rng: &mut R) -> Result<Value> {
    let Value::Array(items) = spec else {
        return Ok(spec.clone());
    };
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` has no choices")));
    }
    let numeric_key = matches!(default, Value::Integer(_) | Value::Float(_));
    let bounds = (items.len() == 2)
        .then(|| Some((as_number(&items[0])?, as_number(&items[1])?)))
        .flatten();
    match (numeric_key, bounds) {
        (true, Some((lo, hi))) => {
            if !(lo <= hi) {
                return Err(Error::Config(format!("`{key}` range [{lo}, {hi}] is empty")));
            }
            if matches!(default, Value::Integer(_)) {
                let (lo, hi) = (lo.round() as i64, hi.round() as i64);
                Ok(Value::Integer(rng.random_range(lo..=hi)))
            } else if LOG_SCALE.contains(&key) {
                if !(lo > 0.0) {
                    return Err(Error::Config(format!("`{key}` log range needs positive bounds")));
                }
                let t: f64 = rng.random();
                Ok(Value::Float((lo.ln() + t * (hi.ln() - lo.ln())).exp()))
            } else {
                let t: f64 = rng.random();
                Ok(Value::Float(lo + t * (hi - lo)))
            }
        }
        _ => Ok(items[rng.random_range(0..items.len())].clone()),
    }
}

/// `n_iter` fits with configurations drawn from `space`, run in parallel;
/// results keep the draw order.
pub fn random_search(
    space: &SearchSpace,
    n_iter: usize,
    splits: &Splits,
    dag: &DagSpec,
) -> Result<Vec<TrainedRun>> {
    if n_iter == 0 {
        return Err(Error::InvalidArgument("search needs at least one iteration".into()));
    }
    let configs = space.sample_configs(n_iter)?;
    configs.par_iter().map(|cfg| fit(splits, dag, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::Variant;

    #[test]
    fn same_seed_same_sequence() {
        let s = SearchSpace::from_toml_str(
            "seed = 9\nlr = [0.001, 0.1]\nbatch_size = [16, 64]\nvariant = [\"global\", \"local\"]\nbeta = 0.5\n",
        )
        .unwrap();
        let a = s.sample_configs(20).unwrap();
        assert_eq!(a, s.sample_configs(20).unwrap());
        for c in &a {
            assert!((0.001..=0.1).contains(&c.lr));
            assert!((16..=64).contains(&c.batch_size));
            assert_eq!(c.beta, 0.5);
        }
        assert!(a.iter().any(|c| c.variant == Variant::Global));
        assert!(a.iter().any(|c| c.variant == Variant::Local));
        assert!(a.windows(2).any(|w| w[0].seed != w[1].seed));
    }

    #[test]
    fn layer_choices() {
        let s = SearchSpace::from_toml_str("common_layers = [[8], [16, 8]]\n").unwrap();
        let cfgs = s.sample_configs(30).unwrap();
        assert!(cfgs.iter().all(|c| c.common_layers == vec![8] || c.common_layers == vec![16, 8]));
    }

    #[test]
    fn log_uniform_median() {
        let s = SearchSpace::from_toml_str("lr = [0.0001, 1.0]\n").unwrap();
        let mut lrs: Vec<f64> = s.sample_configs(2001).unwrap().iter().map(|c| c.lr).collect();
        lrs.sort_by(f64::total_cmp);
        // median of a log-uniform draw on [1e-4, 1] is 1e-2
        assert!((lrs[1000].log10() + 2.0).abs() < 0.2, "{}", lrs[1000]);
    }

    #[test]
    fn errors() {
        assert!(SearchSpace::from_toml_str("seed = 3\ndata = \"x.csv\"\n").is_err());
        assert!(SearchSpace::from_toml_str("no_such_key = [1, 2]\n").is_err());
        assert!(SearchSpace::from_toml_str("lr = [0.1, 0.01]\n").is_err());
        assert!(SearchSpace::from_toml_str("lr = [0.0, 0.01]\n").is_err());
    }
}
