pub mod cli;
pub mod counterfactual;
pub mod dag;
pub mod data;
pub mod error;
pub mod exogenous;
pub mod export;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod persist;
pub mod scm;
pub mod trainer;
