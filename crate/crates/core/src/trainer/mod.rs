//! Joint training, random search and bootstrap model selection.

mod bootstrap;
mod config;
mod fit;
mod search;

pub use bootstrap::{bootstrap_select, BootstrapReport, MeanStd, PoolEntry};
pub use config::TrainConfig;
pub use fit::{
    apply_gradients, fit, initialize, loss_and_gradients, Batch, EpochRecord, LossParts,
    ModelGradients, TrainedRun, Trainer,
};
pub use search::{random_search, SearchSpace};
