//! Adaptive pair selection: a low-rank Gaussian posterior over the score
//! matrix, acquisition policies on top of it, and the batched discovery
//! loop with its evaluation metrics.

mod discovery;
mod policy;
mod posterior;

pub use discovery::{
    compute_metrics, run_discovery, top_percentile_set, DiscoveryMetrics, DiscoveryState,
    DEFAULT_TOP_PERCENTILE,
};
pub use policy::{
    conditional_variance, instant_regret, select_batch, PolicyConfig, PolicyKind,
    DEFAULT_LAMBDA,
};
pub use posterior::{gibbs_posterior, PosteriorDraws, PosteriorHyperParams};
