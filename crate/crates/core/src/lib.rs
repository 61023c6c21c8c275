//! Contrastive anomaly detection on text-attributed graphs.
//!
//! Nodes carry raw text and sit in a graph. A transformer encodes each
//! node's text, a residual GCN encodes its frozen features over the graph,
//! and both are trained so that a node's text and graph embeddings agree at
//! node and neighborhood scale. Nodes whose modalities disagree after
//! training score as anomalous.
//!
//! The stages map to modules: [`synthgen`] makes clean graphs, [`injector`]
//! plants labeled anomalies, [`featurizer`] tokenizes and builds frozen
//! features, [`encoders`] and [`objective`] define the model and loss,
//! [`trainer`] fits it, [`scorer`] turns it into anomaly scores and
//! [`evalkit`] measures them.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod encoders;
pub mod error;
pub mod evalkit;
pub mod featurizer;
pub mod graph;
pub mod injector;
pub mod io;
pub mod linalg;
pub mod objective;
pub mod pipeline;
pub mod rng;
pub mod scorer;
pub mod synthgen;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use graph::{AnomalyTag, InjectionLabel, TagGraph};

/// Worker threads used by parallel kernels.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Sizes the global worker pool. Has no effect without the `parallel`
/// feature or once the pool has started.
pub fn set_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}
