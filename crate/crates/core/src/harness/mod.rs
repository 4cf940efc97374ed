//! Dataset loading, feature caching, experiment drivers and synthetic corpora.

pub mod bench;
pub mod cache;
pub mod config;
pub mod dataset;
pub mod extract;
pub mod kos;
pub mod synth;

pub use bench::{accuracy, load_features, run_benchmark, FeatureSet, Report};
pub use cache::{extract_and_cache, FeatureStore};
pub use config::{Layout, RunConfig};
pub use dataset::{load_dataset, make_split, DatasetManifest, Split};
pub use extract::{extract_features, ImageFeatures};
pub use kos::{run_kos_experiment, KosResult};
