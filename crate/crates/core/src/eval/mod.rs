//! Geo-encoding evaluation, dense features and reconstruction reports.

pub mod features;
pub mod pairs;
pub mod recon;
pub mod tuples;

pub use features::{extract_features, extract_features_at, FeatureMap};
pub use pairs::{gpe_pairs_eval, sample_pairs, GpeSource, PairSample, PairsReport};
pub use recon::{reconstruction_report, OraclePredictor, Predictor, ReconReport, ZeroPredictor};
pub use tuples::{gpe_embeddings_eval, make_tuples, TupleSample, TuplesReport};
