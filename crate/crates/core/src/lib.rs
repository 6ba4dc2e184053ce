//! Bird-sound species identification.
//!
//! Pipeline: WAV decoding and band-limited spectrograms ([`dsp`]), per-recording
//! power-threshold frame selection for training audio ([`frame_select`]),
//! frame-level spectral statistics aggregated into histograms or percentile
//! summaries ([`features`]), balanced training stores with a compact binary
//! format ([`trainstore`]), a probabilistic kNN classifier with tie-breaking
//! bias, entropy certainty and candidate-class filtering ([`knn`]), and
//! ranking/retrieval metrics ([`eval`]).

pub mod dsp;
pub mod eval;
pub mod features;
pub mod frame_select;
pub mod knn;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod trainstore;

/// Any failure from the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Dsp(#[from] dsp::DspError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Store(#[from] trainstore::StoreError),
    #[error(transparent)]
    Knn(#[from] knn::KnnError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}
