//! Multi-domain statistical features, path averaging and fitness-based
//! feature reduction.
//!
//! Feature ids follow a fixed layout: raw time domain 1-19, FFT 20-33,
//! Hilbert envelope 34-52, first IMF 53-71, then four statistics per STFT
//! window starting at 72.

mod extract;
mod registry;
mod select;
mod stats;

pub use extract::{
    extract_all, extract_signal, FeatureConfig, FeatureTensor, SpecimenSeries,
    FEATURES_FILE, TIMESTEPS_FILE,
};
pub use registry::{FeatureInfo, FeatureRegistry, SpMethod};
pub use select::{rank_and_select, select_by_benchmark, FeatureScore, FeatureScoreTable, MethodSummary};
pub use stats::{freq_features, tf_features, time_features, FeatureValues};
