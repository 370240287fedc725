//! Shared fixtures for the benchmarks.

use meanflow_core::features::embed_enrollment;
use meanflow_core::signal::{gen_dataset, stft};
use meanflow_core::{ComplexSpectrogram, DatasetConfig, EnrollmentEmbedding, FeatureConfig, MixtureExample, NetConfig, NetParams, StftConfig};

pub struct Fixture {
    pub example: MixtureExample,
    pub y: ComplexSpectrogram,
    pub emb: EnrollmentEmbedding,
    pub params: NetParams,
}

/// One default-length example with a freshly initialised default network.
pub fn fixture() -> Fixture {
    let stft_cfg = StftConfig::default();
    let features = FeatureConfig::default();
    let example = gen_dataset(1, &DatasetConfig::default(), 7).unwrap().remove(0);
    let y = stft(&example.y, stft_cfg.window_len, stft_cfg.hop).unwrap();
    let emb = embed_enrollment(&example.e, &features).unwrap();
    let cfg = NetConfig {
        bins: stft_cfg.bins(),
        emb_dim: features.embedding_dim(),
        ..NetConfig::default()
    };
    let params = NetParams::init(cfg, 1).unwrap();
    Fixture { example, y, emb, params }
}
