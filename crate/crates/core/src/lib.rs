//! One-step mean-flow target source extraction.
//!
//! A mixture `y = lambda s + (1 - lambda) b` sits at time `lambda` on the
//! straight path from background to target spectrogram. A conditional network
//! predicts the average velocity over `[lambda, 1]`, so a single evaluation
//! carries the mixture to the target estimate.

pub mod error;
pub mod features;
pub mod flow;
pub mod metrics;
pub mod mr;
pub mod net;
pub mod sampler;
pub mod seed;
pub mod signal;
pub mod spectrogram;
pub mod train;

pub use error::{Error, Result};
pub use features::{EnrollmentEmbedding, FeatureConfig};
pub use flow::{AlphaSchedule, FlowSample, LossOutput, TimePair, TimeSampling};
pub use metrics::{EvalRecord, EvalReport};
pub use mr::{MrConfig, MrParams};
pub use net::{NetConfig, NetParams};
pub use sampler::{InferenceConfig, LambdaSource, VelocityModel};
pub use signal::{DatasetConfig, MixtureExample, StftConfig, Waveform};
pub use spectrogram::ComplexSpectrogram;
pub use train::{MrTrainConfig, TrainConfig, TrainState};
