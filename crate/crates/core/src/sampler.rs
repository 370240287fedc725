//! Mixture-initialized inference: the state at `t = lambda_hat` is the mixture
//! spectrogram itself, and one or more mean-velocity jumps carry it to `t = 1`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{embed_enrollment, EnrollmentEmbedding, FeatureConfig};
use crate::flow::ground_truth_velocity;
use crate::mr::{mr_predict, MrParams};
use crate::net::{self, checkpoint, NetParams};
use crate::signal::{istft, stft, MixtureExample, StftConfig, Waveform};
use crate::spectrogram::ComplexSpectrogram;

/// Magic tag of the ground-truth-velocity stub "checkpoint".
pub const ORACLE_MAGIC: checkpoint::Magic = *b"MFORACLE";

/// Anything that predicts an average velocity over `[t, r]` at state `z`.
pub trait VelocityField {
    fn velocity(&self, z: &ComplexSpectrogram, t: f64, r: f64) -> Result<ComplexSpectrogram>;
}

/// The network bound to one enrollment embedding.
pub struct NetField<'a> {
    pub params: &'a NetParams,
    pub emb: &'a EnrollmentEmbedding,
}

impl VelocityField for NetField<'_> {
    fn velocity(&self, z: &ComplexSpectrogram, t: f64, r: f64) -> Result<ComplexSpectrogram> {
        net::forward(self.params, z, t, r, self.emb)
    }
}

/// Returns the same field everywhere; with `S - B` this is the exact velocity
/// of the straight mixing path.
pub struct ConstantField(pub ComplexSpectrogram);

impl VelocityField for ConstantField {
    fn velocity(&self, z: &ComplexSpectrogram, _t: f64, _r: f64) -> Result<ComplexSpectrogram> {
        z.ensure_same_shape(&self.0, "constant field")?;
        Ok(self.0.clone())
    }
}

fn check_lambda(lambda_hat: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda_hat) {
        return Err(Error::invalid(format!("start time {lambda_hat} outside [0, 1]")));
    }
    Ok(())
}

/// `S_hat = Y + (1 - lambda_hat) * v(Y, lambda_hat, 1)`.
pub fn one_step_extract(
    field: &dyn VelocityField,
    y: &ComplexSpectrogram,
    lambda_hat: f64,
) -> Result<ComplexSpectrogram> {
    check_lambda(lambda_hat)?;
    let v = field.velocity(y, lambda_hat, 1.0)?;
    let mut out = y.clone();
    out.axpy(1.0 - lambda_hat, &v)?;
    Ok(out)
}

/// `nfe` uniform jumps over `[lambda_hat, 1]`, each using the average velocity
/// of its own sub-interval. `nfe = 1` is exactly [`one_step_extract`].
pub fn euler_multi_step(
    field: &dyn VelocityField,
    y: &ComplexSpectrogram,
    lambda_hat: f64,
    nfe: usize,
) -> Result<ComplexSpectrogram> {
    check_lambda(lambda_hat)?;
    if nfe == 0 {
        return Err(Error::invalid("at least one function evaluation is required"));
    }
    let time = |i: usize| {
        if i == nfe {
            1.0
        } else {
            lambda_hat + (1.0 - lambda_hat) * i as f64 / nfe as f64
        }
    };
    let mut z = y.clone();
    for i in 0..nfe {
        let (t, r) = (time(i), time(i + 1));
        let v = field.velocity(&z, t, r)?;
        let step = if i == 0 && nfe == 1 { 1.0 - lambda_hat } else { r - t };
        z.axpy(step, &v)?;
    }
    Ok(z)
}

/// Where the start time comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSource {
    Oracle,
    Predicted,
    Fixed(f64),
}

impl std::str::FromStr for LambdaSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "predicted" => Ok(Self::Predicted),
            other => {
                let v = other
                    .strip_prefix("fixed:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown lambda source {other:?}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!("fixed lambda {v} outside [0, 1]")));
                }
                Ok(Self::Fixed(v))
            }
        }
    }
}

impl std::fmt::Display for LambdaSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Oracle => write!(f, "oracle"),
            Self::Predicted => write!(f, "predicted"),
            Self::Fixed(v) => write!(f, "fixed:{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub nfe: usize,
    pub lambda_source: LambdaSource,
    /// Clip range for predicted mixing ratios.
    pub clip: (f64, f64),
    pub stft: StftConfig,
    pub features: FeatureConfig,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            nfe: 1,
            lambda_source: LambdaSource::Oracle,
            clip: (0.05, 0.95),
            stft: StftConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(Error::invalid("nfe must be at least 1"));
        }
        let (lo, hi) = self.clip;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::invalid(format!("lambda clip range [{lo}, {hi}] must lie in [0, 1)")));
        }
        self.stft.validate()?;
        self.features.validate()
    }
}

/// A trained network, or the ground-truth-velocity stub.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityModel {
    Network(NetParams),
    Oracle,
}

impl VelocityModel {
    /// Load either a network checkpoint or an oracle stub file.
    pub fn load(path: &Path) -> Result<Self> {
        if checkpoint::peek_magic(path)? == ORACLE_MAGIC {
            checkpoint::load(path, &ORACLE_MAGIC)?;
            return Ok(Self::Oracle);
        }
        NetParams::load(path).map(Self::Network)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Self::Network(p) => p.save(path),
            Self::Oracle => checkpoint::save(path, &ORACLE_MAGIC, &[], &[]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub waveform: Waveform,
    pub spectrogram: ComplexSpectrogram,
    pub lambda_hat: f64,
}

/// Resolve the start time for `ex` under `cfg`.
pub fn resolve_lambda(mr: Option<&MrParams>, ex: &MixtureExample, cfg: &InferenceConfig) -> Result<f64> {
    match cfg.lambda_source {
        LambdaSource::Oracle => Ok(ex.lambda),
        LambdaSource::Fixed(v) => Ok(v),
        LambdaSource::Predicted => {
            let mr = mr.ok_or_else(|| Error::invalid("predicted lambda requires a predictor"))?;
            Ok(mr_predict(mr, &ex.y, &ex.e)?.clamp(cfg.clip.0, cfg.clip.1))
        }
    }
}

/// Full pipeline for one example: start time, spectral extraction, inverse transform.
pub fn extract_waveform(
    model: &VelocityModel,
    mr: Option<&MrParams>,
    ex: &MixtureExample,
    cfg: &InferenceConfig,
) -> Result<Extraction> {
    cfg.validate()?;
    let lambda_hat = resolve_lambda(mr, ex, cfg)?;
    let (n, hop) = (cfg.stft.window_len, cfg.stft.hop);
    let y = stft(&ex.y, n, hop)?;
    let spectrogram = match model {
        VelocityModel::Oracle => {
            let u = ground_truth_velocity(&stft(&ex.s, n, hop)?, &stft(&ex.b, n, hop)?)?;
            euler_multi_step(&ConstantField(u), &y, lambda_hat, cfg.nfe)?
        }
        VelocityModel::Network(params) => {
            let emb = embed_enrollment(&ex.e, &cfg.features)?;
            let field = NetField { params, emb: &emb };
            euler_multi_step(&field, &y, lambda_hat, cfg.nfe)?
        }
    };
    let waveform = istft(&spectrogram, ex.y.len(), ex.y.sample_rate())?;
    Ok(Extraction {
        waveform,
        spectrogram,
        lambda_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::interpolate;
    use crate::signal::{gen_dataset, DatasetConfig};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let re = Array2::from_shape_fn((6, 9), |_| rng.random_range(-5.0..5.0));
        let im = Array2::from_shape_fn((6, 9), |_| rng.random_range(-5.0..5.0));
        ComplexSpectrogram::from_parts(re, im, 4, 16).unwrap()
    }

    struct Zero;
    impl VelocityField for Zero {
        fn velocity(&self, z: &ComplexSpectrogram, _: f64, _: f64) -> Result<ComplexSpectrogram> {
            Ok(z.zeros_like())
        }
    }

    #[test]
    fn oracle_velocity_recovers_target_for_any_nfe() {
        let s = random_spec(1);
        let b = random_spec(2);
        let lambda = 0.37;
        let y = interpolate(&s, &b, lambda).unwrap();
        let field = ConstantField(ground_truth_velocity(&s, &b).unwrap());
        let one = one_step_extract(&field, &y, lambda).unwrap();
        assert!(one.max_abs_diff(&s).unwrap() <= 1e-12 * s.max_abs());
        for nfe in [1, 2, 3, 8, 16] {
            let out = euler_multi_step(&field, &y, lambda, nfe).unwrap();
            assert!(out.max_abs_diff(&s).unwrap() <= 1e-12 * s.max_abs(), "nfe {nfe}");
        }
        assert_eq!(euler_multi_step(&field, &y, lambda, 1).unwrap(), one);
    }

    #[test]
    fn vanishing_jump_and_zero_field() {
        let y = random_spec(3);
        let field = ConstantField(random_spec(4));
        assert_eq!(one_step_extract(&field, &y, 1.0).unwrap(), y);
        let near = one_step_extract(&field, &y, 1.0 - 1e-9).unwrap();
        assert!(near.max_abs_diff(&y).unwrap() < 1e-7);
        assert_eq!(one_step_extract(&Zero, &y, 0.4).unwrap(), y);
        assert!(euler_multi_step(&Zero, &y, 0.4, 0).is_err());
        assert!(one_step_extract(&Zero, &y, 1.2).is_err());
    }

    #[test]
    fn lambda_source_parsing() {
        assert_eq!("oracle".parse::<LambdaSource>().unwrap(), LambdaSource::Oracle);
        assert_eq!("predicted".parse::<LambdaSource>().unwrap(), LambdaSource::Predicted);
        assert_eq!("fixed:1.0".parse::<LambdaSource>().unwrap(), LambdaSource::Fixed(1.0));
        assert!("fixed:2".parse::<LambdaSource>().is_err());
        assert!("nope".parse::<LambdaSource>().is_err());
    }

    #[test]
    fn oracle_pipeline_and_fixed_one() {
        let ds = gen_dataset(2, &DatasetConfig::default(), 4).unwrap();
        let cfg = InferenceConfig::default();
        for ex in &ds {
            let out = extract_waveform(&VelocityModel::Oracle, None, ex, &cfg).unwrap();
            let err: f64 = out.waveform.samples().iter().zip(ex.s.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = ex.s.samples().iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(err / norm < 1e-5);
            let again = extract_waveform(&VelocityModel::Oracle, None, ex, &cfg).unwrap();
            assert_eq!(again.waveform, out.waveform);

            let fixed = InferenceConfig {
                lambda_source: LambdaSource::Fixed(1.0),
                ..cfg
            };
            let out = extract_waveform(&VelocityModel::Oracle, None, ex, &fixed).unwrap();
            let err: f64 = out.waveform.samples().iter().zip(ex.y.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err / norm < 1e-6);
        }
        let pred = InferenceConfig {
            lambda_source: LambdaSource::Predicted,
            ..cfg
        };
        assert!(extract_waveform(&VelocityModel::Oracle, None, &ds[0], &pred).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("oracle.bin");
        VelocityModel::Oracle.save(&p).unwrap();
        assert_eq!(VelocityModel::load(&p).unwrap(), VelocityModel::Oracle);
    }
}
