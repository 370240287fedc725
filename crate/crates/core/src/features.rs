//! Fixed spectral-statistics featurizers for enrollment conditioning and
//! mixing-ratio prediction.

use crate::error::{Error, Result};
use crate::signal::{rms, stft, StftConfig, Waveform};

/// Additive floor inside every `log10` power feature.
pub const POWER_FLOOR: f64 = 1e-10;

/// Value a band feature takes on digital silence.
pub const LOG_FLOOR: f64 = -10.0;

/// Floor applied to the RMS feature, in dB.
pub const RMS_FLOOR_DB: f64 = -200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub window_len: usize,
    pub hop: usize,
    pub n_bands: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let stft = StftConfig::default();
        Self {
            window_len: stft.window_len,
            hop: stft.hop,
            n_bands: 32,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        StftConfig {
            window_len: self.window_len,
            hop: self.hop,
        }
        .validate()?;
        let bins = self.window_len / 2 + 1;
        if self.n_bands == 0 || self.n_bands > bins {
            return Err(Error::invalid(format!(
                "band count {} must be in [1, {bins}]",
                self.n_bands
            )));
        }
        Ok(())
    }

    /// Length of an [`EnrollmentEmbedding`].
    pub fn embedding_dim(&self) -> usize {
        2 * self.n_bands
    }

    /// Length of the [`mr_features`] vector.
    pub fn mr_dim(&self) -> usize {
        3 * self.n_bands + 1
    }

    fn band_edges(&self) -> Vec<usize> {
        let bins = self.window_len / 2 + 1;
        (0..=self.n_bands).map(|i| i * bins / self.n_bands).collect()
    }
}

/// Fixed-length summary of an enrollment clip: per-band means of `log10`
/// power over frames, followed by the per-band standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrollmentEmbedding(Vec<f64>);

impl EnrollmentEmbedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let na: f64 = self.0.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb: f64 = other.0.iter().map(|a| a * a).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// Per-frame band powers (`frames x n_bands`, linear scale).
fn band_powers(w: &Waveform, cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let padded;
    let w = if w.len() < cfg.window_len {
        let mut s = w.samples().to_vec();
        s.resize(cfg.window_len, 0.0);
        padded = Waveform::new(s, w.sample_rate())?;
        &padded
    } else {
        w
    };
    let spec = stft(w, cfg.window_len, cfg.hop)?;
    let edges = cfg.band_edges();
    Ok((0..spec.frames())
        .map(|f| {
            edges
                .windows(2)
                .map(|e| {
                    let (lo, hi) = (e[0], e[1]);
                    (lo..hi)
                        .map(|k| spec.re[[f, k]].powi(2) + spec.im[[f, k]].powi(2))
                        .sum::<f64>()
                        / (hi - lo) as f64
                })
                .collect()
        })
        .collect())
}

pub fn embed_enrollment(e: &Waveform, cfg: &FeatureConfig) -> Result<EnrollmentEmbedding> {
    let powers = band_powers(e, cfg)?;
    let frames = powers.len() as f64;
    let mut means = vec![0.0; cfg.n_bands];
    let mut sq = vec![0.0; cfg.n_bands];
    for row in &powers {
        for (j, &p) in row.iter().enumerate() {
            let l = (p + POWER_FLOOR).log10();
            means[j] += l;
            sq[j] += l * l;
        }
    }
    let mut out = Vec::with_capacity(cfg.embedding_dim());
    for m in means.iter_mut() {
        *m /= frames;
    }
    out.extend_from_slice(&means);
    out.extend(
        sq.iter()
            .zip(&means)
            .map(|(&s, &m)| (s / frames - m * m).max(0.0).sqrt()),
    );
    Ok(EnrollmentEmbedding(out))
}

/// Mixing-ratio predictor features: the enrollment embedding, the global RMS
/// in dB, and each band's share of the total power.
pub fn mr_features(w: &Waveform, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let mut out = embed_enrollment(w, cfg)?.0;
    let r = rms(w.samples());
    out.push(if r > 0.0 { (20.0 * r.log10()).max(RMS_FLOOR_DB) } else { RMS_FLOOR_DB });
    let powers = band_powers(w, cfg)?;
    let mut totals = vec![0.0; cfg.n_bands];
    for row in &powers {
        for (t, p) in totals.iter_mut().zip(row) {
            *t += p;
        }
    }
    let all: f64 = totals.iter().sum();
    out.extend(totals.iter().map(|t| if all > 0.0 { t / all } else { 0.0 }));
    Ok(out)
}
