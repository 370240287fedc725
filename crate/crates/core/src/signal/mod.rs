//! Waveforms, convex mixing, time-frequency transforms and the synthetic corpus.

mod dataset;
mod stft;
mod synth;

pub use dataset::{
    gen_dataset, load_split, save_split, write_waveform, DatasetConfig, MixtureExample, MANIFEST_FILE,
};
pub use stft::{hann_window, istft, stft, StftConfig, WINDOW_SUM_FLOOR};
pub use synth::{f0_hz, synth_source, HARMONICS, NOISE_DB};

use crate::error::{Error, Result};

/// A mono real-valued signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform must contain at least one sample"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * a).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Rescale to unit RMS. Silent inputs are returned unchanged.
    pub fn normalized(&self) -> Self {
        let r = self.rms();
        if r > 0.0 {
            self.scaled(1.0 / r)
        } else {
            self.clone()
        }
    }
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Convex mixture `lambda * s + (1 - lambda) * b`.
pub fn mix(s: &Waveform, b: &Waveform, lambda: f64) -> Result<Waveform> {
    if s.len() != b.len() {
        return Err(Error::invalid(format!(
            "cannot mix signals of length {} and {}",
            s.len(),
            b.len()
        )));
    }
    if s.sample_rate != b.sample_rate {
        return Err(Error::invalid(format!(
            "cannot mix signals at {} Hz and {} Hz",
            s.sample_rate, b.sample_rate
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("mixing ratio {lambda} outside [0, 1]")));
    }
    let samples = s
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(&sv, &bv)| lambda * sv + (1.0 - lambda) * bv)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: s.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wf(v: &[f64]) -> Waveform {
        Waveform::new(v.to_vec(), 8000).unwrap()
    }

    #[test]
    fn mix_midpoint() {
        let y = mix(&wf(&[1.0, 0.0]), &wf(&[0.0, 1.0]), 0.5).unwrap();
        assert_eq!(y.samples(), &[0.5, 0.5]);
    }

    #[test]
    fn mix_endpoints_are_exact() {
        let s = wf(&[0.3, -1.7, 2.25]);
        let b = wf(&[-0.1, 0.9, 4.0]);
        assert_eq!(mix(&s, &b, 1.0).unwrap(), s);
        assert_eq!(mix(&s, &b, 0.0).unwrap(), b);
    }

    #[test]
    fn mix_rejects_bad_inputs() {
        let s = wf(&[1.0, 2.0]);
        assert!(mix(&s, &wf(&[1.0]), 0.5).is_err());
        assert!(mix(&s, &s, 1.5).is_err());
        assert!(mix(&s, &s, -0.01).is_err());
        let other_rate = Waveform::new(vec![1.0, 2.0], 16000).unwrap();
        assert!(mix(&s, &other_rate, 0.5).is_err());
    }

    #[test]
    fn waveform_validation() {
        assert!(Waveform::new(vec![], 8000).is_err());
        assert!(Waveform::new(vec![1.0], 0).is_err());
        assert!(matches!(
            Waveform::new(vec![f64::NAN], 8000),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn normalization_hits_unit_rms() {
        let w = wf(&[3.0, -1.0, 0.5, 2.0]).normalized();
        assert!((w.rms() - 1.0).abs() < 1e-12);
    }
}
