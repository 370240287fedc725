//! Deterministic harmonic sources standing in for speakers.
//!
//! A source id fixes the fundamental (the "speaker identity"); the seed fixes
//! the content: harmonic phases, amplitude modulation and the noise floor.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{rms, Waveform};
use crate::error::{Error, Result};
use crate::seed;

pub const HARMONICS: usize = 4;

/// Noise floor relative to the harmonic part.
pub const NOISE_DB: f64 = -30.0;

const SYNTH_TAG: u64 = 0x7379_6e74;

/// Fundamental frequency of a source id: 110 Hz raised by `id` semitones.
pub fn f0_hz(source_id: u32) -> f64 {
    110.0 * 2f64.powf(source_id as f64 / 12.0)
}

pub fn synth_source(source_id: u32, duration_s: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::invalid(format!("duration {duration_s} s must be positive")));
    }
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let len = (duration_s * sample_rate as f64).round() as usize;
    if len == 0 {
        return Err(Error::invalid("duration shorter than one sample"));
    }
    let mut rng = seed::rng(seed, SYNTH_TAG, source_id as u64);
    let f0 = f0_hz(source_id);
    let sr = sample_rate as f64;

    let phases: Vec<f64> = (0..HARMONICS).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    // Two slow modulators, 0.5 to 4 Hz, combined depth below 0.8 keeps the envelope positive.
    let am: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.5..4.0),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.1..0.4),
            )
        })
        .collect();

    let mut harmonic: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let envelope = 1.0
                + am
                    .iter()
                    .map(|&(f, p, d)| d * (2.0 * PI * f * t + p).sin())
                    .sum::<f64>();
            let tone: f64 = phases
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let k = (k + 1) as f64;
                    (2.0 * PI * k * f0 * t + p).sin() / k
                })
                .sum();
            envelope * tone
        })
        .collect();

    let noise_std = rms(&harmonic) * 10f64.powf(NOISE_DB / 20.0);
    for v in harmonic.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += noise_std * z;
    }
    Ok(Waveform::new(harmonic, sample_rate)?.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Magnitude of the direct DFT at integer frequency `k` (1 Hz resolution for 1 s signals).
    fn peak_bin(x: &[f64], max_bin: usize) -> usize {
        let n = x.len() as f64;
        (1..max_bin)
            .map(|k| {
                let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                    let a = -2.0 * PI * k as f64 * t as f64 / n;
                    (re + v * a.cos(), im + v * a.sin())
                });
                (k, re * re + im * im)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn deterministic() {
        let a = synth_source(0, 1.0, 8000, 7).unwrap();
        let b = synth_source(0, 1.0, 8000, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_rms() {
        for id in [0, 5, 17, 30] {
            let w = synth_source(id, 0.5, 8000, id as u64 + 11).unwrap();
            assert!((w.rms() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn same_identity_shares_dominant_peak() {
        let a = synth_source(0, 1.0, 8000, 1).unwrap();
        let b = synth_source(0, 1.0, 8000, 2).unwrap();
        assert_ne!(a, b);
        let pa = peak_bin(a.samples(), 600);
        let pb = peak_bin(b.samples(), 600);
        assert_eq!(pa, pb);
        assert_eq!(pa, 110);
    }

    #[test]
    fn rejects_non_positive_duration() {
        assert!(synth_source(0, 0.0, 8000, 1).is_err());
        assert!(synth_source(0, -1.0, 8000, 1).is_err());
    }
}
