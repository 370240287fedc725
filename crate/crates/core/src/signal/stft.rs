//! Centered, Hann-windowed short-time Fourier transform and its overlap-add inverse.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{Error, Result};
use crate::spectrogram::ComplexSpectrogram;

/// Denominator floor for the window-sum normalization in [`istft`].
pub const WINDOW_SUM_FLOOR: f64 = 1e-8;

/// Analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        let pad = self.window_len / 2;
        1 + (len + 2 * pad - self.window_len) / self.hop
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 {
            return Err(Error::invalid("window length must be at least 2"));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::invalid(format!(
                "hop {} must be in [1, window_len={}]",
                self.hop, self.window_len
            )));
        }
        Ok(())
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 256,
            hop: 64,
        }
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Forward transform. Frames are centered: the signal is zero-padded by
/// `window_len / 2` on both sides and frame `i` starts at padded index `i * hop`.
pub fn stft(w: &Waveform, window_len: usize, hop: usize) -> Result<ComplexSpectrogram> {
    let cfg = StftConfig { window_len, hop };
    cfg.validate()?;
    let x = w.samples();
    if window_len > x.len() {
        return Err(Error::invalid(format!(
            "window length {window_len} exceeds signal length {}",
            x.len()
        )));
    }
    let pad = window_len / 2;
    let frames = cfg.frames(x.len());
    let bins = cfg.bins();
    let window = hann_window(window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_len);
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    let mut re = Array2::zeros((frames, bins));
    let mut im = Array2::zeros((frames, bins));
    for f in 0..frames {
        let start = f * hop;
        for (n, slot) in buf.iter_mut().enumerate() {
            let idx = (start + n) as isize - pad as isize;
            let v = if idx >= 0 && (idx as usize) < x.len() {
                x[idx as usize] * window[n]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            re[[f, k]] = buf[k].re;
            im[[f, k]] = buf[k].im;
        }
    }
    ComplexSpectrogram::from_parts(re, im, hop, window_len)
}

/// Inverse transform by windowed overlap-add, normalized by the summed squared
/// window and trimmed to `out_len` samples.
pub fn istft(spec: &ComplexSpectrogram, out_len: usize, sample_rate: u32) -> Result<Waveform> {
    let cfg = StftConfig {
        window_len: spec.window_len,
        hop: spec.hop,
    };
    cfg.validate()?;
    if spec.bins() != cfg.bins() {
        return Err(Error::invalid(format!(
            "spectrogram has {} bins but window length {} implies {}",
            spec.bins(),
            cfg.window_len,
            cfg.bins()
        )));
    }
    if out_len == 0 {
        return Err(Error::invalid("output length must be positive"));
    }
    let n = cfg.window_len;
    let pad = n / 2;
    let window = hann_window(n);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let total = (spec.frames().saturating_sub(1)) * cfg.hop + n;
    let mut acc = vec![0.0; total.max(pad + out_len)];
    let mut wsum = vec![0.0; acc.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for f in 0..spec.frames() {
        for k in 0..n {
            // Hermitian completion of the one-sided spectrum.
            buf[k] = if k < cfg.bins() {
                Complex::new(spec.re[[f, k]], spec.im[[f, k]])
            } else {
                Complex::new(spec.re[[f, n - k]], -spec.im[[f, n - k]])
            };
        }
        ifft.process(&mut buf);
        let start = f * cfg.hop;
        for k in 0..n {
            acc[start + k] += window[k] * buf[k].re / n as f64;
            wsum[start + k] += window[k] * window[k];
        }
    }
    let samples = (0..out_len)
        .map(|j| acc[pad + j] / wsum[pad + j].max(WINDOW_SUM_FLOOR))
        .collect();
    Waveform::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 8000).unwrap()
    }

    /// Direct O(N^2) DFT of a real frame, one-sided.
    fn direct_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..n / 2 + 1)
            .map(|k| {
                x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                    let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                    (re + v * ang.cos(), im + v * ang.sin())
                })
            })
            .collect()
    }

    #[test]
    fn frame_of_window_is_dft_of_squared_window() {
        let n = 64;
        let hop = 16;
        let w = Waveform::new(hann_window(n), 8000).unwrap();
        let spec = stft(&w, n, hop).unwrap();
        // The frame starting at padded index n/2 is aligned with the signal.
        let f = (n / 2) / hop;
        let squared: Vec<f64> = hann_window(n).iter().map(|v| v * v).collect();
        for (k, (re, im)) in direct_dft(&squared).into_iter().enumerate() {
            assert!((spec.re[[f, k]] - re).abs() < 1e-12, "bin {k}");
            assert!((spec.im[[f, k]] - im).abs() < 1e-12, "bin {k}");
        }
    }

    #[test]
    fn every_frame_matches_direct_dft() {
        let w = random_wave(300, 5);
        let (n, hop) = (32, 8);
        let spec = stft(&w, n, hop).unwrap();
        let win = hann_window(n);
        for f in 0..spec.frames() {
            let frame: Vec<f64> = (0..n)
                .map(|t| {
                    let idx = (f * hop + t) as isize - (n / 2) as isize;
                    if idx >= 0 && (idx as usize) < w.len() {
                        w.samples()[idx as usize] * win[t]
                    } else {
                        0.0
                    }
                })
                .collect();
            for (k, (re, im)) in direct_dft(&frame).into_iter().enumerate() {
                assert!((spec.re[[f, k]] - re).abs() < 1e-10);
                assert!((spec.im[[f, k]] - im).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn shape_and_errors() {
        let w = random_wave(8000, 1);
        let spec = stft(&w, 64, 16).unwrap();
        assert_eq!(spec.bins(), 33);
        assert_eq!(spec.frames(), 501);
        assert!(stft(&random_wave(10, 1), 64, 16).is_err());
        assert!(stft(&w, 64, 65).is_err());
        assert!(stft(&w, 64, 0).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let w = Waveform::new(vec![0.0; 500], 8000).unwrap();
        let spec = stft(&w, 64, 16).unwrap();
        assert_eq!(spec.max_abs(), 0.0);
        let back = istft(&spec, 500, 8000).unwrap();
        assert!(back.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_default_and_wideband_geometry() {
        for &(n, hop, len) in &[(64, 16, 8000), (256, 64, 8000), (510, 128, 16000), (63, 20, 777)] {
            let w = random_wave(len, n as u64);
            let back = istft(&stft(&w, n, hop).unwrap(), len, 8000).unwrap();
            let err: f64 = w
                .samples()
                .iter()
                .zip(back.samples())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = w.samples().iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(err / norm < 1e-6, "n={n} hop={hop}: {}", err / norm);
        }
    }

    #[test]
    fn istft_is_linear() {
        let w = random_wave(1000, 3);
        let one = istft(&stft(&w, 64, 16).unwrap(), 1000, 8000).unwrap();
        let two = istft(&stft(&w.scaled(2.0), 64, 16).unwrap(), 1000, 8000).unwrap();
        for (a, b) in one.samples().iter().zip(two.samples()) {
            assert!((2.0 * a - b).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn stft_is_linear_in_the_mixture(seed in 0u64..10_000, lambda in 0.0f64..=1.0) {
            let s = random_wave(700, seed);
            let b = random_wave(700, seed + 1);
            let y = super::super::mix(&s, &b, lambda).unwrap();
            let ys = stft(&y, 64, 16).unwrap();
            let expect = ComplexSpectrogram::lin_comb(
                lambda, &stft(&s, 64, 16).unwrap(), 1.0 - lambda, &stft(&b, 64, 16).unwrap()).unwrap();
            let scale = ys.max_abs().max(expect.max_abs()).max(1e-300);
            prop_assert!(ys.max_abs_diff(&expect).unwrap() <= 1e-10 * scale);
        }

        #[test]
        fn round_trip_random(seed in 0u64..10_000, len in 256usize..1500) {
            let w = random_wave(len, seed);
            let back = istft(&stft(&w, 64, 16).unwrap(), len, 8000).unwrap();
            let err: f64 = w.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = w.samples().iter().map(|a| a * a).sum::<f64>().sqrt();
            prop_assert!(err / norm < 1e-6);
        }
    }
}
