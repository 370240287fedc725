//! Complex spectrogram stored as paired real planes.

use ndarray::{s, Array2, Zip};

use crate::error::{Error, Result};

/// A `frames x bins` complex array, kept as separate real and imaginary planes.
///
/// `hop` and `window_len` record the analysis parameters so the inverse
/// transform can be applied without extra bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
    pub hop: usize,
    pub window_len: usize,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, bins: usize, hop: usize, window_len: usize) -> Self {
        Self {
            re: Array2::zeros((frames, bins)),
            im: Array2::zeros((frames, bins)),
            hop,
            window_len,
        }
    }

    pub fn from_parts(re: Array2<f64>, im: Array2<f64>, hop: usize, window_len: usize) -> Result<Self> {
        if re.dim() != im.dim() {
            return Err(Error::invalid(format!(
                "real plane {:?} and imaginary plane {:?} differ in shape",
                re.dim(),
                im.dim()
            )));
        }
        Ok(Self {
            re,
            im,
            hop,
            window_len,
        })
    }

    /// A zero spectrogram with the same shape and metadata as `self`.
    pub fn zeros_like(&self) -> Self {
        let (f, b) = self.shape();
        Self::zeros(f, b, self.hop, self.window_len)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.re.dim()
    }

    pub fn frames(&self) -> usize {
        self.re.nrows()
    }

    pub fn bins(&self) -> usize {
        self.re.ncols()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn ensure_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// `a * x + b * y`, elementwise on both planes.
    pub fn lin_comb(a: f64, x: &Self, b: f64, y: &Self) -> Result<Self> {
        x.ensure_same_shape(y, "linear combination")?;
        let re = Zip::from(&x.re).and(&y.re).map_collect(|&p, &q| a * p + b * q);
        let im = Zip::from(&x.im).and(&y.im).map_collect(|&p, &q| a * p + b * q);
        Ok(Self {
            re,
            im,
            hop: x.hop,
            window_len: x.window_len,
        })
    }

    /// In-place `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Self) -> Result<()> {
        self.ensure_same_shape(x, "axpy")?;
        self.re.scaled_add(a, &x.re);
        self.im.scaled_add(a, &x.im);
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            re: &self.re * a,
            im: &self.im * a,
            hop: self.hop,
            window_len: self.window_len,
        }
    }

    /// Sum of squared real and imaginary parts.
    pub fn sq_norm(&self) -> f64 {
        self.re.iter().chain(self.im.iter()).map(|v| v * v).sum()
    }

    /// Largest complex magnitude.
    pub fn max_abs(&self) -> f64 {
        Zip::from(&self.re)
            .and(&self.im)
            .fold(0.0_f64, |acc, &r, &i| acc.max(r.hypot(i)))
    }

    /// Largest complex magnitude of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.ensure_same_shape(other, "difference")?;
        let mut worst = 0.0_f64;
        Zip::from(&self.re)
            .and(&self.im)
            .and(&other.re)
            .and(&other.im)
            .for_each(|&a, &b, &c, &d| worst = worst.max((a - c).hypot(b - d)));
        Ok(worst)
    }

    /// Copy of frames `start..start + len`.
    pub fn frame_slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames() {
            return Err(Error::invalid(format!(
                "frames {start}..{} outside 0..{}",
                start + len,
                self.frames()
            )));
        }
        Ok(Self {
            re: self.re.slice(s![start..start + len, ..]).to_owned(),
            im: self.im.slice(s![start..start + len, ..]).to_owned(),
            hop: self.hop,
            window_len: self.window_len,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lin_comb_rejects_mismatch() {
        let a = ComplexSpectrogram::zeros(2, 3, 1, 4);
        let b = ComplexSpectrogram::zeros(3, 3, 1, 4);
        assert!(matches!(
            ComplexSpectrogram::lin_comb(1.0, &a, 1.0, &b),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn norms() {
        let mut a = ComplexSpectrogram::zeros(1, 2, 1, 2);
        a.re[[0, 0]] = 3.0;
        a.im[[0, 0]] = 4.0;
        a.im[[0, 1]] = 1.0;
        assert_eq!(a.sq_norm(), 26.0);
        assert_eq!(a.max_abs(), 5.0);
    }
}
