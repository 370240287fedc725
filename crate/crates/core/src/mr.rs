//! Mixing-ratio predictor `lambda_hat = sigmoid(h([w(y); w(e)]))`.
//!
//! `w` is the fixed spectral featurizer from [`crate::features`]; `h` is a
//! small tanh perceptron whose last layer starts at zero, so an untrained
//! predictor answers 0.5. Inputs are standardized with statistics fitted once
//! on the training split.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::features::{mr_features, FeatureConfig};
use crate::flow::sigmoid;
use crate::net::checkpoint;
use crate::net::{Mlp, MlpTrace};
use crate::seed;
use crate::signal::Waveform;

pub const MAGIC: checkpoint::Magic = *b"MFMRPRED";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrConfig {
    pub features: FeatureConfig,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for MrConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            hidden: 64,
            layers: 2,
        }
    }
}

impl MrConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::invalid("predictor dimensions must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.features.mr_dim()
    }

    pub(crate) fn mlp(&self) -> Mlp {
        let mut dims = vec![self.input_dim()];
        dims.extend(std::iter::repeat_n(self.hidden, self.layers));
        dims.push(1);
        Mlp::new(dims)
    }
}

/// Predictor weights plus the (non-trainable) input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct MrParams {
    cfg: MrConfig,
    weights: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl MrParams {
    /// Fresh predictor with identity standardization.
    pub fn init(cfg: MrConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed, seed::stream::INIT, 1);
        let weights = cfg.mlp().init(&mut rng, true);
        let d = cfg.input_dim();
        Ok(Self {
            cfg,
            weights,
            mean: vec![0.0; d],
            std: vec![1.0; d],
        })
    }

    pub fn config(&self) -> &MrConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Fit the standardization to raw (unstandardized) input rows.
    pub fn fit_standardization(&mut self, raw: &Array2<f64>) -> Result<()> {
        if raw.ncols() != self.cfg.input_dim() || raw.nrows() == 0 {
            return Err(Error::invalid("standardization needs non-empty rows of the input width"));
        }
        let n = raw.nrows() as f64;
        for j in 0..raw.ncols() {
            let col = raw.column(j);
            let m = col.sum() / n;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            self.mean[j] = m;
            self.std[j] = if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 };
        }
        Ok(())
    }

    /// Unstandardized `[w(y); w(e)]`.
    pub fn raw_input(&self, y: &Waveform, e: &Waveform) -> Result<Vec<f64>> {
        let mut x = mr_features(y, &self.cfg.features)?;
        x.extend(mr_features(e, &self.cfg.features)?);
        Ok(x)
    }

    pub fn standardize(&self, raw: &Array2<f64>) -> Array2<f64> {
        let mut x = raw.clone();
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        x
    }

    /// Logits for already standardized rows.
    pub(crate) fn logits(&self, x: Array2<f64>) -> (Array2<f64>, MlpTrace) {
        self.cfg.mlp().forward(&self.weights, x)
    }

    /// Predictions for already standardized rows.
    pub fn predict_rows(&self, x: Array2<f64>) -> Vec<f64> {
        self.logits(x).0.column(0).iter().map(|&l| sigmoid(l)).collect()
    }

    /// Mean squared error over standardized rows and its gradient with respect
    /// to the predictor weights.
    pub fn loss_and_grad(&self, x: Array2<f64>, lambdas: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.nrows() != lambdas.len() || lambdas.is_empty() {
            return Err(Error::invalid("one mixing ratio per input row is required"));
        }
        let n = lambdas.len() as f64;
        let (logits, trace) = self.logits(x);
        let mut d_out = Array2::zeros(logits.dim());
        let mut total = 0.0;
        for (i, &lambda) in lambdas.iter().enumerate() {
            let hat = sigmoid(logits[[i, 0]]);
            let (l, dl) = mr_loss(hat, lambda);
            total += l;
            d_out[[i, 0]] = dl * hat * (1.0 - hat) / n;
        }
        let mut grads = vec![0.0; self.weights.len()];
        self.cfg.mlp().backward(&self.weights, &trace, d_out, &mut grads);
        Ok((total / n, grads))
    }

    fn hyper(&self) -> Vec<u64> {
        vec![
            self.cfg.features.window_len as u64,
            self.cfg.features.hop as u64,
            self.cfg.features.n_bands as u64,
            self.cfg.hidden as u64,
            self.cfg.layers as u64,
        ]
    }

    /// Parameters are written as weights, then standardization means, then scales.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut all = self.weights.clone();
        all.extend(&self.mean);
        all.extend(&self.std);
        checkpoint::encode(&MAGIC, &self.hyper(), &all)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, all) = checkpoint::load(path, &MAGIC)?;
        if h.len() != 5 {
            return Err(Error::format(path, "bad predictor hyperparameter block"));
        }
        let cfg = MrConfig {
            features: FeatureConfig {
                window_len: h[0] as usize,
                hop: h[1] as usize,
                n_bands: h[2] as usize,
            },
            hidden: h[3] as usize,
            layers: h[4] as usize,
        };
        cfg.validate().map_err(|e| Error::format(path, e.to_string()))?;
        let nw = cfg.mlp().param_count();
        let d = cfg.input_dim();
        if all.len() != nw + 2 * d {
            return Err(Error::format(path, "parameter count does not match architecture"));
        }
        Ok(Self {
            cfg,
            weights: all[..nw].to_vec(),
            mean: all[nw..nw + d].to_vec(),
            std: all[nw + d..].to_vec(),
        })
    }
}

/// Predicted mixing ratio, strictly inside (0, 1).
pub fn mr_predict(params: &MrParams, y: &Waveform, e: &Waveform) -> Result<f64> {
    let raw = params.raw_input(y, e)?;
    let x = Array2::from_shape_vec((1, raw.len()), raw).expect("row shape");
    Ok(params.predict_rows(params.standardize(&x))[0])
}

/// `(lambda_hat - lambda)^2` and its derivative with respect to `lambda_hat`.
pub fn mr_loss(lambda_hat: f64, lambda: f64) -> (f64, f64) {
    let d = lambda_hat - lambda;
    (d * d, 2.0 * d)
}

/// Mixing ratio implied by the energies of the two scaled components of a
/// convex mixture of equal-energy sources: `||lambda s||^2 / ||(1-lambda) b||^2 = rho`.
pub fn lambda_from_energy_ratio(rho: f64) -> f64 {
    let q = rho.sqrt();
    q / (1.0 + q)
}
