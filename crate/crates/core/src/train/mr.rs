use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::mr::{MrConfig, MrParams};
use crate::seed;
use crate::signal::MixtureExample;

use super::optim::{adamw_step, AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub model: MrConfig,
}

impl Default for MrTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0,
            adam: AdamConfig::default(),
            seed: 0,
            model: MrConfig::default(),
        }
    }
}

impl MrTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("predictor epochs and batch size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("predictor lr must be positive and weight decay non-negative"));
        }
        self.adam.validate()?;
        self.model.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrEpoch {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrTrainReport {
    /// Row 0 is the untrained predictor.
    pub epochs: Vec<MrEpoch>,
    /// Held-out MSE of always answering 0.5.
    pub baseline_mse: f64,
    /// Population variance of the held-out mixing ratios.
    pub lambda_variance: f64,
    /// Set when held-out MSE failed to decrease at every one of the first five epochs.
    pub flagged: bool,
}

impl MrTrainReport {
    pub fn last(&self) -> &MrEpoch {
        self.epochs.last().expect("report always holds the untrained row")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse,val_mae\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_mse, e.val_mse, e.val_mae));
        }
        out
    }
}

fn raw_rows(params: &MrParams, set: &[MixtureExample]) -> Result<Array2<f64>> {
    let d = params.config().input_dim();
    let mut x = Array2::zeros((set.len(), d));
    for (mut row, ex) in x.axis_iter_mut(Axis(0)).zip(set) {
        row.assign(&ndarray::Array1::from(params.raw_input(&ex.y, &ex.e)?));
    }
    Ok(x)
}

fn errors(pred: &[f64], lambdas: &[f64]) -> (f64, f64) {
    let n = pred.len() as f64;
    let mse = pred.iter().zip(lambdas).map(|(p, l)| (p - l).powi(2)).sum::<f64>() / n;
    let mae = pred.iter().zip(lambdas).map(|(p, l)| (p - l).abs()).sum::<f64>() / n;
    (mse, mae)
}

/// Fit the predictor on `train` with mini-batch MSE, reporting held-out error
/// on `val` after every epoch. Input standardization is fitted on `train` only.
pub fn train_mr(cfg: &MrTrainConfig, train: &[MixtureExample], val: &[MixtureExample]) -> Result<(MrParams, MrTrainReport)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("predictor training needs non-empty train and validation sets"));
    }
    let mut params = MrParams::init(cfg.model, cfg.seed)?;
    let raw_train = raw_rows(&params, train)?;
    params.fit_standardization(&raw_train)?;
    let x_train = params.standardize(&raw_train);
    let x_val = params.standardize(&raw_rows(&params, val)?);
    let l_train: Vec<f64> = train.iter().map(|e| e.lambda).collect();
    let l_val: Vec<f64> = val.iter().map(|e| e.lambda).collect();

    let n_val = l_val.len() as f64;
    let mean = l_val.iter().sum::<f64>() / n_val;
    let lambda_variance = l_val.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n_val;
    let baseline_mse = l_val.iter().map(|l| (l - 0.5).powi(2)).sum::<f64>() / n_val;

    let evaluate = |p: &MrParams, epoch: usize| {
        let (train_mse, _) = errors(&p.predict_rows(x_train.clone()), &l_train);
        let (val_mse, val_mae) = errors(&p.predict_rows(x_val.clone()), &l_val);
        MrEpoch {
            epoch,
            train_mse,
            val_mse,
            val_mae,
        }
    };
    let mut epochs = vec![evaluate(&params, 0)];
    let mut adam = AdamState::new(params.weights().len());
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(cfg.seed, seed::stream::SHUFFLE ^ 1, epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let x = x_train.select(Axis(0), chunk);
            let l: Vec<f64> = chunk.iter().map(|&i| l_train[i]).collect();
            let (_, grads) = params.loss_and_grad(x, &l)?;
            adamw_step(params.weights_mut(), &grads, &mut adam, &cfg.adam, cfg.lr, cfg.weight_decay)?;
        }
        epochs.push(evaluate(&params, epoch + 1));
    }
    let flagged = epochs
        .windows(2)
        .take(5)
        .any(|w| !(w[1].val_mse < w[0].val_mse));
    Ok((
        params,
        MrTrainReport {
            epochs,
            baseline_mse,
            lambda_variance,
            flagged,
        },
    ))
}
