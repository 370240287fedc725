use std::path::Path;

use crate::error::{Error, Result};
use crate::net::checkpoint;

use super::optim::AdamState;

pub const MAGIC: checkpoint::Magic = *b"MFTRSTAT";

/// Everything besides the parameters needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Optimizer updates taken so far.
    pub k: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub adam: AdamState,
    pub best_val: Option<f64>,
    pub best_epoch: usize,
}

impl TrainState {
    pub fn new(n_params: usize) -> Self {
        Self {
            k: 0,
            epoch: 0,
            adam: AdamState::new(n_params),
            best_val: None,
            best_epoch: 0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.adam.m.len();
        let hyper = [
            self.k,
            self.epoch as u64,
            self.adam.t,
            self.best_val.is_some() as u64,
            self.best_epoch as u64,
            n as u64,
        ];
        let mut values = Vec::with_capacity(2 * n + 1);
        values.extend(&self.adam.m);
        values.extend(&self.adam.v);
        values.push(self.best_val.unwrap_or(0.0));
        checkpoint::encode(&MAGIC, &hyper, &values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path, n_params: usize) -> Result<Self> {
        let (h, values) = checkpoint::load(path, &MAGIC)?;
        if h.len() != 6 || h[5] as usize != n_params || values.len() != 2 * n_params + 1 {
            return Err(Error::format(path, "training state does not match the network size"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::format(path, "non-finite optimizer moments"));
        }
        Ok(Self {
            k: h[0],
            epoch: h[1] as usize,
            adam: AdamState {
                m: values[..n_params].to_vec(),
                v: values[n_params..2 * n_params].to_vec(),
                t: h[2],
            },
            best_val: (h[3] == 1).then_some(values[2 * n_params]),
            best_epoch: h[4] as usize,
        })
    }
}
