//! AdamW, global-norm clipping and the warmup + cosine learning-rate schedule.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::invalid("adam betas must lie in [0, 1) and eps must be positive"));
        }
        Ok(())
    }
}

/// First and second moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay. Non-finite gradients are
/// rejected before anything is modified.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::invalid(format!(
            "optimizer sizes differ: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let decay = 1.0 - lr * weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescale `grads` so that their global L2 norm is at most `threshold`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [f64], threshold: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > threshold {
        let scale = threshold / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Linear warmup from 0 to `base_lr`, then cosine annealing between `base_lr`
/// and `min_lr` with half-period `t_max` epochs.
///
/// With `restart` the cosine keeps oscillating (`base` again at `2 * t_max`);
/// without it the rate stays at `min_lr` once the first trough is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: f64,
    pub t_max: f64,
    pub restart: bool,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            min_lr: 1e-5,
            warmup_epochs: 5.0,
            t_max: 50.0,
            restart: true,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.min_lr >= 0.0 && self.min_lr <= self.base_lr) {
            return Err(Error::invalid(format!(
                "learning rates need 0 <= min_lr ({}) <= base_lr ({}) and base_lr > 0",
                self.min_lr, self.base_lr
            )));
        }
        if !(self.warmup_epochs >= 0.0 && self.t_max > 0.0) {
            return Err(Error::invalid("warmup must be non-negative and t_max positive"));
        }
        Ok(())
    }

    /// Learning rate at a (fractional) epoch.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let epoch = epoch.max(0.0);
        if epoch < self.warmup_epochs {
            return self.base_lr * epoch / self.warmup_epochs;
        }
        let e = epoch - self.warmup_epochs;
        if !self.restart && e >= self.t_max {
            return self.min_lr;
        }
        let cos = (std::f64::consts::PI * e / self.t_max).cos();
        self.min_lr + (self.base_lr - self.min_lr) * (1.0 + cos) / 2.0
    }
}

pub fn lr_at(schedule: &LrSchedule, epoch: f64) -> f64 {
    schedule.lr_at(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_spot_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0.0), 0.0);
        assert_eq!(s.lr_at(5.0), 1e-4);
        assert!((s.lr_at(2.5) - 5e-5).abs() < 1e-20);
        assert!((s.lr_at(30.0) - 5.5e-5).abs() < 1e-18);
        assert!((s.lr_at(55.0) - 1e-5).abs() < 1e-18);
        assert!((s.lr_at(105.0) - 1e-4).abs() < 1e-18);
        let clamp = LrSchedule { restart: false, ..s };
        assert_eq!(clamp.lr_at(80.0), 1e-5);
        assert_eq!(clamp.lr_at(30.0), s.lr_at(30.0));
    }

    #[test]
    fn adamw_decay_and_noop() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0, -2.0, 0.5];
        let mut st = AdamState::new(3);
        adamw_step(&mut p, &[0.0; 3], &mut st, &cfg, 0.1, 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        adamw_step(&mut p, &[0.0; 3], &mut st, &cfg, 0.1, 0.01).unwrap();
        assert_eq!(p, vec![1.0 * 0.999, -2.0 * 0.999, 0.5 * 0.999]);
    }

    #[test]
    fn adamw_rejects_non_finite_before_mutation() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(2);
        let before = (p.clone(), st.clone());
        assert!(matches!(
            adamw_step(&mut p, &[0.1, f64::NAN], &mut st, &cfg, 0.1, 0.01),
            Err(Error::NonFinite(_))
        ));
        assert_eq!((p, st), before);
        assert!(adamw_step(&mut vec![0.0], &[0.0, 1.0], &mut AdamState::new(1), &cfg, 0.1, 0.0).is_err());
    }

    #[test]
    fn adamw_minimizes_scalar_quadratic() {
        // f(x) = 3 (x - 1.7)^2
        let cfg = AdamConfig::default();
        let mut x = vec![-4.0];
        let mut st = AdamState::new(1);
        for _ in 0..2000 {
            let g = 6.0 * (x[0] - 1.7);
            adamw_step(&mut x, &[g], &mut st, &cfg, 0.05, 0.0).unwrap();
        }
        assert!((x[0] - 1.7).abs() < 1e-6, "{}", x[0]);
    }

    #[test]
    fn clipping_spot_values() {
        let mut g = vec![0.3, 0.0];
        assert_eq!(clip_gradients(&mut g, 0.5), 0.3);
        assert_eq!(g, vec![0.3, 0.0]);
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_gradients(&mut g, 0.5), 5.0);
        assert!((global_norm(&g) - 0.5).abs() < 1e-15);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn clipping_never_grows_and_keeps_direction(
            g in prop::collection::vec(-10.0f64..10.0, 1..40),
            th in 0.01f64..5.0,
        ) {
            let mut c = g.clone();
            let before = clip_gradients(&mut c, th);
            let after = global_norm(&c);
            prop_assert!(after <= before + 1e-12);
            prop_assert!(after <= th * (1.0 + 1e-12) || before <= th);
            if before > 0.0 {
                let cos = g.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / (before * after);
                prop_assert!((cos - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn schedule_stays_in_range(e in 0.0f64..500.0) {
            let s = LrSchedule::default();
            let lr = s.lr_at(e);
            prop_assert!(lr >= 0.0 && lr <= s.base_lr * (1.0 + 1e-12));
            if e >= s.warmup_epochs {
                prop_assert!(lr >= s.min_lr * (1.0 - 1e-12));
            }
        }
    }
}
