//! Trajectory and objective math for mean-flow training on the mixing path.
//!
//! The path runs from the background spectrogram `B` at `t = 0` to the target
//! `S` at `t = 1`; a mixture with ratio `lambda` sits exactly at `t = lambda`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::spectrogram::ComplexSpectrogram;

/// Two sampled times closer than this are treated as the flow-matching branch.
pub const TIE_EPS: f64 = 1e-9;

/// Adaptive weight offset used by default.
pub const DEFAULT_C: f64 = 1e-3;

/// `t * S + (1 - t) * B`.
pub fn interpolate(s: &ComplexSpectrogram, b: &ComplexSpectrogram, t: f64) -> Result<ComplexSpectrogram> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("path time {t} outside [0, 1]")));
    }
    ComplexSpectrogram::lin_comb(t, s, 1.0 - t, b)
}

/// Direction of the straight path, `u = S - B`.
pub fn ground_truth_velocity(s: &ComplexSpectrogram, b: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    ComplexSpectrogram::lin_comb(1.0, s, -1.0, b)
}

/// Ordered flow times `0 <= t <= r <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePair {
    t: f64,
    r: f64,
}

impl TimePair {
    pub fn new(t: f64, r: f64) -> Result<Self> {
        if !(0.0 <= t && t <= r && r <= 1.0) {
            return Err(Error::invalid(format!("time pair ({t}, {r}) violates 0 <= t <= r <= 1")));
        }
        Ok(Self { t, r })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// True when the pair collapses to a single time (plain flow matching).
    pub fn is_flow_matching(&self) -> bool {
        self.r - self.t < TIE_EPS
    }

    pub fn tau(&self, alpha: f64) -> f64 {
        tau(self.t, self.r, alpha)
    }
}

/// How raw normal draws are mapped into the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeFamily {
    /// `sigmoid(N(mu, sigma))`.
    LogitNormal,
    /// `exp(N(mu, sigma))` clipped into `[EXP_CLIP, 1 - EXP_CLIP]`.
    LogNormalClipped,
}

const EXP_CLIP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSampling {
    pub mu: f64,
    pub sigma: f64,
    pub flow_ratio: f64,
    pub family: TimeFamily,
}

impl Default for TimeSampling {
    fn default() -> Self {
        Self {
            mu: -0.4,
            sigma: 1.0,
            flow_ratio: 0.5,
            family: TimeFamily::LogitNormal,
        }
    }
}

impl TimeSampling {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.mu.is_finite() {
            return Err(Error::invalid("time sampling needs finite mu and sigma > 0"));
        }
        if !(0.0..=1.0).contains(&self.flow_ratio) {
            return Err(Error::invalid(format!("flow ratio {} outside [0, 1]", self.flow_ratio)));
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Draw `(t, r)`: two unit-interval samples ordered as `t <= r`, then with
/// probability `flow_ratio` collapse to `r = t`.
pub fn sample_time_pair<R: Rng + ?Sized>(rng: &mut R, cfg: &TimeSampling) -> TimePair {
    let normal = Normal::new(cfg.mu, cfg.sigma).expect("validated sigma");
    let mut draw = || {
        let x: f64 = normal.sample(rng);
        match cfg.family {
            TimeFamily::LogitNormal => sigmoid(x),
            TimeFamily::LogNormalClipped => x.exp().clamp(EXP_CLIP, 1.0 - EXP_CLIP),
        }
    };
    let (a, b) = (draw(), draw());
    let (t, mut r) = (a.min(b), a.max(b));
    let collapse: f64 = rng.random();
    if collapse < cfg.flow_ratio || r - t < TIE_EPS {
        r = t;
    }
    TimePair { t, r }
}

/// Sigmoid curriculum over optimizer steps moving alpha from 1 to `alpha_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSchedule {
    pub k_s: u64,
    pub k_e: u64,
    pub gamma: f64,
    pub alpha_min: f64,
}

impl AlphaSchedule {
    pub fn new(k_s: u64, k_e: u64, gamma: f64, alpha_min: f64) -> Result<Self> {
        let s = Self {
            k_s,
            k_e,
            gamma,
            alpha_min,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_s >= self.k_e {
            return Err(Error::invalid(format!(
                "curriculum start {} must precede end {}",
                self.k_s, self.k_e
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("curriculum steepness must be positive"));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= 1.0) {
            return Err(Error::invalid(format!("alpha_min {} outside (0, 1]", self.alpha_min)));
        }
        Ok(())
    }

    pub fn alpha_at(&self, k: u64) -> f64 {
        alpha_at(self, k)
    }
}

/// `clip(1 - sigmoid(gamma * ((k - k_s) / (k_e - k_s) - 0.5)), alpha_min, 1)`.
pub fn alpha_at(sched: &AlphaSchedule, k: u64) -> f64 {
    let progress = (k as f64 - sched.k_s as f64) / (sched.k_e as f64 - sched.k_s as f64);
    (1.0 - sigmoid(sched.gamma * (progress - 0.5))).clamp(sched.alpha_min, 1.0)
}

/// Intermediate time `alpha * r + (1 - alpha) * t`.
pub fn tau(t: f64, r: f64, alpha: f64) -> f64 {
    alpha * r + (1.0 - alpha) * t
}

/// `alpha * u + (1 - alpha) * v_tau`, where `v_tau` is a frozen network evaluation.
///
/// Flow-matching samples (`t == r`) must use `u` directly instead.
pub fn alpha_target(
    u: &ComplexSpectrogram,
    v_at_tau: &ComplexSpectrogram,
    alpha: f64,
) -> Result<ComplexSpectrogram> {
    if alpha == 1.0 {
        u.ensure_same_shape(v_at_tau, "alpha target")?;
        return Ok(u.clone());
    }
    ComplexSpectrogram::lin_comb(alpha, u, 1.0 - alpha, v_at_tau)
}

/// `alpha / (delta_sq_norm + c)`.
pub fn adaptive_weight(delta_sq_norm: f64, alpha: f64, c: f64) -> f64 {
    alpha / (delta_sq_norm + c)
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient of `value` with respect to the prediction, weight held constant.
    pub grad: ComplexSpectrogram,
    pub weight: f64,
    /// `||prediction - target||^2` before weighting.
    pub sq_error: f64,
}

/// Weighted squared error `sg(w) * ||v_pred - target||^2`.
pub fn adaptive_loss(
    v_pred: &ComplexSpectrogram,
    target: &ComplexSpectrogram,
    alpha: f64,
    c: f64,
) -> Result<LossOutput> {
    let delta = ComplexSpectrogram::lin_comb(1.0, v_pred, -1.0, target)?;
    let sq_error = delta.sq_norm();
    let weight = adaptive_weight(sq_error, alpha, c);
    Ok(LossOutput {
        value: weight * sq_error,
        grad: delta.scaled(2.0 * weight),
        weight,
        sq_error,
    })
}

/// A point on the path together with its supervision.
#[derive(Debug, Clone)]
pub struct FlowSample {
    pub z_t: ComplexSpectrogram,
    pub u: ComplexSpectrogram,
    pub times: TimePair,
    pub alpha: f64,
    pub lambda: f64,
}

impl FlowSample {
    pub fn new(
        s: &ComplexSpectrogram,
        b: &ComplexSpectrogram,
        times: TimePair,
        alpha: f64,
        lambda: f64,
    ) -> Result<Self> {
        Ok(Self {
            z_t: interpolate(s, b, times.t())?,
            u: ground_truth_velocity(s, b)?,
            times,
            alpha,
            lambda,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(frames: usize, bins: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let re = Array2::from_shape_fn((frames, bins), |_| rng.random_range(-3.0..3.0));
        let im = Array2::from_shape_fn((frames, bins), |_| rng.random_range(-3.0..3.0));
        ComplexSpectrogram::from_parts(re, im, 4, 2 * (bins - 1)).unwrap()
    }

    #[test]
    fn interpolation_endpoints() {
        let s = random_spec(3, 5, 1);
        let b = random_spec(3, 5, 2);
        assert_eq!(interpolate(&s, &b, 0.0).unwrap(), b);
        assert_eq!(interpolate(&s, &b, 1.0).unwrap(), s);
        let same = interpolate(&s, &s, 0.37).unwrap();
        assert!(same.max_abs_diff(&s).unwrap() <= 1e-15 * s.max_abs());
        assert!(interpolate(&s, &random_spec(2, 5, 3), 0.5).is_err());
        assert!(interpolate(&s, &b, 1.5).is_err());
    }

    #[test]
    fn velocity_identities() {
        let s = random_spec(3, 5, 1);
        assert_eq!(ground_truth_velocity(&s, &s).unwrap().max_abs(), 0.0);
        let zero = s.zeros_like();
        assert_eq!(ground_truth_velocity(&s, &zero).unwrap(), s);
        assert!(ground_truth_velocity(&s, &random_spec(3, 4, 3)).is_err());
    }

    #[test]
    fn time_pair_invariants() {
        assert!(TimePair::new(0.2, 0.1).is_err());
        assert!(TimePair::new(-0.1, 0.5).is_err());
        assert!(TimePair::new(0.3, 0.3).unwrap().is_flow_matching());
        assert!(TimePair::new(0.3, 0.3 + 1e-10).unwrap().is_flow_matching());
        assert!(!TimePair::new(0.3, 0.4).unwrap().is_flow_matching());
    }

    #[test]
    fn sampled_pairs_are_ordered_and_open() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = TimeSampling::default();
        for _ in 0..20_000 {
            let p = sample_time_pair(&mut rng, &cfg);
            assert!(0.0 < p.t() && p.t() <= p.r() && p.r() < 1.0);
        }
        let clipped = TimeSampling {
            family: TimeFamily::LogNormalClipped,
            ..cfg
        };
        for _ in 0..20_000 {
            let p = sample_time_pair(&mut rng, &clipped);
            assert!(0.0 < p.t() && p.t() <= p.r() && p.r() < 1.0);
        }
    }

    #[test]
    fn forced_flow_matching_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = TimeSampling {
            flow_ratio: 1.0,
            ..TimeSampling::default()
        };
        for _ in 0..1000 {
            let p = sample_time_pair(&mut rng, &cfg);
            assert_eq!(p.t(), p.r());
        }
    }

    /// Box-Muller over a xorshift generator, unrelated to the sampler's RNG stack.
    struct Oracle(u64);
    impl Oracle {
        fn uniform(&mut self) -> f64 {
            self.0 ^= self.0 << 13;
            self.0 ^= self.0 >> 7;
            self.0 ^= self.0 << 17;
            ((self.0 >> 11) as f64 + 0.5) / (1u64 << 53) as f64
        }
        fn normal(&mut self) -> f64 {
            let (u1, u2) = (self.uniform(), self.uniform());
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }

    #[test]
    fn mean_of_t_matches_monte_carlo_oracle() {
        let (mu, sigma) = (-0.4, 1.0);
        let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut oracle = Oracle(0x2545_f491_4f6c_dd1d);
        let m = 1_000_000;
        let oracle_mean = (0..m)
            .map(|_| {
                let a = logistic(mu + sigma * oracle.normal());
                let b = logistic(mu + sigma * oracle.normal());
                a.min(b)
            })
            .sum::<f64>()
            / m as f64;

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = TimeSampling::default();
        let n = 100_000;
        let ts: Vec<f64> = (0..n).map(|_| sample_time_pair(&mut rng, &cfg).t()).collect();
        let mean = ts.iter().sum::<f64>() / n as f64;
        let var = ts.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - oracle_mean).abs() < 3.0 * se, "{mean} vs {oracle_mean} (se {se})");
    }

    #[test]
    fn alpha_schedule_spot_values() {
        let s = AlphaSchedule::new(0, 1000, 25.0, 0.005).unwrap();
        assert_eq!(alpha_at(&s, 500), 0.5);
        // sigmoid(12.5) = 1 - 3.7266e-6, so the raw value sits far below alpha_min.
        let raw_end = 1.0 - sigmoid(12.5);
        assert!((raw_end - 3.7266e-6).abs() < 1e-9);
        assert_eq!(alpha_at(&s, 1000), 0.005);
        assert_eq!(alpha_at(&s, 5000), 0.005);
        assert!(alpha_at(&s, 0) > 0.99999);
        assert!(AlphaSchedule::new(5, 5, 25.0, 0.005).is_err());
        assert!(AlphaSchedule::new(0, 5, 0.0, 0.005).is_err());
        assert!(AlphaSchedule::new(0, 5, 1.0, 0.0).is_err());
    }

    #[test]
    fn tau_values() {
        assert_eq!(tau(0.2, 0.8, 1.0), 0.8);
        assert_eq!(tau(0.2, 0.8, 0.0), 0.2);
        assert!((tau(0.2, 0.8, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn alpha_target_endpoints() {
        let u = random_spec(2, 3, 5);
        let v = random_spec(2, 3, 6);
        assert_eq!(alpha_target(&u, &v, 1.0).unwrap(), u);
        assert_eq!(alpha_target(&u, &v, 0.0).unwrap(), v);
        let same = alpha_target(&u, &u, 0.3).unwrap();
        assert!(same.max_abs_diff(&u).unwrap() < 1e-14);
        assert!(alpha_target(&u, &random_spec(3, 3, 1), 0.5).is_err());
    }

    #[test]
    fn adaptive_weight_values() {
        assert!((adaptive_weight(0.0, 0.5, 1e-3) - 500.0).abs() < 1e-9);
        assert!((adaptive_weight(0.999, 0.5, 1e-3) - 0.5).abs() < 1e-12);
        assert!(adaptive_weight(1.0, 0.5, 1e-3) > adaptive_weight(1.1, 0.5, 1e-3));
    }

    #[test]
    fn loss_at_target_is_zero() {
        let v = random_spec(3, 4, 9);
        let out = adaptive_loss(&v, &v, 0.7, DEFAULT_C).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.grad.max_abs(), 0.0);
    }

    #[test]
    fn large_c_reduces_to_scaled_regression_gradient() {
        let v = random_spec(2, 3, 1);
        let t = random_spec(2, 3, 2);
        let c = 1e12;
        let out = adaptive_loss(&v, &t, 1.0, c).unwrap();
        let delta = ComplexSpectrogram::lin_comb(1.0, &v, -1.0, &t).unwrap();
        let expect = delta.scaled(2.0 / c);
        let rel = out.grad.max_abs_diff(&expect).unwrap() / expect.max_abs();
        assert!(rel < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn path_consistency(seed in 0u64..1000, t in 0.0f64..=1.0) {
            let s = random_spec(4, 6, seed);
            let b = random_spec(4, 6, seed + 7);
            let z = interpolate(&s, &b, t).unwrap();
            let u = ground_truth_velocity(&s, &b).unwrap();
            let back = ComplexSpectrogram::lin_comb(1.0, &z, 1.0 - t, &u).unwrap();
            prop_assert!(back.max_abs_diff(&s).unwrap() <= 1e-10 * s.max_abs());
        }

        #[test]
        fn schedule_monotone_and_bounded(k_e in 2u64..5000, gamma in 0.5f64..50.0) {
            let s = AlphaSchedule::new(0, k_e, gamma, 0.005).unwrap();
            let mut prev = f64::INFINITY;
            for k in 0..=(2 * k_e).min(4000) {
                let a = s.alpha_at(k);
                prop_assert!((0.005..=1.0).contains(&a));
                prop_assert!(a <= prev);
                prev = a;
            }
        }

        #[test]
        fn weight_positive(d in 0.0f64..1e6, alpha in 1e-6f64..=1.0) {
            prop_assert!(adaptive_weight(d, alpha, DEFAULT_C) > 0.0);
        }

        /// Central differences of the loss with the weight frozen at its evaluated value.
        #[test]
        fn loss_gradient_matches_finite_differences(seed in 0u64..10_000, frames in 1usize..5, bins in 2usize..6, alpha in 0.01f64..=1.0) {
            let v = random_spec(frames, bins, seed).scaled(0.1);
            let t = random_spec(frames, bins, seed + 1).scaled(0.1);
            let out = adaptive_loss(&v, &t, alpha, DEFAULT_C).unwrap();
            let frozen = out.weight;
            let value_at = |p: &ComplexSpectrogram| -> f64 {
                frozen * ComplexSpectrogram::lin_comb(1.0, p, -1.0, &t).unwrap().sq_norm()
            };
            let h = 1e-6;
            for f in 0..frames {
                for k in 0..bins {
                    for plane in 0..2 {
                        let mut plus = v.clone();
                        let mut minus = v.clone();
                        let (p, m, g) = if plane == 0 {
                            (&mut plus.re[[f, k]], &mut minus.re[[f, k]], out.grad.re[[f, k]])
                        } else {
                            (&mut plus.im[[f, k]], &mut minus.im[[f, k]], out.grad.im[[f, k]])
                        };
                        *p += h;
                        *m -= h;
                        let fd = (value_at(&plus) - value_at(&minus)) / (2.0 * h);
                        let denom = fd.abs().max(g.abs()).max(1e-8);
                        prop_assert!((fd - g).abs() / denom < 1e-5, "fd {} analytic {}", fd, g);
                    }
                }
            }
        }
    }
}
