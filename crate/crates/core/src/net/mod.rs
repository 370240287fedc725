//! Conditional average-velocity network `v(z_t, t, r, e)`.
//!
//! Each spectrogram frame is processed independently by a shared tanh
//! perceptron. Its input is the frame's scaled real and imaginary parts, the
//! frame's log-magnitudes (optionally with those of the neighbouring frames),
//! sinusoidal embeddings of `t` and `r`, and the enrollment embedding. The head
//! emits, per bin, an additive complex term and a complex gain applied to the
//! input bin; the sum is multiplied by a learned scalar. The head starts at
//! zero, so a fresh network predicts the zero velocity field.

pub mod checkpoint;
mod mlp;

pub(crate) use mlp::{Mlp, MlpTrace};

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::EnrollmentEmbedding;
use crate::flow::{self, FlowSample};
use crate::seed;
use crate::spectrogram::ComplexSpectrogram;

pub const MAGIC: checkpoint::Magic = *b"MFVELNET";

const LOGMAG_FLOOR: f64 = 1e-3;
const LOGMAG_SCALE: f64 = 0.25;
const MAX_FREQ: f64 = 1000.0;

/// Sinusoidal features `[sin(x w_0), .., sin(x w_{n-1}), cos(x w_0), ..]` with
/// `n = dim / 2` frequencies spaced geometrically from 1 to 1000.
pub fn embed_time(x: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid(format!("time embedding width {dim} must be even and positive")));
    }
    let half = dim / 2;
    let freq = |k: usize| {
        if half == 1 {
            1.0
        } else {
            MAX_FREQ.powf(k as f64 / (half - 1) as f64)
        }
    };
    let mut out: Vec<f64> = (0..half).map(|k| (x * freq(k)).sin()).collect();
    out.extend((0..half).map(|k| (x * freq(k)).cos()));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub bins: usize,
    pub hidden: usize,
    pub layers: usize,
    pub time_dim: usize,
    pub emb_dim: usize,
    /// Neighbouring frames on each side whose log-magnitudes join the input (0 or 1).
    pub context: usize,
    /// Fixed factor applied to spectrogram values entering the network.
    pub input_scale: f64,
    /// Fixed factor applied to the enrollment embedding.
    pub emb_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            bins: 129,
            hidden: 128,
            layers: 3,
            time_dim: 16,
            emb_dim: 64,
            context: 0,
            input_scale: 1.0 / 16.0,
            emb_scale: 0.2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.hidden == 0 || self.layers == 0 || self.emb_dim == 0 {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::invalid("time embedding width must be even and positive"));
        }
        if self.context > 1 {
            return Err(Error::invalid("frame context must be 0 or 1"));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite())
            || !(self.emb_scale > 0.0 && self.emb_scale.is_finite())
        {
            return Err(Error::invalid("input scales must be positive and finite"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.bins + self.bins * (1 + 2 * self.context) + 2 * self.time_dim + self.emb_dim
    }

    pub fn output_dim(&self) -> usize {
        4 * self.bins
    }

    pub(crate) fn mlp(&self) -> Mlp {
        let mut dims = vec![self.input_dim()];
        dims.extend(std::iter::repeat_n(self.hidden, self.layers));
        dims.push(self.output_dim());
        Mlp::new(dims)
    }

    /// Trainable parameters: the perceptron plus the output gain.
    pub fn param_count(&self) -> usize {
        self.mlp().param_count() + 1
    }

    fn hyper(&self) -> Vec<u64> {
        vec![
            self.bins as u64,
            self.hidden as u64,
            self.layers as u64,
            self.time_dim as u64,
            self.emb_dim as u64,
            self.context as u64,
            self.input_scale.to_bits(),
            self.emb_scale.to_bits(),
        ]
    }

    fn from_hyper(h: &[u64]) -> Option<Self> {
        if h.len() != 8 {
            return None;
        }
        Some(Self {
            bins: h[0] as usize,
            hidden: h[1] as usize,
            layers: h[2] as usize,
            time_dim: h[3] as usize,
            emb_dim: h[4] as usize,
            context: h[5] as usize,
            input_scale: f64::from_bits(h[6]),
            emb_scale: f64::from_bits(h[7]),
        })
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Network parameters in declaration order: for every layer a row-major
/// weight matrix and its bias, then the scalar output gain.
#[derive(Debug, Clone)]
pub struct NetParams {
    cfg: NetConfig,
    data: Vec<f64>,
    version: u64,
}

impl PartialEq for NetParams {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.data == other.data
    }
}

impl NetParams {
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed, seed::stream::INIT, 0);
        let mut data = cfg.mlp().init(&mut rng, true);
        data.push(1.0);
        Ok(Self {
            cfg,
            data,
            version: next_version(),
        })
    }

    pub fn from_vec(cfg: NetConfig, data: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if data.len() != cfg.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                cfg.param_count(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Self {
            cfg,
            data,
            version: next_version(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn gain(&self) -> f64 {
        *self.data.last().unwrap()
    }

    /// Mutate the parameters. Any cached forward state becomes stale.
    pub fn update<T>(&mut self, f: impl FnOnce(&mut [f64]) -> T) -> T {
        self.version = next_version();
        f(&mut self.data)
    }

    /// Add `N(0, scale^2)` noise to every parameter.
    pub fn perturb(&mut self, seed: u64, scale: f64) {
        let mut rng = seed::rng(seed, seed::stream::GRAD_CHECK, 1);
        let normal = Normal::new(0.0, scale).unwrap();
        self.update(|d| d.iter_mut().for_each(|v| *v += normal.sample(&mut rng)));
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &MAGIC, &self.cfg.hyper(), &self.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&MAGIC, &self.cfg.hyper(), &self.data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (hyper, data) = checkpoint::load(path, &MAGIC)?;
        let cfg = NetConfig::from_hyper(&hyper)
            .ok_or_else(|| Error::format(path, "bad network hyperparameter block"))?;
        Self::from_vec(cfg, data).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// State retained by [`forward_cached`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    z: ComplexSpectrogram,
    trace: MlpTrace,
    head: Array2<f64>,
}

fn check_inputs(params: &NetParams, z: &ComplexSpectrogram, emb: &EnrollmentEmbedding) -> Result<()> {
    let cfg = &params.cfg;
    if z.bins() != cfg.bins {
        return Err(Error::invalid(format!(
            "spectrogram has {} bins, network expects {}",
            z.bins(),
            cfg.bins
        )));
    }
    if z.frames() == 0 {
        return Err(Error::invalid("spectrogram has no frames"));
    }
    if emb.dim() != cfg.emb_dim {
        return Err(Error::invalid(format!(
            "enrollment embedding has {} values, network expects {}",
            emb.dim(),
            cfg.emb_dim
        )));
    }
    Ok(())
}

fn build_input(cfg: &NetConfig, z: &ComplexSpectrogram, t: f64, r: f64, emb: &EnrollmentEmbedding) -> Result<Array2<f64>> {
    let (frames, bins) = z.shape();
    let s = cfg.input_scale;
    let t_emb = embed_time(t, cfg.time_dim)?;
    let r_emb = embed_time(r, cfg.time_dim)?;
    let logmag = Array2::from_shape_fn((frames, bins), |(f, k)| {
        let p = (z.re[[f, k]] * s).powi(2) + (z.im[[f, k]] * s).powi(2);
        LOGMAG_SCALE * (p + LOGMAG_FLOOR).ln()
    });
    let mut x = Array2::zeros((frames, cfg.input_dim()));
    for f in 0..frames {
        let mut row = x.row_mut(f);
        let mut col = 0;
        for k in 0..bins {
            row[col + k] = z.re[[f, k]] * s;
            row[col + bins + k] = z.im[[f, k]] * s;
        }
        col += 2 * bins;
        let ctx = cfg.context as isize;
        for df in -ctx..=ctx {
            let g = f as isize + df;
            if g >= 0 && (g as usize) < frames {
                for k in 0..bins {
                    row[col + k] = logmag[[g as usize, k]];
                }
            }
            col += bins;
        }
        for &v in t_emb.iter().chain(&r_emb) {
            row[col] = v;
            col += 1;
        }
        for &v in emb.as_slice() {
            row[col] = v * cfg.emb_scale;
            col += 1;
        }
    }
    Ok(x)
}

pub fn forward(
    params: &NetParams,
    z: &ComplexSpectrogram,
    t: f64,
    r: f64,
    emb: &EnrollmentEmbedding,
) -> Result<ComplexSpectrogram> {
    forward_cached(params, z, t, r, emb).map(|(v, _)| v)
}

pub fn forward_cached(
    params: &NetParams,
    z: &ComplexSpectrogram,
    t: f64,
    r: f64,
    emb: &EnrollmentEmbedding,
) -> Result<(ComplexSpectrogram, ForwardCache)> {
    check_inputs(params, z, emb)?;
    let cfg = &params.cfg;
    let x = build_input(cfg, z, t, r, emb)?;
    let mlp = cfg.mlp();
    let n = mlp.param_count();
    let (head, trace) = mlp.forward(&params.data[..n], x);
    let g = params.gain();
    let bins = cfg.bins;
    let inv = 1.0 / cfg.input_scale;
    let mut v = z.zeros_like();
    for f in 0..z.frames() {
        for k in 0..bins {
            let (zr, zi) = (z.re[[f, k]], z.im[[f, k]]);
            let (a_re, a_im) = (head[[f, k]], head[[f, bins + k]]);
            let (m_re, m_im) = (head[[f, 2 * bins + k]], head[[f, 3 * bins + k]]);
            v.re[[f, k]] = g * (a_re * inv + m_re * zr - m_im * zi);
            v.im[[f, k]] = g * (a_im * inv + m_re * zi + m_im * zr);
        }
    }
    if !v.is_finite() {
        return Err(Error::NonFinite("network output".into()));
    }
    let cache = ForwardCache {
        version: params.version,
        z: z.clone(),
        trace,
        head,
    };
    Ok((v, cache))
}

/// Gradients of `<upstream, forward(..)>` with respect to every parameter,
/// aligned with [`NetParams::as_slice`].
pub fn backward(params: &NetParams, cache: &ForwardCache, upstream: &ComplexSpectrogram) -> Result<Vec<f64>> {
    if cache.version != params.version {
        return Err(Error::InvalidState(
            "forward cache was produced by a different parameter state".into(),
        ));
    }
    cache.z.ensure_same_shape(upstream, "upstream gradient")?;
    let cfg = &params.cfg;
    let bins = cfg.bins;
    let g = params.gain();
    let inv = 1.0 / cfg.input_scale;
    let z = &cache.z;
    let head = &cache.head;
    let mut d_head = Array2::zeros(head.dim());
    let mut d_gain = 0.0;
    for f in 0..z.frames() {
        for k in 0..bins {
            let (zr, zi) = (z.re[[f, k]], z.im[[f, k]]);
            let (gr, gi) = (upstream.re[[f, k]], upstream.im[[f, k]]);
            let (a_re, a_im) = (head[[f, k]], head[[f, bins + k]]);
            let (m_re, m_im) = (head[[f, 2 * bins + k]], head[[f, 3 * bins + k]]);
            let pre_re = a_re * inv + m_re * zr - m_im * zi;
            let pre_im = a_im * inv + m_re * zi + m_im * zr;
            d_gain += gr * pre_re + gi * pre_im;
            d_head[[f, k]] = g * gr * inv;
            d_head[[f, bins + k]] = g * gi * inv;
            d_head[[f, 2 * bins + k]] = g * (gr * zr + gi * zi);
            d_head[[f, 3 * bins + k]] = g * (gi * zr - gr * zi);
        }
    }
    let mlp = cfg.mlp();
    let n = mlp.param_count();
    let mut grads = vec![0.0; params.len()];
    mlp.backward(&params.data[..n], &cache.trace, d_head, &mut grads[..n]);
    grads[n] = d_gain;
    Ok(grads)
}

/// Regression target for `sample`: `u` on flow-matching samples or when
/// `alpha == 1`, otherwise the alpha-flow mix with a frozen evaluation at `tau`.
pub(crate) fn sample_target(params: &NetParams, sample: &FlowSample, emb: &EnrollmentEmbedding) -> Result<ComplexSpectrogram> {
    if sample.times.is_flow_matching() || sample.alpha == 1.0 {
        return Ok(sample.u.clone());
    }
    let tau = sample.times.tau(sample.alpha);
    let mut z_tau = sample.z_t.clone();
    z_tau.axpy(tau - sample.times.t(), &sample.u)?;
    let v_tau = forward(params, &z_tau, tau, sample.times.r(), emb)?;
    flow::alpha_target(&sample.u, &v_tau, sample.alpha)
}

/// Compare [`backward`] with central differences of the adaptive loss on a
/// random 5% subset of parameters (at least 8). Returns the largest relative
/// error; a component whose analytic and numeric values are both zero counts as 0.
pub fn grad_check(
    params: &NetParams,
    sample: &FlowSample,
    emb: &EnrollmentEmbedding,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let (t, r) = (sample.times.t(), sample.times.r());
    let target = sample_target(params, sample, emb)?;
    let (pred, cache) = forward_cached(params, &sample.z_t, t, r, emb)?;
    let loss = flow::adaptive_loss(&pred, &target, sample.alpha, flow::DEFAULT_C)?;
    let weight = loss.weight;
    let analytic = backward(params, &cache, &loss.grad)?;

    let objective = |p: &NetParams| -> Result<f64> {
        let v = forward(p, &sample.z_t, t, r, emb)?;
        Ok(weight * ComplexSpectrogram::lin_comb(1.0, &v, -1.0, &target)?.sq_norm())
    };
    let n = params.len();
    let count = (n / 20).max(8).min(n);
    let mut rng = seed::rng(seed, seed::stream::GRAD_CHECK, 0);
    let mut probe = params.clone();
    let mut worst = 0.0_f64;
    for i in sample_indices(&mut rng, n, count) {
        let orig = probe.data[i];
        probe.update(|d| d[i] = orig + eps);
        let plus = objective(&probe)?;
        probe.update(|d| d[i] = orig - eps);
        let minus = objective(&probe)?;
        probe.update(|d| d[i] = orig);
        let fd = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], fd));
    }
    Ok(worst)
}

/// `|a - b| / max(|a|, |b|)`, defined as 0 when both are 0.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
