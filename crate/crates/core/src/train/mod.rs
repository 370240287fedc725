//! Training loops for the velocity network and the mixing-ratio predictor.

mod mr;
pub mod optim;
mod state;

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{embed_enrollment, EnrollmentEmbedding, FeatureConfig};
use crate::flow::{self, sample_time_pair, AlphaSchedule, FlowSample, TimePair, TimeSampling};
use crate::metrics::evaluate_set;
use crate::mr::MrParams;
use crate::net::{self, NetConfig, NetParams};
use crate::sampler::{InferenceConfig, LambdaSource, VelocityModel};
use crate::seed;
use crate::signal::{stft, MixtureExample, StftConfig};
use crate::spectrogram::ComplexSpectrogram;

pub use mr::{train_mr, MrEpoch, MrTrainConfig, MrTrainReport};
pub use optim::{adamw_step, clip_gradients, global_norm, lr_at, AdamConfig, AdamState, LrSchedule};
pub use state::TrainState;

pub const LOG_FILE: &str = "train_log.csv";
pub const LAST_CHECKPOINT: &str = "last.bin";
pub const BEST_CHECKPOINT: &str = "best.bin";
pub const STATE_FILE: &str = "state.bin";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.txt";
const LOG_HEADER: &str = "step,epoch,alpha,lr,loss,grad_norm,branch";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub weight_decay: f64,
    pub clip: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Curriculum start and end, in epochs; converted to optimizer steps.
    pub alpha_start_epochs: f64,
    pub alpha_end_epochs: f64,
    pub alpha_gamma: f64,
    pub alpha_min: f64,
    pub time: TimeSampling,
    pub c: f64,
    /// Validate every this many epochs (and after the last one).
    pub val_every: usize,
    pub val_lambda: LambdaSource,
    /// Random crop length in frames for each training example; 0 keeps all frames.
    pub train_frames: usize,
    pub net: NetConfig,
    pub stft: StftConfig,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: LrSchedule::default(),
            weight_decay: 0.01,
            clip: 0.5,
            adam: AdamConfig::default(),
            seed: 0,
            alpha_start_epochs: 0.0,
            alpha_end_epochs: 30.0,
            alpha_gamma: 25.0,
            alpha_min: 0.005,
            time: TimeSampling::default(),
            c: flow::DEFAULT_C,
            val_every: 1,
            val_lambda: LambdaSource::Oracle,
            train_frames: 0,
            net: NetConfig::default(),
            stft: StftConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.val_every == 0 {
            return Err(Error::invalid("epochs, batch_size and val_every must be positive"));
        }
        self.lr.validate()?;
        self.adam.validate()?;
        self.time.validate()?;
        self.stft.validate()?;
        self.features.validate()?;
        self.net.validate()?;
        if !(self.weight_decay >= 0.0) || !(self.clip > 0.0) || !(self.c > 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0, clip and c > 0"));
        }
        if !(self.alpha_start_epochs >= 0.0 && self.alpha_end_epochs > self.alpha_start_epochs) {
            return Err(Error::invalid("alpha curriculum needs 0 <= start < end"));
        }
        AlphaSchedule::new(0, 1, self.alpha_gamma, self.alpha_min)?;
        if self.net.bins != self.stft.bins() {
            return Err(Error::invalid(format!(
                "network expects {} bins but the transform produces {}",
                self.net.bins,
                self.stft.bins()
            )));
        }
        if self.net.emb_dim != self.features.embedding_dim() {
            return Err(Error::invalid(format!(
                "network expects a {}-value embedding but features produce {}",
                self.net.emb_dim,
                self.features.embedding_dim()
            )));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }

    pub fn alpha_schedule(&self, steps_per_epoch: usize) -> Result<AlphaSchedule> {
        let spe = steps_per_epoch as f64;
        let k_s = (self.alpha_start_epochs * spe).round() as u64;
        let k_e = ((self.alpha_end_epochs * spe).round() as u64).max(k_s + 1);
        AlphaSchedule::new(k_s, k_e, self.alpha_gamma, self.alpha_min)
    }

    pub fn inference(&self, lambda_source: LambdaSource) -> InferenceConfig {
        InferenceConfig {
            nfe: 1,
            lambda_source,
            stft: self.stft,
            features: self.features,
            ..InferenceConfig::default()
        }
    }
}

/// Spectra and embedding of one training example, computed once.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub id: u64,
    pub lambda: f64,
    pub s: ComplexSpectrogram,
    pub b: ComplexSpectrogram,
    pub emb: EnrollmentEmbedding,
}

pub fn prepare(examples: &[MixtureExample], stft_cfg: &StftConfig, features: &FeatureConfig) -> Result<Vec<PreparedExample>> {
    examples
        .iter()
        .map(|ex| {
            Ok(PreparedExample {
                id: ex.id,
                lambda: ex.lambda,
                s: stft(&ex.s, stft_cfg.window_len, stft_cfg.hop)?,
                b: stft(&ex.b, stft_cfg.window_len, stft_cfg.hop)?,
                emb: embed_enrollment(&ex.e, features)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    FlowMatching,
    MeanFlow,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FlowMatching => "fm",
            Self::MeanFlow => "mf",
        }
    }
}

/// What one optimizer update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: f64,
    pub alpha: f64,
    pub lr: f64,
    /// Batch mean of `||prediction - target||^2`.
    pub loss: f64,
    /// Batch mean of the weighted objective.
    pub weighted_loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub branch: Branch,
}

impl StepRecord {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            self.alpha,
            self.lr,
            self.loss,
            self.grad_norm,
            self.branch.as_str()
        )
    }
}

/// The random choices of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraw {
    pub branch: Branch,
    pub times: Vec<TimePair>,
    /// First frame of each example's crop (0 when not cropping).
    pub crops: Vec<usize>,
}

/// Branch, time pairs and crop offsets used at step `k` for a batch whose
/// examples have `frames` frames each. Depends only on the seed and `k`.
pub fn draw_step(cfg: &TrainConfig, k: u64, frames: &[usize]) -> StepDraw {
    let mut rng = seed::rng(cfg.seed, seed::stream::TIME, k);
    let branch = if rng.random::<f64>() < cfg.time.flow_ratio {
        Branch::FlowMatching
    } else {
        Branch::MeanFlow
    };
    let times_cfg = TimeSampling {
        flow_ratio: if branch == Branch::FlowMatching { 1.0 } else { 0.0 },
        ..cfg.time
    };
    let times = frames.iter().map(|_| sample_time_pair(&mut rng, &times_cfg)).collect();
    let crops = frames
        .iter()
        .map(|&f| {
            if cfg.train_frames > 0 && cfg.train_frames < f {
                rng.random_range(0..=f - cfg.train_frames)
            } else {
                0
            }
        })
        .collect();
    StepDraw { branch, times, crops }
}

/// One optimizer update on `batch` at step `state.k`.
///
/// A whole batch shares one branch: with probability `flow_ratio` every example
/// is a flow-matching sample (`t == r`), otherwise every example gets its own
/// ordered pair `t <= r`. All randomness comes from the step index, so a run
/// can be resumed at any step boundary.
pub fn train_step(
    net: &mut NetParams,
    state: &mut TrainState,
    batch: &[&PreparedExample],
    cfg: &TrainConfig,
    schedule: &AlphaSchedule,
    steps_per_epoch: usize,
) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let k = state.k;
    let frames: Vec<usize> = batch.iter().map(|ex| ex.s.frames()).collect();
    let draw = draw_step(cfg, k, &frames);
    let branch = draw.branch;
    let alpha = schedule.alpha_at(k);
    let n = batch.len() as f64;
    let mut grads = vec![0.0; net.len()];
    let (mut loss, mut weighted) = (0.0, 0.0);
    for ((ex, &times), &start) in batch.iter().zip(&draw.times).zip(&draw.crops) {
        let (s, b) = if cfg.train_frames > 0 && cfg.train_frames < ex.s.frames() {
            (ex.s.frame_slice(start, cfg.train_frames)?, ex.b.frame_slice(start, cfg.train_frames)?)
        } else {
            (ex.s.clone(), ex.b.clone())
        };
        let sample = FlowSample::new(&s, &b, times, alpha, ex.lambda)?;
        let target = net::sample_target(net, &sample, &ex.emb)?;
        let (pred, cache) = net::forward_cached(net, &sample.z_t, times.t(), times.r(), &ex.emb)?;
        let out = flow::adaptive_loss(&pred, &target, alpha, cfg.c)?;
        if !out.value.is_finite() || !out.sq_error.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at step {k} for example {} (t={}, r={}, alpha={alpha})",
                ex.id,
                times.t(),
                times.r()
            )));
        }
        loss += out.sq_error / n;
        weighted += out.value / n;
        let g = net::backward(net, &cache, &out.grad)?;
        grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b / n);
    }
    let grad_norm = clip_gradients(&mut grads, cfg.clip);
    let epoch = k as f64 / steps_per_epoch as f64;
    let lr = cfg.lr.lr_at(epoch);
    net.update(|p| adamw_step(p, &grads, &mut state.adam, &cfg.adam, lr, cfg.weight_decay))?;
    if !net.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("parameters after step {k}")));
    }
    state.k += 1;
    Ok(StepRecord {
        step: k,
        epoch,
        alpha,
        lr,
        loss,
        weighted_loss: weighted,
        grad_norm,
        branch,
    })
}

/// Mean validation SI-SDR of `net` (one step); persists `best.bin` when it beats
/// the best so far. Returns the score and whether it was an improvement.
pub fn validate_and_select(
    state: &mut TrainState,
    net: &NetParams,
    val: &[MixtureExample],
    mr: Option<&MrParams>,
    cfg: &TrainConfig,
    run_dir: &Path,
) -> Result<(f64, bool)> {
    let model = VelocityModel::Network(net.clone());
    let report = evaluate_set(&model, mr, val, &cfg.inference(cfg.val_lambda))?;
    if report.aggregate.failures > 0 {
        let first = report.records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::InvalidState(format!(
            "{} validation examples failed: {first}",
            report.aggregate.failures
        )));
    }
    let score = report.aggregate.mean_si_sdr;
    let improved = state.best_val.is_none_or(|best| score > best);
    if improved {
        net.save(&run_dir.join(BEST_CHECKPOINT))?;
        state.best_val = Some(score);
        state.best_epoch = state.epoch;
    }
    Ok((score, improved))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: usize,
    pub best_val_si_sdr: f64,
    pub best_epoch: usize,
    pub final_loss: f64,
    pub best_checkpoint: PathBuf,
    pub resumed_from_step: Option<u64>,
}

/// Progress callbacks for long runs.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_validation(&mut self, _epoch: usize, _si_sdr: f64, _improved: bool) {}
}

impl TrainObserver for () {}

fn write_diagnostic(run_dir: &Path, state: &TrainState, net: &NetParams, batch_ids: &[u64], err: &Error) {
    let norm = global_norm(net.as_slice());
    let text = format!(
        "error: {err}\nstep: {}\nepoch: {}\nparameter_norm: {norm}\nparameters_finite: {}\nbatch_ids: {batch_ids:?}\n",
        state.k,
        state.epoch,
        net.as_slice().iter().all(|v| v.is_finite()),
    );
    let _ = fs::write(run_dir.join(DIAGNOSTIC_FILE), text);
}

/// Keep only the log rows for steps `< k`, so a resumed run appends after the
/// last saved state without duplicates.
fn trim_log(path: &Path, k: u64) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|step| step < k);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Train the velocity network, writing the log and checkpoints under `run_dir`.
///
/// If `run_dir` already holds a saved state the run resumes from it.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[MixtureExample],
    val_set: &[MixtureExample],
    run_dir: &Path,
    observer: &mut dyn TrainObserver,
) -> Result<TrainSummary> {
    train_with_predictor(cfg, train_set, val_set, None, run_dir, observer)
}

/// As [`train`], with an optional predictor for validation with predicted ratios.
pub fn train_with_predictor(
    cfg: &TrainConfig,
    train_set: &[MixtureExample],
    val_set: &[MixtureExample],
    mr: Option<&MrParams>,
    run_dir: &Path,
    observer: &mut dyn TrainObserver,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if cfg.val_lambda == LambdaSource::Predicted && mr.is_none() {
        return Err(Error::invalid("validation with predicted lambda needs a predictor"));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let prepared = prepare(train_set, &cfg.stft, &cfg.features)?;
    let spe = cfg.steps_per_epoch(prepared.len());
    let schedule = cfg.alpha_schedule(spe)?;

    let log_path = run_dir.join(LOG_FILE);
    let state_path = run_dir.join(STATE_FILE);
    let last_path = run_dir.join(LAST_CHECKPOINT);
    let (mut net, mut state, resumed) = if state_path.exists() && last_path.exists() {
        let net = NetParams::load(&last_path)?;
        if net.config() != &cfg.net {
            return Err(Error::invalid("saved network architecture differs from the configuration"));
        }
        let state = TrainState::load(&state_path, net.len())?;
        trim_log(&log_path, state.k)?;
        let k = state.k;
        (net, state, Some(k))
    } else {
        let net = NetParams::init(cfg.net, cfg.seed)?;
        let state = TrainState::new(net.len());
        fs::write(&log_path, format!("{LOG_HEADER}\n")).map_err(|e| Error::io(&log_path, e))?;
        (net, state, None)
    };
    let log_file = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);

    let mut final_loss = f64::NAN;
    while state.epoch < cfg.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut seed::rng(cfg.seed, seed::stream::SHUFFLE, state.epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&i| &prepared[i]).collect();
            let record = match train_step(&mut net, &mut state, &batch, cfg, &schedule, spe) {
                Ok(r) => r,
                Err(e) => {
                    let ids: Vec<u64> = batch.iter().map(|b| b.id).collect();
                    let _ = log.flush();
                    write_diagnostic(run_dir, &state, &net, &ids, &e);
                    return Err(e);
                }
            };
            writeln!(log, "{}", record.csv_row()).map_err(|e| Error::io(&log_path, e))?;
            final_loss = record.loss;
            observer.on_step(&record);
        }
        state.epoch += 1;
        if state.epoch % cfg.val_every == 0 || state.epoch == cfg.epochs {
            let (score, improved) = validate_and_select(&mut state, &net, val_set, mr, cfg, run_dir)?;
            observer.on_validation(state.epoch, score, improved);
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        net.save(&last_path)?;
        state.save(&state_path)?;
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    if final_loss.is_nan() {
        final_loss = last_logged_loss(&log_path)?;
    }
    Ok(TrainSummary {
        steps: state.k,
        epochs: state.epoch,
        best_val_si_sdr: state.best_val.unwrap_or(f64::NAN),
        best_epoch: state.best_epoch,
        final_loss,
        best_checkpoint: run_dir.join(BEST_CHECKPOINT),
        resumed_from_step: resumed,
    })
}

fn last_logged_loss(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .last()
        .and_then(|l| l.split(',').nth(4))
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN))
}

/// Read a training log back as records.
pub fn read_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::format(path, "missing training log header"));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::format(path, format!("bad log row {line:?}")))
            };
            let branch = match f.get(6) {
                Some(&"fm") => Branch::FlowMatching,
                Some(&"mf") => Branch::MeanFlow,
                _ => return Err(Error::format(path, format!("bad branch in {line:?}"))),
            };
            Ok(StepRecord {
                step: num(0)? as u64,
                epoch: num(1)?,
                alpha: num(2)?,
                lr: num(3)?,
                loss: num(4)?,
                weighted_loss: f64::NAN,
                grad_norm: num(5)?,
                branch,
            })
        })
        .collect()
}
