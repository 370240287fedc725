//! Experiment configuration: one TOML file of flat dotted keys.
//!
//! Every key has a default, unknown keys are rejected, and the whole
//! configuration is validated before any command does work. Relative paths are
//! resolved against the directory holding the configuration file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use meanflow_core::flow::TimeFamily;
use meanflow_core::{DatasetConfig, InferenceConfig, LambdaSource, MrTrainConfig, TrainConfig};
use toml::Value;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub dir: PathBuf,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub gen: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub out_dir: PathBuf,
    pub split: String,
    pub write_waveforms: bool,
    pub nfe_list: Vec<usize>,
    pub mr_checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Root seed; data, initialization, time sampling and shuffling derive from it.
    pub seed: u64,
    pub data: DataSection,
    pub train: TrainConfig,
    pub train_out: PathBuf,
    pub mr: MrTrainConfig,
    pub mr_out: PathBuf,
    pub infer: InferenceConfig,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            data: DataSection {
                dir: "data".into(),
                n_train: 512,
                n_val: 64,
                n_test: 64,
                gen: DatasetConfig::default(),
            },
            train: TrainConfig::default(),
            train_out: "runs/velocity".into(),
            mr: MrTrainConfig::default(),
            mr_out: "runs/mr".into(),
            infer: InferenceConfig::default(),
            eval: EvalSection {
                out_dir: "runs/eval".into(),
                split: "test".into(),
                write_waveforms: true,
                nfe_list: vec![1, 2, 4, 8, 16],
                mr_checkpoint: "runs/mr/mr.bin".into(),
            },
        };
        cfg.sync();
        cfg
    }
}

trait ConfigValue: Sized {
    const KIND: &'static str;
    fn from_toml(v: &Value) -> std::result::Result<Self, String>;
    fn to_toml(&self) -> Value;
}

fn integer(v: &Value) -> std::result::Result<i64, String> {
    v.as_integer().ok_or_else(|| format!("expected an integer, found {v}"))
}

macro_rules! unsigned {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            const KIND: &'static str = "integer";
            fn from_toml(v: &Value) -> std::result::Result<Self, String> {
                let i = integer(v)?;
                <$t>::try_from(i).map_err(|_| format!("{i} is out of range"))
            }
            fn to_toml(&self) -> Value {
                Value::Integer(*self as i64)
            }
        }
    )*};
}

unsigned!(u32, u64, usize);

impl ConfigValue for f64 {
    const KIND: &'static str = "float";
    fn from_toml(v: &Value) -> std::result::Result<Self, String> {
        match v {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            other => Err(format!("expected a number, found {other}")),
        }
    }
    fn to_toml(&self) -> Value {
        Value::Float(*self)
    }
}

impl ConfigValue for bool {
    const KIND: &'static str = "boolean";
    fn from_toml(v: &Value) -> std::result::Result<Self, String> {
        v.as_bool().ok_or_else(|| format!("expected true or false, found {v}"))
    }
    fn to_toml(&self) -> Value {
        Value::Boolean(*self)
    }
}

impl ConfigValue for String {
    const KIND: &'static str = "string";
    fn from_toml(v: &Value) -> std::result::Result<Self, String> {
        v.as_str().map(str::to_owned).ok_or_else(|| format!("expected a string, found {v}"))
    }
    fn to_toml(&self) -> Value {
        Value::String(self.clone())
    }
}

impl ConfigValue for PathBuf {
    const KIND: &'static str = "path";
    fn from_toml(v: &Value) -> std::result::Result<Self, String> {
        String::from_toml(v).map(PathBuf::from)
    }
    fn to_toml(&self) -> Value {
        Value::String(self.display().to_string())
    }
}

impl ConfigValue for LambdaSource {
    const KIND: &'static str = "oracle | predicted | fixed:<v>";
    fn from_toml(v: &Value) -> std::result::Result<Self, String> {
        String::from_toml(v)?.parse().map_err(|e: meanflow_core::Error| e.to_string())
    }
    fn to_toml(&self) -> Value {
        Value::String(self.to_string())
    }
}

impl ConfigValue for TimeFamily {
    const KIND: &'static str = "logit-normal | log-normal-clipped";
    fn from_toml(v: &Value) -> std::result::Result<Self, String> {
        match String::from_toml(v)?.as_str() {
            "logit-normal" => Ok(Self::LogitNormal),
            "log-normal-clipped" => Ok(Self::LogNormalClipped),
            other => Err(format!("unknown time family {other:?}")),
        }
    }
    fn to_toml(&self) -> Value {
        Value::String(
            match self {
                Self::LogitNormal => "logit-normal",
                Self::LogNormalClipped => "log-normal-clipped",
            }
            .into(),
        )
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    const KIND: &'static str = "integer array";
    fn from_toml(v: &Value) -> std::result::Result<Self, String> {
        v.as_array()
            .ok_or_else(|| format!("expected an array, found {v}"))?
            .iter()
            .map(T::from_toml)
            .collect()
    }
    fn to_toml(&self) -> Value {
        Value::Array(self.iter().map(T::to_toml).collect())
    }
}

fn assign<T: ConfigValue>(slot: &mut T, v: &Value) -> std::result::Result<(), String> {
    *slot = T::from_toml(v)?;
    Ok(())
}

fn describe<T: ConfigValue>(x: &T) -> (Value, &'static str) {
    (x.to_toml(), T::KIND)
}

macro_rules! config_keys {
    ($($key:literal => $($field:tt).+, $doc:literal;)*) => {
        /// Every accepted key with its description, in reference order.
        pub const KEYS: &[(&str, &str)] = &[$(($key, $doc)),*];

        fn set_key(cfg: &mut ExperimentConfig, key: &str, v: &Value) -> Option<std::result::Result<(), String>> {
            match key {
                $($key => Some(assign(&mut cfg$(.$field)+, v)),)*
                _ => None,
            }
        }

        fn get_key(cfg: &ExperimentConfig, key: &str) -> Option<(Value, &'static str)> {
            match key {
                $($key => Some(describe(&cfg$(.$field)+)),)*
                _ => None,
            }
        }
    };
}

config_keys! {
    "seed" => seed, "Root seed for data generation, initialization, time sampling and shuffling.";
    "data.dir" => data.dir, "Dataset directory holding train/, val/ and test/ splits.";
    "data.n_train" => data.n_train, "Training examples to generate.";
    "data.n_val" => data.n_val, "Validation examples to generate.";
    "data.n_test" => data.n_test, "Test examples to generate.";
    "data.sample_rate" => data.gen.sample_rate, "Sample rate in Hz.";
    "data.duration_s" => data.gen.duration_s, "Clip duration in seconds.";
    "data.lambda_lo" => data.gen.lambda_lo, "Lower end of the uniform mixing-ratio range.";
    "data.lambda_hi" => data.gen.lambda_hi, "Upper end of the uniform mixing-ratio range.";
    "data.target_ids" => data.gen.target_ids, "Source ids that may be targets (f0 = 110 * 2^(id/12) Hz).";
    "data.background_ids" => data.gen.background_ids, "Source ids that may be backgrounds; disjoint from targets.";
    "stft.window_len" => train.stft.window_len, "Hann window length in samples.";
    "stft.hop" => train.stft.hop, "Frame hop in samples.";
    "features.window_len" => train.features.window_len, "Window length of the enrollment and predictor featurizer.";
    "features.hop" => train.features.hop, "Hop of the enrollment and predictor featurizer.";
    "features.n_bands" => train.features.n_bands, "Frequency bands in the spectral statistics.";
    "net.hidden" => train.net.hidden, "Hidden units per layer of the velocity network.";
    "net.layers" => train.net.layers, "Hidden layers of the velocity network.";
    "net.time_dim" => train.net.time_dim, "Sinusoidal embedding size for each of t and r (even).";
    "net.context" => train.net.context, "Neighbouring frames on each side fed as log-magnitudes (0 or 1).";
    "net.input_scale" => train.net.input_scale, "Fixed scale applied to spectrogram values entering the network.";
    "net.emb_scale" => train.net.emb_scale, "Fixed scale applied to the enrollment embedding.";
    "train.out_dir" => train_out, "Run directory for the log, checkpoints and resume state.";
    "train.epochs" => train.epochs, "Training epochs.";
    "train.batch_size" => train.batch_size, "Examples per optimizer update.";
    "train.base_lr" => train.lr.base_lr, "Peak learning rate reached after warmup.";
    "train.min_lr" => train.lr.min_lr, "Cosine trough learning rate.";
    "train.warmup_epochs" => train.lr.warmup_epochs, "Linear warmup length in epochs.";
    "train.t_max" => train.lr.t_max, "Cosine half-period in epochs.";
    "train.restart" => train.lr.restart, "Keep the cosine periodic after the first trough (false holds min_lr).";
    "train.weight_decay" => train.weight_decay, "Decoupled weight decay.";
    "train.clip" => train.clip, "Global gradient-norm clipping threshold.";
    "train.adam_beta1" => train.adam.beta1, "First-moment decay.";
    "train.adam_beta2" => train.adam.beta2, "Second-moment decay.";
    "train.adam_eps" => train.adam.eps, "Denominator epsilon.";
    "train.c" => train.c, "Constant in the adaptive loss weight alpha / (||delta||^2 + c).";
    "train.val_every" => train.val_every, "Validate every this many epochs (and after the last).";
    "train.val_lambda" => train.val_lambda, "Mixing ratio used for checkpoint selection.";
    "train.train_frames" => train.train_frames, "Random crop length in frames per training example (0 = whole clip).";
    "time.mu" => train.time.mu, "Mean of the normal draw behind each flow time.";
    "time.sigma" => train.time.sigma, "Standard deviation of the normal draw behind each flow time.";
    "time.flow_ratio" => train.time.flow_ratio, "Fraction of updates trained with t == r.";
    "time.family" => train.time.family, "Map from normal draws into (0, 1).";
    "alpha.start_epochs" => train.alpha_start_epochs, "Curriculum start in epochs.";
    "alpha.end_epochs" => train.alpha_end_epochs, "Curriculum end in epochs.";
    "alpha.gamma" => train.alpha_gamma, "Sigmoid steepness of the curriculum.";
    "alpha.min" => train.alpha_min, "Floor of the curriculum.";
    "mr.out_dir" => mr_out, "Output directory for the predictor checkpoint and log.";
    "mr.epochs" => mr.epochs, "Predictor training epochs.";
    "mr.batch_size" => mr.batch_size, "Predictor examples per update.";
    "mr.lr" => mr.lr, "Predictor learning rate.";
    "mr.weight_decay" => mr.weight_decay, "Predictor decoupled weight decay.";
    "mr.hidden" => mr.model.hidden, "Predictor hidden units per layer.";
    "mr.layers" => mr.model.layers, "Predictor hidden layers.";
    "infer.nfe" => infer.nfe, "Function evaluations for eval (overridden by --nfe).";
    "infer.lambda" => infer.lambda_source, "Mixing-ratio source for eval (overridden by --lambda).";
    "infer.lambda_clip_lo" => infer.clip.0, "Lower clip for predicted mixing ratios.";
    "infer.lambda_clip_hi" => infer.clip.1, "Upper clip for predicted mixing ratios.";
    "eval.out_dir" => eval.out_dir, "Output directory for reports and extracted waveforms.";
    "eval.split" => eval.split, "Split to evaluate: train, val or test.";
    "eval.write_waveforms" => eval.write_waveforms, "Write extracted waveforms next to the report.";
    "eval.nfe_list" => eval.nfe_list, "Evaluation counts for nfe-sweep (overridden by --nfe-list).";
    "eval.mr_checkpoint" => eval.mr_checkpoint, "Predictor checkpoint used when the mixing ratio is predicted.";
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl ExperimentConfig {
    /// Copy shared settings into every section that needs them.
    fn sync(&mut self) {
        self.train.seed = self.seed;
        self.mr.seed = self.seed;
        self.train.net.bins = self.train.stft.bins();
        self.train.net.emb_dim = self.train.features.embedding_dim();
        self.mr.model.features = self.train.features;
        self.infer.stft = self.train.stft;
        self.infer.features = self.train.features;
    }

    /// Parse configuration text. Paths stay as written.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut cfg = Self::default();
        for (key, value) in &entries {
            match set_key(&mut cfg, key, value) {
                None => return Err(CliError::Config(format!("unknown key {key:?}"))),
                Some(Err(e)) => return Err(CliError::Config(format!("{key}: {e}"))),
                Some(Ok(())) => {}
            }
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, parse and validate a file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.data.dir,
            &mut self.train_out,
            &mut self.mr_out,
            &mut self.eval.out_dir,
            &mut self.eval.mr_checkpoint,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.data.n_train == 0 || self.data.n_val == 0 || self.data.n_test == 0 {
            return fail("data.n_train, data.n_val and data.n_test must be at least 1".into());
        }
        if !["train", "val", "test"].contains(&self.eval.split.as_str()) {
            return fail(format!("eval.split must be train, val or test, not {:?}", self.eval.split));
        }
        if self.eval.nfe_list.is_empty() || self.eval.nfe_list.contains(&0) {
            return fail("eval.nfe_list must be non-empty with entries >= 1".into());
        }
        let core = |r: meanflow_core::Result<()>, what: &str| r.map_err(|e| CliError::Config(format!("{what}: {e}")));
        core(self.data.gen.validate(), "data")?;
        core(self.train.validate(), "train")?;
        core(self.mr.validate(), "mr")?;
        core(self.infer.validate(), "infer")?;
        let duration_samples = (self.data.gen.duration_s * self.data.gen.sample_rate as f64).floor() as usize;
        let longest = self.train.stft.window_len.max(self.train.features.window_len);
        if duration_samples < longest {
            return fail(format!("clips of {duration_samples} samples are shorter than the {longest}-sample window"));
        }
        Ok(())
    }

    /// Value of a key as TOML, with its type name.
    pub fn get(&self, key: &str) -> Option<(Value, &'static str)> {
        get_key(self, key)
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            let (v, _) = get_key(self, key).expect("listed key");
            let _ = writeln!(out, "{key} = {v}");
        }
        out
    }
}

/// Markdown page listing every key with its type, default and meaning.
pub fn reference_page() -> String {
    let defaults = ExperimentConfig::default();
    let mut out = String::from(
        "# Configuration keys\n\n\
         Generated by `meanflow config-reference`. Configuration files are TOML with\n\
         flat dotted keys (`train.epochs = 30`); tables are accepted and flattened.\n\
         Unknown keys are rejected. Relative paths resolve against the directory of\n\
         the configuration file.\n\n\
         | key | type | default | description |\n\
         |---|---|---|---|\n",
    );
    for (key, doc) in KEYS {
        let (v, kind) = get_key(&defaults, key).expect("listed key");
        let _ = writeln!(out, "| `{key}` | {} | `{v}` | {doc} |", kind.replace('|', "\\|"));
    }
    out
}
