use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use meanflow_core::metrics::{evaluate_example, EvalReport};
use meanflow_core::seed;
use meanflow_core::signal::{gen_dataset, load_split, save_split, write_waveform};
use meanflow_core::train::{self, MrTrainReport, StepRecord, TrainObserver, TrainSummary};
use meanflow_core::{Error, InferenceConfig, LambdaSource, MixtureExample, MrParams, VelocityModel};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const MR_CHECKPOINT: &str = "mr.bin";
pub const MR_LOG: &str = "mr_log.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SWEEP_FILE: &str = "nfe_sweep.csv";
pub const WAVEFORM_DIR: &str = "waveforms";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn split_seed(root: u64, split: usize) -> u64 {
    seed::derive(root, seed::stream::DATA, 100 + split as u64)
}

/// Generate the three splits under `out` (or `data.dir`). Returns the split directories.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let root = out.unwrap_or(&cfg.data.dir);
    let sizes = [cfg.data.n_train, cfg.data.n_val, cfg.data.n_test];
    let mut dirs = Vec::new();
    for (i, (name, n)) in SPLITS.iter().zip(sizes).enumerate() {
        let examples = gen_dataset(n, &cfg.data.gen, split_seed(cfg.seed, i))?;
        let dir = root.join(name);
        save_split(&dir, &examples)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

pub fn load_named_split(cfg: &ExperimentConfig, name: &str) -> Result<Vec<MixtureExample>> {
    let examples = load_split(&cfg.data.dir.join(name))?;
    let sr = cfg.data.gen.sample_rate;
    if let Some(ex) = examples.iter().find(|ex| ex.y.sample_rate() != sr) {
        return Err(CliError::Config(format!(
            "split {name} was generated at {} Hz but the configuration says {sr} Hz",
            ex.y.sample_rate()
        )));
    }
    Ok(examples)
}

/// Per-epoch progress on stderr.
struct EpochPrinter {
    epochs: usize,
    last: Option<StepRecord>,
}

impl TrainObserver for EpochPrinter {
    fn on_step(&mut self, record: &StepRecord) {
        self.last = Some(*record);
    }

    fn on_validation(&mut self, epoch: usize, si_sdr: f64, improved: bool) {
        if let Some(r) = &self.last {
            eprintln!(
                "epoch {epoch}/{} step {} alpha {:.4} lr {:.3e} loss {:.4e} val_si_sdr {si_sdr:.3} dB{}",
                self.epochs,
                r.step + 1,
                r.alpha,
                r.lr,
                r.loss,
                if improved { " (best)" } else { "" }
            );
        }
    }
}

fn load_predictor(path: &Path) -> Result<MrParams> {
    MrParams::load(path).map_err(CliError::from)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let tr = load_named_split(cfg, "train")?;
    let val = load_named_split(cfg, "val")?;
    let mr = match cfg.train.val_lambda {
        LambdaSource::Predicted => Some(load_predictor(&cfg.eval.mr_checkpoint)?),
        _ => None,
    };
    let mut printer = EpochPrinter {
        epochs: cfg.train.epochs,
        last: None,
    };
    Ok(train::train_with_predictor(&cfg.train, &tr, &val, mr.as_ref(), &cfg.train_out, &mut printer)?)
}

pub fn cmd_train_mr(cfg: &ExperimentConfig) -> Result<(MrParams, MrTrainReport)> {
    cfg.validate()?;
    let tr = load_named_split(cfg, "train")?;
    let val = load_named_split(cfg, "val")?;
    let (params, report) = train::train_mr(&cfg.mr, &tr, &val)?;
    create_dir(&cfg.mr_out)?;
    params.save(&cfg.mr_out.join(MR_CHECKPOINT))?;
    let mut log = report.to_csv();
    let _ = writeln!(
        log,
        "# summary baseline_mse={} lambda_variance={} flagged={}",
        report.baseline_mse, report.lambda_variance, report.flagged
    );
    let path = cfg.mr_out.join(MR_LOG);
    fs::write(&path, log).map_err(|e| Error::Io { path, source: e })?;
    Ok((params, report))
}

/// Overrides for `eval` and `nfe-sweep`; `None` falls back to the configuration.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub nfe: Option<usize>,
    pub lambda: Option<LambdaSource>,
    pub mr: Option<PathBuf>,
    pub split: Option<String>,
    pub out: Option<PathBuf>,
}

struct EvalSetup {
    model: VelocityModel,
    mr: Option<MrParams>,
    data: Vec<MixtureExample>,
    infer: InferenceConfig,
    out: PathBuf,
}

fn setup_eval(cfg: &ExperimentConfig, checkpoint: &Path, opts: &EvalOptions) -> Result<EvalSetup> {
    cfg.validate()?;
    let infer = InferenceConfig {
        nfe: opts.nfe.unwrap_or(cfg.infer.nfe),
        lambda_source: opts.lambda.unwrap_or(cfg.infer.lambda_source),
        ..cfg.infer
    };
    infer.validate()?;
    let split = opts.split.clone().unwrap_or_else(|| cfg.eval.split.clone());
    if !SPLITS.contains(&split.as_str()) {
        return Err(CliError::Usage(format!("unknown split {split:?}")));
    }
    let model = VelocityModel::load(checkpoint)?;
    if let VelocityModel::Network(net) = &model {
        if net.config().bins != cfg.train.stft.bins() || net.config().emb_dim != cfg.train.features.embedding_dim() {
            return Err(CliError::Config(format!(
                "checkpoint {} was trained with a different transform or featurizer",
                checkpoint.display()
            )));
        }
    }
    let mr = match infer.lambda_source {
        LambdaSource::Predicted => {
            Some(load_predictor(opts.mr.as_deref().unwrap_or(&cfg.eval.mr_checkpoint))?)
        }
        _ => None,
    };
    let data = load_named_split(cfg, &split)?;
    let out = opts.out.clone().unwrap_or_else(|| cfg.eval.out_dir.clone());
    create_dir(&out)?;
    Ok(EvalSetup {
        model,
        mr,
        data,
        infer,
        out,
    })
}

/// Evaluate a checkpoint, writing `report.csv` and (optionally) extracted waveforms.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let s = setup_eval(cfg, checkpoint, opts)?;
    let wave_dir = s.out.join(WAVEFORM_DIR);
    if cfg.eval.write_waveforms {
        create_dir(&wave_dir)?;
    }
    let mut records = Vec::with_capacity(s.data.len());
    let mut manifest = String::from("# meanflow-tse extracted waveforms v1\n# id lambda_hat sample_rate samples file\n");
    for ex in &s.data {
        let (record, wave) = evaluate_example(&s.model, s.mr.as_ref(), ex, &s.infer);
        if let (true, Some(w)) = (cfg.eval.write_waveforms, wave) {
            let file = format!("{:05}_est.f32", ex.id);
            write_waveform(&wave_dir.join(&file), &w)?;
            let _ = writeln!(manifest, "{} {} {} {} {file}", ex.id, record.lambda_hat, w.sample_rate(), w.len());
        }
        records.push(record);
    }
    if cfg.eval.write_waveforms {
        let path = wave_dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::Io { path, source: e })?;
    }
    let report = EvalReport::from_records(records);
    report.write_csv(&s.out.join(REPORT_FILE))?;
    Ok(report)
}

/// Parse a comma-separated list of evaluation counts.
pub fn parse_nfe_list(text: &str) -> Result<Vec<usize>> {
    let list: Vec<usize> = text
        .split(',')
        .map(|t| t.trim().parse::<usize>().ok().filter(|&n| n >= 1))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::Usage(format!("bad NFE list {text:?}; expected e.g. 1,2,4,8,16")))?;
    if list.is_empty() {
        return Err(CliError::Usage("empty NFE list".into()));
    }
    Ok(list)
}

/// One report per evaluation count plus `nfe_sweep.csv` with one row per count.
pub fn cmd_nfe_sweep(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    nfe_list: Option<&[usize]>,
    opts: &EvalOptions,
) -> Result<Vec<(usize, EvalReport)>> {
    let list = nfe_list.unwrap_or(&cfg.eval.nfe_list).to_vec();
    if list.is_empty() || list.contains(&0) {
        return Err(CliError::Usage("NFE list entries must be >= 1".into()));
    }
    let s = setup_eval(cfg, checkpoint, opts)?;
    let mut csv = String::from("nfe,mean_si_sdr,median_si_sdr,mean_si_sdri,failures\n");
    let mut out = Vec::new();
    for nfe in list {
        let infer = InferenceConfig { nfe, ..s.infer };
        let records = s
            .data
            .iter()
            .map(|ex| evaluate_example(&s.model, s.mr.as_ref(), ex, &infer).0)
            .collect();
        let report = EvalReport::from_records(records);
        report.write_csv(&s.out.join(format!("report_nfe{nfe}.csv")))?;
        let a = &report.aggregate;
        let _ = writeln!(
            csv,
            "{nfe},{},{},{},{}",
            a.mean_si_sdr, a.median_si_sdr, a.mean_improvement, a.failures
        );
        out.push((nfe, report));
    }
    let path = s.out.join(SWEEP_FILE);
    fs::write(&path, csv).map_err(|e| Error::Io { path, source: e })?;
    Ok(out)
}
