//! Synthetic mixture corpus and its on-disk layout.
//!
//! A split directory holds `manifest.txt` plus four raw little-endian `f32`
//! files per example (`NNNNN_s.f32`, `_b.f32`, `_e.f32`, `_y.f32`).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use super::{mix, synth_source, Waveform};
use crate::error::{Error, Result};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_MAGIC: &str = "# meanflow-tse dataset v1";

/// One training/evaluation item: target `s`, background `b`, enrollment `e`
/// and the convex mixture `y = lambda * s + (1 - lambda) * b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub id: u64,
    pub target_id: u32,
    pub background_id: u32,
    pub lambda: f64,
    pub seed: u64,
    pub s: Waveform,
    pub b: Waveform,
    pub e: Waveform,
    pub y: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub target_ids: Vec<u32>,
    pub background_ids: Vec<u32>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            duration_s: 1.0,
            lambda_lo: 0.3,
            lambda_hi: 0.7,
            target_ids: vec![12, 19, 26, 33],
            background_ids: vec![15, 22, 29, 36],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::invalid("duration must be positive"));
        }
        if !(0.0 <= self.lambda_lo && self.lambda_lo <= self.lambda_hi && self.lambda_hi <= 1.0) {
            return Err(Error::invalid(format!(
                "mixing ratio range [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                self.lambda_lo, self.lambda_hi
            )));
        }
        if self.target_ids.is_empty() || self.background_ids.is_empty() {
            return Err(Error::invalid("source pools must be non-empty"));
        }
        if self.target_ids.iter().any(|id| self.background_ids.contains(id)) {
            return Err(Error::invalid("target and background pools must be disjoint"));
        }
        Ok(())
    }
}

pub fn gen_dataset(n: usize, cfg: &DatasetConfig, seed: u64) -> Result<Vec<MixtureExample>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    cfg.validate()?;
    (0..n as u64).map(|i| gen_example(i, cfg, seed ^ i)).collect()
}

fn gen_example(id: u64, cfg: &DatasetConfig, ex_seed: u64) -> Result<MixtureExample> {
    let mut rng = seed::rng(ex_seed, seed::stream::DATA, 0);
    let target_id = cfg.target_ids[rng.random_range(0..cfg.target_ids.len())];
    let background_id = cfg.background_ids[rng.random_range(0..cfg.background_ids.len())];
    let lambda = if cfg.lambda_hi > cfg.lambda_lo {
        rng.random_range(cfg.lambda_lo..cfg.lambda_hi)
    } else {
        cfg.lambda_lo
    };
    let clip = |id, k| synth_source(id, cfg.duration_s, cfg.sample_rate, seed::derive(ex_seed, seed::stream::DATA, k));
    let s = clip(target_id, 1)?;
    let b = clip(background_id, 2)?;
    let e = clip(target_id, 3)?;
    let y = mix(&s, &b, lambda)?;
    Ok(MixtureExample {
        id,
        target_id,
        background_id,
        lambda,
        seed: ex_seed,
        s,
        b,
        e,
        y,
    })
}

fn write_f32(path: &Path, w: &Waveform) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for &v in w.samples() {
        out.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f32(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(path, "length is not a multiple of 4 bytes"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Write raw little-endian `f32` samples.
pub fn write_waveform(path: &Path, w: &Waveform) -> Result<()> {
    write_f32(path, w)
}

fn stem(id: u64) -> String {
    format!("{id:05}")
}

/// Write a split directory. Existing files with the same names are replaced.
pub fn save_split(dir: &Path, examples: &[MixtureExample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sample_rate = examples.first().map(|e| e.y.sample_rate()).unwrap_or(0);
    let mut manifest = format!("{MANIFEST_MAGIC}\n# sample_rate {sample_rate}\n# id target_id background_id lambda seed\n");
    for ex in examples {
        let st = stem(ex.id);
        for (suffix, w) in [("s", &ex.s), ("b", &ex.b), ("e", &ex.e), ("y", &ex.y)] {
            write_f32(&dir.join(format!("{st}_{suffix}.f32")), w)?;
        }
        manifest.push_str(&format!(
            "{} {} {} {} {}\n",
            ex.id, ex.target_id, ex.background_id, ex.lambda, ex.seed
        ));
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Load a split directory written by [`save_split`].
///
/// The mixture is rebuilt from the stored target and background so the convex
/// mixing identity holds exactly; the stored mixture must agree to `f32` precision.
pub fn load_split(dir: &Path) -> Result<Vec<MixtureExample>> {
    let path = dir.join(MANIFEST_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = || -> Result<Option<String>> {
        lines.next().transpose().map_err(|e| Error::io(&path, e))
    };
    if next()?.as_deref() != Some(MANIFEST_MAGIC) {
        return Err(Error::format(&path, "missing manifest header"));
    }
    let sample_rate: u32 = next()?
        .and_then(|l| l.strip_prefix("# sample_rate ").and_then(|v| v.trim().parse().ok()))
        .ok_or_else(|| Error::format(&path, "missing sample_rate line"))?;
    let mut examples = Vec::new();
    while let Some(line) = next()? {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::format(&path, format!("bad record: {line}")));
        }
        let bad = |what: &str| Error::format(&path, format!("bad {what} in record: {line}"));
        let id: u64 = fields[0].parse().map_err(|_| bad("id"))?;
        let target_id: u32 = fields[1].parse().map_err(|_| bad("target id"))?;
        let background_id: u32 = fields[2].parse().map_err(|_| bad("background id"))?;
        let lambda: f64 = fields[3].parse().map_err(|_| bad("lambda"))?;
        let seed: u64 = fields[4].parse().map_err(|_| bad("seed"))?;
        let st = stem(id);
        let load = |suffix: &str| -> Result<Waveform> {
            let p = dir.join(format!("{st}_{suffix}.f32"));
            Waveform::new(read_f32(&p)?, sample_rate).map_err(|e| match e {
                Error::InvalidArgument(r) | Error::NonFinite(r) => Error::format(&p, r),
                other => other,
            })
        };
        let s = load("s")?;
        let b = load("b")?;
        let e = load("e")?;
        let stored_y = load("y")?;
        let y = mix(&s, &b, lambda)?;
        let worst = y
            .samples()
            .iter()
            .zip(stored_y.samples())
            .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
            .fold(0.0, f64::max);
        if stored_y.len() != y.len() || worst > 1e-5 {
            return Err(Error::format(&path, format!("mixture of example {id} is inconsistent with its lambda")));
        }
        examples.push(MixtureExample {
            id,
            target_id,
            background_id,
            lambda,
            seed,
            s,
            b,
            e,
            y,
        });
    }
    Ok(examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            duration_s: 0.1,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn degenerate_range_pins_lambda() {
        let cfg = DatasetConfig {
            lambda_lo: 0.5,
            lambda_hi: 0.5,
            ..small()
        };
        let ds = gen_dataset(4, &cfg, 3).unwrap();
        assert_eq!(ds.len(), 4);
        assert!(ds.iter().all(|e| e.lambda == 0.5));
    }

    #[test]
    fn deterministic_and_convex() {
        let a = gen_dataset(6, &small(), 11).unwrap();
        let b = gen_dataset(6, &small(), 11).unwrap();
        assert_eq!(a, b);
        for ex in &a {
            assert!(small().target_ids.contains(&ex.target_id));
            assert!(small().background_ids.contains(&ex.background_id));
            for ((y, s), bg) in ex.y.samples().iter().zip(ex.s.samples()).zip(ex.b.samples()) {
                assert_eq!(*y, ex.lambda * s + (1.0 - ex.lambda) * bg);
            }
            assert_ne!(ex.e, ex.s);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(gen_dataset(0, &small(), 1).is_err());
        let overlap = DatasetConfig {
            background_ids: vec![12],
            ..small()
        };
        assert!(gen_dataset(2, &overlap, 1).is_err());
        let inverted = DatasetConfig {
            lambda_lo: 0.8,
            lambda_hi: 0.2,
            ..small()
        };
        assert!(gen_dataset(2, &inverted, 1).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_dataset(3, &small(), 5).unwrap();
        save_split(dir.path(), &ds).unwrap();
        let back = load_split(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in ds.iter().zip(&back) {
            assert_eq!(a.lambda, b.lambda);
            assert_eq!((a.id, a.target_id, a.background_id, a.seed), (b.id, b.target_id, b.background_id, b.seed));
            for (x, y) in a.s.samples().iter().zip(b.s.samples()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        let m1 = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        save_split(dir.path(), &gen_dataset(3, &small(), 5).unwrap()).unwrap();
        assert_eq!(m1, std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap());
    }
}
