//! SI-SDR and evaluation-set reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mr::MrParams;
use crate::sampler::{extract_waveform, InferenceConfig, VelocityModel};
use crate::signal::{MixtureExample, Waveform};

/// Value reported when the residual vanishes; also the magnitude of the floor.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant signal-to-distortion ratio of `est` against `reference`, in dB.
///
/// Both signals are made zero-mean, `est` is projected onto the reference, and
/// the result is clamped to `[-100, 100]` dB.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::invalid(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::invalid("empty signals"));
    }
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mr = reference.iter().sum::<f64>() / n;
    let (mut dot, mut ref_energy) = (0.0, 0.0);
    for (&e, &r) in est.iter().zip(reference) {
        dot += (e - me) * (r - mr);
        ref_energy += (r - mr) * (r - mr);
    }
    if ref_energy == 0.0 {
        return Err(Error::invalid("reference is identically zero after mean removal"));
    }
    let scale = dot / ref_energy;
    let (mut target, mut residual) = (0.0, 0.0);
    for (&e, &r) in est.iter().zip(reference) {
        let t = scale * (r - mr);
        target += t * t;
        residual += (e - me - t).powi(2);
    }
    if residual == 0.0 {
        return Ok(if target > 0.0 { SI_SDR_CAP_DB } else { -SI_SDR_CAP_DB });
    }
    Ok((10.0 * (target / residual).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

pub fn si_sdr_waveform(est: &Waveform, reference: &Waveform) -> Result<f64> {
    si_sdr(est.samples(), reference.samples())
}

/// `si_sdr(est, ref) - si_sdr(mix, ref)`.
pub fn si_sdr_improvement(est: &[f64], mix: &[f64], reference: &[f64]) -> Result<f64> {
    Ok(si_sdr(est, reference)? - si_sdr(mix, reference)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: u64,
    pub lambda: f64,
    pub lambda_hat: f64,
    pub nfe: usize,
    pub si_sdr_est: f64,
    pub si_sdr_mix: f64,
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn improvement(&self) -> f64 {
        self.si_sdr_est - self.si_sdr_mix
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub count: usize,
    pub failures: usize,
    pub mean_si_sdr: f64,
    pub median_si_sdr: f64,
    pub mean_si_sdr_mix: f64,
    pub mean_improvement: f64,
    pub median_improvement: f64,
    pub mean_abs_lambda_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub aggregate: Aggregate,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl EvalReport {
    /// Sorts records by example id and recomputes the aggregate from them.
    pub fn from_records(mut records: Vec<EvalRecord>) -> Self {
        records.sort_by_key(|r| r.id);
        let ok: Vec<&EvalRecord> = records.iter().filter(|r| r.error.is_none()).collect();
        let n = ok.len() as f64;
        let mean = |f: &dyn Fn(&EvalRecord) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|r| f(r)).sum::<f64>() / n
            }
        };
        let aggregate = Aggregate {
            count: ok.len(),
            failures: records.len() - ok.len(),
            mean_si_sdr: mean(&|r| r.si_sdr_est),
            median_si_sdr: median(ok.iter().map(|r| r.si_sdr_est).collect()),
            mean_si_sdr_mix: mean(&|r| r.si_sdr_mix),
            mean_improvement: mean(&|r| r.improvement()),
            median_improvement: median(ok.iter().map(|r| r.improvement()).collect()),
            mean_abs_lambda_error: mean(&|r| (r.lambda_hat - r.lambda).abs()),
        };
        Self { records, aggregate }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,lambda,lambda_hat,nfe,si_sdr_est,si_sdr_mix,si_sdri,error\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.id,
                r.lambda,
                r.lambda_hat,
                r.nfe,
                r.si_sdr_est,
                r.si_sdr_mix,
                r.improvement(),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            out,
            "# summary count={} failures={} mean_si_sdr={} median_si_sdr={} mean_si_sdr_mix={} mean_si_sdri={} median_si_sdri={} mean_abs_lambda_error={}",
            a.count, a.failures, a.mean_si_sdr, a.median_si_sdr, a.mean_si_sdr_mix,
            a.mean_improvement, a.median_improvement, a.mean_abs_lambda_error
        );
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Evaluate one example; metric failures are stored on the record.
pub fn evaluate_example(
    model: &VelocityModel,
    mr: Option<&MrParams>,
    ex: &MixtureExample,
    cfg: &InferenceConfig,
) -> (EvalRecord, Option<Waveform>) {
    let mut record = EvalRecord {
        id: ex.id,
        lambda: ex.lambda,
        lambda_hat: f64::NAN,
        nfe: cfg.nfe,
        si_sdr_est: f64::NAN,
        si_sdr_mix: f64::NAN,
        error: None,
    };
    let result = extract_waveform(model, mr, ex, cfg).and_then(|out| {
        record.lambda_hat = out.lambda_hat;
        record.si_sdr_est = si_sdr_waveform(&out.waveform, &ex.s)?;
        record.si_sdr_mix = si_sdr_waveform(&ex.y, &ex.s)?;
        Ok(out.waveform)
    });
    match result {
        Ok(w) => (record, Some(w)),
        Err(e) => {
            record.error = Some(e.to_string());
            (record, None)
        }
    }
}

pub fn evaluate_set(
    model: &VelocityModel,
    mr: Option<&MrParams>,
    dataset: &[MixtureExample],
    cfg: &InferenceConfig,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    cfg.validate()?;
    let records = dataset
        .iter()
        .map(|ex| evaluate_example(model, mr, ex, cfg).0)
        .collect();
    Ok(EvalReport::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{NetConfig, NetParams};
    use crate::signal::{gen_dataset, DatasetConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn exact_and_scaled_estimates_hit_the_cap() {
        let r = noise(500, 1);
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&twice, &r).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn orthogonal_noise_at_one_tenth_energy_is_ten_db() {
        let r = noise(1000, 2);
        let mr = r.iter().sum::<f64>() / r.len() as f64;
        let rc: Vec<f64> = r.iter().map(|v| v - mr).collect();
        // Gram-Schmidt a second zero-mean vector against the reference.
        let mut n = noise(1000, 3);
        let mn = n.iter().sum::<f64>() / n.len() as f64;
        n.iter_mut().for_each(|v| *v -= mn);
        let proj = n.iter().zip(&rc).map(|(a, b)| a * b).sum::<f64>() / rc.iter().map(|v| v * v).sum::<f64>();
        n.iter_mut().zip(&rc).for_each(|(v, r)| *v -= proj * r);
        let er: f64 = rc.iter().map(|v| v * v).sum();
        let en: f64 = n.iter().map(|v| v * v).sum();
        let k = (er / 10.0 / en).sqrt();
        let est: Vec<f64> = rc.iter().zip(&n).map(|(a, b)| a + k * b).collect();
        assert!((si_sdr(&est, &rc).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn scale_invariance() {
        let r = noise(400, 4);
        let e = noise(400, 5);
        let base = si_sdr(&e, &r).unwrap();
        for c in [-3.0, 0.01, 7.5] {
            let scaled: Vec<f64> = e.iter().map(|v| c * v).collect();
            let v = si_sdr(&scaled, &r).unwrap();
            assert!((v - base).abs() < 1e-9, "c={c}");
        }
    }

    #[test]
    fn errors_and_improvement_identities() {
        assert!(si_sdr(&[1.0, 2.0], &[1.0]).is_err());
        assert!(si_sdr(&[1.0, 2.0], &[3.0, 3.0]).is_err());
        let r = noise(300, 6);
        let m = noise(300, 7);
        let e = noise(300, 8);
        assert_eq!(si_sdr_improvement(&m, &m, &r).unwrap(), 0.0);
        let cap = si_sdr_improvement(&r, &m, &r).unwrap();
        assert!((cap - (SI_SDR_CAP_DB - si_sdr(&m, &r).unwrap())).abs() < 1e-12);
        let a = si_sdr_improvement(&e, &m, &r).unwrap();
        let b = si_sdr_improvement(&m, &e, &r).unwrap();
        assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn report_aggregates_and_ordering() {
        let mk = |id, est| EvalRecord {
            id,
            lambda: 0.5,
            lambda_hat: 0.4,
            nfe: 1,
            si_sdr_est: est,
            si_sdr_mix: 1.0,
            error: None,
        };
        let a = EvalReport::from_records(vec![mk(2, 3.0), mk(0, 5.0), mk(1, 10.0)]);
        let b = EvalReport::from_records(vec![mk(1, 10.0), mk(2, 3.0), mk(0, 5.0)]);
        assert_eq!(a, b);
        assert_eq!(a.records.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!((a.aggregate.mean_si_sdr - 6.0).abs() < 1e-12);
        assert_eq!(a.aggregate.median_si_sdr, 5.0);
        assert!((a.aggregate.mean_improvement - 5.0).abs() < 1e-12);
        assert!((a.aggregate.mean_abs_lambda_error - 0.1).abs() < 1e-12);
        assert_eq!(a.to_csv().lines().count(), 5);
    }

    #[test]
    fn evaluation_set_properties() {
        let ds = gen_dataset(4, &DatasetConfig::default(), 21).unwrap();
        let cfg = InferenceConfig::default();
        let oracle = evaluate_set(&VelocityModel::Oracle, None, &ds, &cfg).unwrap();
        assert!(oracle.aggregate.mean_si_sdr >= 60.0);
        for r in &oracle.records {
            assert!(r.si_sdr_mix.is_finite() && r.si_sdr_mix < 20.0);
        }
        let fresh = VelocityModel::Network(NetParams::init(NetConfig::default(), 0).unwrap());
        let zero = evaluate_set(&fresh, None, &ds, &cfg).unwrap();
        for r in &zero.records {
            assert!(r.improvement().abs() < 1e-6, "{}", r.improvement());
        }
        assert!(evaluate_set(&fresh, None, &[], &cfg).is_err());
    }
}
