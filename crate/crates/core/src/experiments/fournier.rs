use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, TemError};
use crate::measure::{sorted_copy, wq_pow_quantile_1d};
use crate::model::ModelSpec;
use crate::noise::{mix_seed, NoisePlan, NormalStream};
use crate::report::{Cell, ExperimentKind, ExperimentReport, Table};
use crate::scheme::{simulate, InitSpec, Observers, SimConfig};
use crate::stats::fit_log2;
use crate::truncation::TruncationRule;

/// Draws i.i.d. 1-D samples, reproducibly from a seed.
pub trait Sampler: Sync {
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>>;
    fn describe(&self) -> serde_json::Value;
}

/// `N(mean, sd^2)`.
#[derive(Debug, Clone, Copy)]
pub struct NormalSampler {
    pub mean: f64,
    pub sd: f64,
}

impl Sampler for NormalSampler {
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        let mut s = NormalStream::new(seed, 0);
        Ok((0..n)
            .map(|_| self.mean + self.sd * s.next_normal())
            .collect())
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "type": "normal", "mean": self.mean, "sd": self.sd })
    }
}

/// Point mass.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSampler(pub f64);

impl Sampler for ConstantSampler {
    fn sample(&self, n: usize, _seed: u64) -> Result<Vec<f64>> {
        Ok(vec![self.0; n])
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "type": "constant", "x0": self.0 })
    }
}

/// Terminal law of an interaction-free model: `n` independent particles simulated
/// with TEM to time T. Only valid when the drift ignores the measure.
pub struct ModelLawSampler<'a> {
    pub model: &'a ModelSpec,
    pub rule: &'a TruncationRule,
    pub dt: f64,
    pub horizon: f64,
    pub init: InitSpec,
    pub truncate_initial: bool,
}

impl Sampler for ModelLawSampler<'_> {
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        let plan = NoisePlan::new(seed, self.dt, self.model.dim_noise)?;
        let config = SimConfig {
            particles: n,
            dt: self.dt,
            horizon: self.horizon,
            init: self.init.clone(),
            truncate_initial: self.truncate_initial,
        };
        let out = simulate(
            self.model,
            Some(self.rule),
            &config,
            &plan,
            &Observers::default(),
        )?;
        Ok(out.final_ensemble.states().to_vec())
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "type": "model_law",
            "model": self.model.name,
            "dt": self.dt,
            "T": self.horizon,
            "init": self.init,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FournierParams {
    pub m_list: Vec<usize>,
    pub replications: usize,
    pub q: f64,
    pub dim: usize,
    pub reference_size: usize,
    pub seed: u64,
}

pub const DEFAULT_REFERENCE_SIZE: usize = 1_000_000;

const REFERENCE_TAG: u64 = 0x5EF;

/// Mean `W_q^q` between the empirical law of M i.i.d. samples and a large-sample
/// surrogate of the target law, for each M, with the fitted log-log slope.
pub fn fournier_rate_probe(
    sampler: &dyn Sampler,
    params: &FournierParams,
) -> Result<ExperimentReport> {
    if params.dim != 1 {
        return Err(TemError::Unsupported(
            "the rate probe's reference distance is implemented for d = 1 only".into(),
        ));
    }
    if !(params.q >= 2.0) {
        return Err(TemError::config("q", "q must be >= 2"));
    }
    if params.m_list.is_empty() || params.replications == 0 || params.reference_size == 0 {
        return Err(TemError::config(
            "M_list",
            "need sizes, replications and a reference",
        ));
    }
    let reference =
        sorted_copy(&sampler.sample(params.reference_size, mix_seed(params.seed, REFERENCE_TAG))?);
    let mut table = Table::new(
        "fournier",
        &["m", "mean_wq_pow", "std_error", "replications"],
    );
    let mut ms = params.m_list.clone();
    ms.sort_unstable();
    ms.dedup();
    let mut means = Vec::with_capacity(ms.len());
    for &m in &ms {
        let values: Vec<f64> = (0..params.replications)
            .into_par_iter()
            .map(|r| {
                let seed = mix_seed(mix_seed(params.seed, m as u64), r as u64);
                let sample = sorted_copy(&sampler.sample(m, seed)?);
                Ok(wq_pow_quantile_1d(&sample, &reference, params.q))
            })
            .collect::<Result<_>>()?;
        let (mean, se) = mean_and_se(&values);
        means.push(mean);
        table.push(vec![
            Cell::from(m),
            mean.into(),
            se.into(),
            params.replications.into(),
        ]);
    }
    let mut report = ExperimentReport::new(
        ExperimentKind::Fournier,
        params.seed,
        serde_json::to_value(params)?,
    );
    report.config["sampler"] = sampler.describe();
    report.set_note(
        "reference",
        format!(
            "exact quantile distance against a {}-sample surrogate of the target law",
            params.reference_size
        ),
    );
    if ms.len() >= 3 && means.iter().all(|&v| v > 0.0) {
        let xs: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
        let fit = fit_log2(&xs, &means)?;
        report.set_stat("slope", fit.slope);
        report.fits.insert("log2_mean_wq_pow_vs_log2_m".into(), fit);
    }
    report.tables.push(table);
    Ok(report)
}

pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
