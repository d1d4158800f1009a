use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, TemError};
use crate::measure::{w2_default, EmpiricalMeasure};
use crate::model::ModelSpec;
use crate::noise::{mix_seed, NoisePlan};
use crate::report::{Cell, ExperimentKind, ExperimentReport, Table};
use crate::scheme::{simulate, InitSpec, Observers, SimConfig};
use crate::stats::fit_log2;
use crate::truncation::TruncationRule;

use super::fournier::mean_and_se;

#[derive(Debug, Clone, Serialize)]
pub struct ChaosParams {
    pub m_list: Vec<usize>,
    pub m_ref: usize,
    pub dt: f64,
    pub horizon: f64,
    pub init: InitSpec,
    pub replications: usize,
    pub seed: u64,
    pub truncate_initial: bool,
}

const REFERENCE_TAG: u64 = 0xC4A05;

/// Terminal ensemble of one TEM run.
#[allow(clippy::too_many_arguments)]
pub fn terminal_measure(
    model: &ModelSpec,
    rule: &TruncationRule,
    particles: usize,
    dt: f64,
    horizon: f64,
    init: &InitSpec,
    truncate_initial: bool,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    let plan = NoisePlan::new(seed, dt, model.dim_noise)?;
    let config = SimConfig {
        particles,
        dt,
        horizon,
        init: init.clone(),
        truncate_initial,
    };
    Ok(
        simulate(model, Some(rule), &config, &plan, &Observers::default())?
            .final_ensemble
            .measure(),
    )
}

/// `W2^2` between an M-particle terminal law and the first M particles of a reference
/// terminal law. Reference particles are exchangeable, so the prefix is a uniform
/// subsample.
pub fn subsampled_w2_sq(sample: &EmpiricalMeasure, reference: &EmpiricalMeasure) -> Result<f64> {
    let m = sample.len();
    if reference.len() < m {
        return Err(TemError::config(
            "M_ref",
            "reference smaller than the sample",
        ));
    }
    let dim = reference.dim();
    let sub = EmpiricalMeasure::from_flat(dim, reference.as_flat()[..m * dim].to_vec())?;
    let w = w2_default(sample, &sub)?.value;
    Ok(w * w)
}

/// Mean `W2^2` between M-particle terminal laws and a large-M reference, over
/// independent replications, with the log-log slope in M.
pub fn chaos_experiment(
    model: &ModelSpec,
    rule: &TruncationRule,
    params: &ChaosParams,
) -> Result<ExperimentReport> {
    let max_m = params
        .m_list
        .iter()
        .copied()
        .max()
        .ok_or_else(|| TemError::config("M_list", "need at least one particle count"))?;
    if params.m_ref < 4 * max_m {
        return Err(TemError::config(
            "M_ref",
            format!(
                "M_ref = {} must be at least 4 x max(M_list) = {}",
                params.m_ref,
                4 * max_m
            ),
        ));
    }
    if params.replications == 0 {
        return Err(TemError::config(
            "replications",
            "need at least one replication",
        ));
    }
    let mut ms = params.m_list.clone();
    ms.sort_unstable();
    ms.dedup();

    let run = |m: usize, seed: u64| {
        terminal_measure(
            model,
            rule,
            m,
            params.dt,
            params.horizon,
            &params.init,
            params.truncate_initial,
            seed,
        )
    };
    // distances[r][k] for replication r and particle count ms[k].
    let distances: Vec<Vec<f64>> = (0..params.replications)
        .into_par_iter()
        .map(|r| {
            let rep_seed = mix_seed(params.seed, r as u64);
            let reference = run(params.m_ref, mix_seed(rep_seed, REFERENCE_TAG))?;
            ms.iter()
                .map(|&m| subsampled_w2_sq(&run(m, mix_seed(rep_seed, m as u64))?, &reference))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut table = Table::new("chaos", &["m", "mean_w2_sq", "std_error", "replications"]);
    let mut means = Vec::with_capacity(ms.len());
    for (k, &m) in ms.iter().enumerate() {
        let column: Vec<f64> = distances.iter().map(|row| row[k]).collect();
        let (mean, se) = mean_and_se(&column);
        means.push(mean);
        table.push(vec![
            Cell::from(m),
            mean.into(),
            se.into(),
            params.replications.into(),
        ]);
    }
    let mut report = ExperimentReport::new(
        ExperimentKind::Chaos,
        params.seed,
        serde_json::to_value(params)?,
    );
    report.set_flag("strictly_decreasing", means.windows(2).all(|w| w[1] < w[0]));
    if ms.len() >= 3 && means.iter().all(|&v| v > 0.0) {
        let xs: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
        let fit = fit_log2(&xs, &means)?;
        report.set_stat("slope", fit.slope);
        report.fits.insert("log2_mean_w2_sq_vs_log2_m".into(), fit);
    }
    report.set_note(
        "reference",
        "independent large-M run; first M reference particles form the equal-size subsample",
    );
    report.tables.push(table);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_double_well;

    fn params() -> ChaosParams {
        ChaosParams {
            m_list: vec![8, 16, 32],
            m_ref: 128,
            dt: 2f64.powi(-4),
            horizon: 0.5,
            init: InitSpec::standard_normal(),
            replications: 4,
            seed: 3,
            truncate_initial: true,
        }
    }

    #[test]
    fn shared_noise_at_reference_size_gives_zero() {
        let model = builtin_double_well();
        let rule = model.default_rule().unwrap();
        let p = params();
        let run =
            |m| terminal_measure(&model, &rule, m, p.dt, p.horizon, &p.init, true, 77).unwrap();
        let reference = run(p.m_ref);
        assert_eq!(subsampled_w2_sq(&run(p.m_ref), &reference).unwrap(), 0.0);
        assert!(subsampled_w2_sq(&run(p.m_ref + 1), &reference).is_err());
    }

    #[test]
    fn small_reference_is_rejected() {
        let model = builtin_double_well();
        let mut p = params();
        p.m_ref = 127;
        let err = chaos_experiment(&model, &model.default_rule().unwrap(), &p).unwrap_err();
        assert!(matches!(err, TemError::Config { ref field, .. } if field == "M_ref"));
    }

    #[test]
    fn table_has_one_row_per_m() {
        let model = builtin_double_well();
        let report = chaos_experiment(&model, &model.default_rule().unwrap(), &params()).unwrap();
        let t = report.table("chaos").unwrap();
        assert_eq!(t.floats("m").unwrap(), vec![8.0, 16.0, 32.0]);
        assert!(report.stat("slope").is_some());
    }
}
