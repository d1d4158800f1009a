use serde::Serialize;

use crate::error::{Result, TemError};
use crate::model::ModelSpec;
use crate::report::{Cell, ExperimentKind, ExperimentReport, Table};
use crate::scheme::{coupled_rmse, InitSpec, SimConfig};
use crate::stats::fit_log2;
use crate::truncation::TruncationRule;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceParams {
    pub particles: usize,
    pub dts: Vec<f64>,
    pub ref_dt: f64,
    pub horizon: f64,
    pub init: InitSpec,
    pub seed: u64,
    pub truncate_initial: bool,
}

/// Strong convergence in the step size: RMSE at time T against a fine reference
/// on shared Brownian paths, with the least-squares slope of log2(RMSE) on log2(dt).
pub fn convergence_experiment(
    model: &ModelSpec,
    rule: &TruncationRule,
    params: &ConvergenceParams,
) -> Result<ExperimentReport> {
    if params.dts.len() < 3 {
        return Err(TemError::config(
            "dts",
            format!(
                "a slope fit needs at least 3 step sizes, got {}",
                params.dts.len()
            ),
        ));
    }
    let mut dts = params.dts.clone();
    dts.sort_by(|a, b| b.total_cmp(a));
    dts.dedup();
    let config = SimConfig {
        particles: params.particles,
        dt: params.ref_dt,
        horizon: params.horizon,
        init: params.init.clone(),
        truncate_initial: params.truncate_initial,
    };
    let rows = coupled_rmse(model, rule, &config, &dts, params.ref_dt, params.seed)?;

    let mut report = ExperimentReport::new(
        ExperimentKind::Convergence,
        params.seed,
        serde_json::to_value(params)?,
    );
    let mut table = Table::new("rmse", &["dt", "log2_dt", "rmse", "log2_rmse"]);
    for r in &rows {
        table.push(vec![
            Cell::from(r.dt),
            r.dt.log2().into(),
            r.rmse.into(),
            r.rmse.log2().into(),
        ]);
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
    let fit = fit_log2(&xs, &ys)?;
    report.set_stat("slope", fit.slope);
    report.set_stat("intercept", fit.intercept);
    report.set_stat("residual_std_error", fit.residual_std_error);
    report.set_stat("ref_dt", params.ref_dt);
    report.set_stat("T", params.horizon);
    report.set_stat("M", params.particles as f64);
    report.fits.insert("log2_rmse_vs_log2_dt".into(), fit);
    report.tables.push(table);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_vol32;

    fn params(dts: Vec<f64>) -> ConvergenceParams {
        ConvergenceParams {
            particles: 100,
            dts,
            ref_dt: 2f64.powi(-10),
            horizon: 0.5,
            init: InitSpec::constant(1.0),
            seed: 8,
            truncate_initial: true,
        }
    }

    #[test]
    fn fewer_than_three_steps_is_a_config_error() {
        let model = builtin_vol32();
        let err = convergence_experiment(
            &model,
            &model.default_rule().unwrap(),
            &params(vec![0.25, 0.125]),
        )
        .unwrap_err();
        assert!(matches!(err, TemError::Config { ref field, .. } if field == "dts"));
    }

    #[test]
    fn slope_ignores_the_order_of_dts() {
        let model = builtin_vol32();
        let rule = model.default_rule().unwrap();
        let dts = vec![2f64.powi(-5), 2f64.powi(-6), 2f64.powi(-7), 2f64.powi(-8)];
        let mut shuffled = dts.clone();
        shuffled.swap(0, 2);
        shuffled.swap(1, 3);
        let a = convergence_experiment(&model, &rule, &params(dts)).unwrap();
        let b = convergence_experiment(&model, &rule, &params(shuffled)).unwrap();
        assert_eq!(
            a.stat("slope").unwrap().to_bits(),
            b.stat("slope").unwrap().to_bits()
        );
        assert_eq!(
            a.table("rmse").unwrap().to_csv_string().unwrap(),
            b.table("rmse").unwrap().to_csv_string().unwrap()
        );
    }
}
