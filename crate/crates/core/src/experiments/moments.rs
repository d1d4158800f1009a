use serde::Serialize;

use crate::error::{Result, TemError};
use crate::model::ModelSpec;
use crate::noise::NoisePlan;
use crate::report::{Cell, ExperimentKind, ExperimentReport, Table};
use crate::scheme::{simulate, InitSpec, Observers, SimConfig};
use crate::truncation::TruncationRule;

#[derive(Debug, Clone, Serialize)]
pub struct MomentBoundParams {
    pub particles: usize,
    pub dt: f64,
    pub horizon: f64,
    pub init: InitSpec,
    pub seed: u64,
    pub truncate_initial: bool,
}

/// Largest admissible step `(2 / (lambda1 - lambda2)) ^ 1` for the uniform moment bound.
pub fn moment_step_bound(model: &ModelSpec) -> Result<f64> {
    let d = model.dissipativity.ok_or_else(|| {
        TemError::config(
            "model.dissipativity",
            "moment bound needs dissipativity parameters",
        )
    })?;
    Ok((2.0 / (d.lambda1 - d.lambda2)).min(1.0))
}

/// Tracks the running maximum of the empirical second moment over a long horizon.
pub fn moment_bound_experiment(
    model: &ModelSpec,
    rule: &TruncationRule,
    params: &MomentBoundParams,
) -> Result<ExperimentReport> {
    let bound = moment_step_bound(model)?;
    if params.dt > bound {
        return Err(TemError::config(
            "dt",
            format!("dt = {} exceeds the admissible bound {bound}", params.dt),
        ));
    }
    let plan = NoisePlan::new(params.seed, params.dt, model.dim_noise)?;
    let config = SimConfig {
        particles: params.particles,
        dt: params.dt,
        horizon: params.horizon,
        init: params.init.clone(),
        truncate_initial: params.truncate_initial,
    };
    let observers = Observers {
        moments_every: Some(1),
        ..Observers::default()
    };
    let out = simulate(model, Some(rule), &config, &plan, &observers)?;

    let mut report = ExperimentReport::new(
        ExperimentKind::Moments,
        params.seed,
        serde_json::to_value(params)?,
    );
    let mut table = Table::new("moments", &["t", "mean_sq", "max_norm", "running_max"]);
    let mut running = f64::NEG_INFINITY;
    let half = params.horizon / 2.0;
    let (mut max_first, mut max_second, mut sum_second, mut n_second) =
        (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for r in &out.moments {
        running = running.max(r.mean_sq);
        if r.t < half {
            max_first = max_first.max(r.mean_sq);
        } else {
            max_second = max_second.max(r.mean_sq);
            sum_second += r.mean_sq;
            n_second += 1;
        }
        table.push(vec![
            Cell::from(r.t),
            r.mean_sq.into(),
            r.max_norm.into(),
            running.into(),
        ]);
    }
    if n_second == 0 {
        // T = 0: the only sample is the initial one.
        max_second = running;
        sum_second = running;
        n_second = 1;
    }
    report.set_stat("initial_mean_sq", out.moments[0].mean_sq);
    report.set_stat("max_mean_sq", running);
    report.set_stat("max_first_half", max_first);
    report.set_stat("max_second_half", max_second);
    report.set_stat("mean_second_half", sum_second / n_second as f64);
    report.set_stat("dt_bound", bound);
    report.set_flag("finite", running.is_finite());
    report.set_flag("plateau", running.is_finite() && max_second <= running);
    report.tables.push(table);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_double_well, double_well_scaled, zero_dynamics, Dissipativity};

    fn params(dt: f64, horizon: f64) -> MomentBoundParams {
        MomentBoundParams {
            particles: 400,
            dt,
            horizon,
            init: InitSpec::standard_normal(),
            seed: 21,
            truncate_initial: true,
        }
    }

    #[test]
    fn zero_dynamics_keeps_the_initial_moment() {
        let model = zero_dynamics(1)
            .with_dissipativity(Dissipativity {
                lambda1: 1.0,
                lambda2: 0.0,
                c: 0.0,
            })
            .unwrap();
        let rule = model.default_rule().unwrap();
        let report = moment_bound_experiment(&model, &rule, &params(0.125, 4.0)).unwrap();
        assert_eq!(report.stat("max_mean_sq"), report.stat("initial_mean_sq"));
        assert!(report.flags["plateau"]);
    }

    #[test]
    fn stronger_confinement_lowers_the_plateau() {
        let base = builtin_double_well();
        let strong = double_well_scaled(4.0).unwrap();
        let p = params(0.05, 20.0);
        let a = moment_bound_experiment(&base, &base.default_rule().unwrap(), &p).unwrap();
        let b = moment_bound_experiment(&strong, &strong.default_rule().unwrap(), &p).unwrap();
        let (a, b) = (
            a.stat("mean_second_half").unwrap(),
            b.stat("mean_second_half").unwrap(),
        );
        assert!(b < a, "scaled plateau {b} vs base {a}");
    }

    #[test]
    fn inadmissible_step_is_rejected() {
        let model = builtin_double_well();
        // Bound is 2 / (3 - 1) = 1, so anything admissible for the rule passes; tighten it.
        let tight = model
            .clone()
            .with_dissipativity(Dissipativity {
                lambda1: 9.0,
                lambda2: 1.0,
                c: 0.25,
            })
            .unwrap();
        assert_eq!(moment_step_bound(&tight).unwrap(), 0.25);
        let err =
            moment_bound_experiment(&tight, &model.default_rule().unwrap(), &params(0.5, 1.0))
                .unwrap_err();
        assert!(matches!(err, TemError::Config { ref field, .. } if field == "dt"));
    }
}
