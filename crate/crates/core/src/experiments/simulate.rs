use serde::Serialize;

use crate::error::Result;
use crate::model::ModelSpec;
use crate::noise::NoisePlan;
use crate::report::{time_label, Cell, ExperimentKind, ExperimentReport, Table};
use crate::scheme::{simulate, InitSpec, Observers, Scheme, SimConfig};
use crate::truncation::TruncationRule;

#[derive(Debug, Clone, Serialize)]
pub struct SimulateParams {
    pub particles: usize,
    pub dt: f64,
    pub horizon: f64,
    pub init: InitSpec,
    pub seed: u64,
    pub scheme: Scheme,
    pub truncate_initial: bool,
    pub observers: Observers,
}

/// A single run with observers: `moments.csv`, `paths.csv` and `snapshot_<t>.csv`
/// (readable back with `EmpiricalMeasure::load_csv`, e.g. as a `samples` init).
pub fn simulate_experiment(
    model: &ModelSpec,
    rule: &TruncationRule,
    params: &SimulateParams,
) -> Result<ExperimentReport> {
    let plan = NoisePlan::new(params.seed, params.dt, model.dim_noise)?;
    let config = SimConfig {
        particles: params.particles,
        dt: params.dt,
        horizon: params.horizon,
        init: params.init.clone(),
        truncate_initial: params.truncate_initial,
    };
    let mut observers = params.observers.clone();
    if observers.moments_every.is_none() {
        observers.moments_every = Some(1);
    }
    let rule = match params.scheme {
        Scheme::Tem => Some(rule),
        Scheme::Em => None,
    };
    let out = simulate(model, rule, &config, &plan, &observers)?;

    let mut report = ExperimentReport::new(
        ExperimentKind::Simulate,
        params.seed,
        serde_json::to_value(params)?,
    );
    let mut moments = Table::new("moments", &["t", "mean_sq", "max_norm"]);
    for r in &out.moments {
        moments.push(vec![Cell::from(r.t), r.mean_sq.into(), r.max_norm.into()]);
    }
    report.tables.push(moments);
    if !out.paths.is_empty() {
        let mut paths = Table::new("paths", &["t", "particle", "value"]);
        for p in &out.paths {
            paths.push(vec![Cell::from(p.t), p.particle.into(), p.value.into()]);
        }
        report.tables.push(paths);
    }
    for snap in &out.snapshots {
        let columns: Vec<String> = (0..snap.measure.dim()).map(|c| format!("x{c}")).collect();
        let mut table = Table {
            name: format!("snapshot_{}", time_label(snap.t)),
            columns,
            rows: Vec::new(),
        };
        for p in snap.measure.points() {
            table.push(p.iter().map(|&v| Cell::from(v)).collect());
        }
        report.tables.push(table);
    }
    report.set_stat("final_mean_sq", out.final_ensemble.mean_square());
    report.set_stat("steps", out.steps as f64);
    if let Some(k) = out.overflow_step {
        report.set_stat("overflow_step", k as f64);
    }
    Ok(report)
}
