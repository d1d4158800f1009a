use serde::Serialize;

use crate::error::{Result, TemError};
use crate::model::ModelSpec;
use crate::noise::NoisePlan;
use crate::report::{Cell, ExperimentKind, ExperimentReport, Table};
use crate::scheme::{simulate, InitSpec, Observers, SimConfig};
use crate::stats::fit_line;
use crate::truncation::TruncationRule;

/// EM second moments above this are treated as divergence.
pub const EM_DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Serialize)]
pub struct StabilityParams {
    pub particles: usize,
    pub dt: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub seed: u64,
    pub truncate_initial: bool,
    /// Particles whose TEM and EM paths are written to `paths.csv`.
    pub path_particles: Vec<usize>,
}

/// TEM and EM side by side on identical Brownian increments from a deterministic
/// start, recording the empirical second moment at every step.
pub fn stability_experiment(
    model: &ModelSpec,
    rule: &TruncationRule,
    params: &StabilityParams,
) -> Result<ExperimentReport> {
    if model.contraction.is_none() {
        return Err(TemError::config(
            "model.contraction",
            "stability needs a model with contraction parameters",
        ));
    }
    let origin = vec![0.0; model.dim_state];
    let at_origin = crate::measure::MeasureStats::dirac(&origin);
    let f0 = model.drift(&origin, &at_origin);
    let g0 = model.diffusion(&origin, &at_origin);
    if f0.iter().chain(&g0).any(|&v| v != 0.0) {
        return Err(TemError::config(
            "model",
            "stability needs f(0, delta_0) = 0 and g(0, delta_0) = 0",
        ));
    }
    let plan = NoisePlan::new(params.seed, params.dt, model.dim_noise)?;
    let config = SimConfig {
        particles: params.particles,
        dt: params.dt,
        horizon: params.horizon,
        init: InitSpec::Constant {
            x0: params.x0.clone(),
        },
        truncate_initial: params.truncate_initial,
    };
    let observers = Observers {
        moments_every: Some(1),
        path_particles: params.path_particles.clone(),
        ..Observers::default()
    };
    let (tem, em) = rayon::join(
        || simulate(model, Some(rule), &config, &plan, &observers),
        || simulate(model, None, &config, &plan, &observers),
    );
    let (tem, em) = (tem?, em?);

    let mut report = ExperimentReport::new(
        ExperimentKind::Stability,
        params.seed,
        serde_json::to_value(params)?,
    );
    let mut moments = Table::new(
        "moments",
        &[
            "t",
            "tem_mean_sq",
            "tem_max_norm",
            "em_mean_sq",
            "em_max_norm",
        ],
    );
    for (a, b) in tem.moments.iter().zip(&em.moments) {
        moments.push(vec![
            Cell::from(a.t),
            a.mean_sq.into(),
            a.max_norm.into(),
            b.mean_sq.into(),
            b.max_norm.into(),
        ]);
    }
    let mut paths = Table::new("paths", &["t", "particle", "tem", "em"]);
    for (a, b) in tem.paths.iter().zip(&em.paths) {
        paths.push(vec![
            Cell::from(a.t),
            a.particle.into(),
            a.value.into(),
            b.value.into(),
        ]);
    }

    let tem_initial = tem.moments.first().map_or(f64::NAN, |r| r.mean_sq);
    let tem_final = tem.moments.last().map_or(f64::NAN, |r| r.mean_sq);
    let em_peak = em
        .moments
        .iter()
        .map(|r| r.mean_sq)
        .fold(0.0, |acc: f64, v| {
            if v.is_nan() {
                f64::INFINITY
            } else {
                acc.max(v)
            }
        });
    let em_diverged = em_peak > EM_DIVERGENCE_THRESHOLD || !em_peak.is_finite();
    let em_divergence_time = em
        .moments
        .iter()
        .find(|r| !(r.mean_sq <= EM_DIVERGENCE_THRESHOLD))
        .map(|r| r.t);
    report.set_stat("tem_initial_mean_sq", tem_initial);
    report.set_stat("tem_final_mean_sq", tem_final);
    report.set_stat("tem_final_over_initial", tem_final / tem_initial);
    report.set_stat("em_peak_mean_sq", em_peak);
    if let Some(t) = em_divergence_time {
        report.set_stat("em_divergence_time", t);
    }
    if let Some(k) = em.overflow_step {
        report.set_stat("em_overflow_step", k as f64);
    }
    report.set_flag("em_diverged", em_diverged);
    report.set_flag(
        "tem_all_finite",
        tem.moments.iter().all(|r| r.mean_sq.is_finite()),
    );

    // Exponential decay rate of the TEM second moment over [T/2, T].
    let tail: Vec<(f64, f64)> = tem
        .moments
        .iter()
        .filter(|r| r.t >= params.horizon / 2.0 && r.mean_sq > 0.0)
        .map(|r| (r.t, r.mean_sq.ln()))
        .collect();
    if tail.len() >= 3 {
        let (ts, ls): (Vec<f64>, Vec<f64>) = tail.into_iter().unzip();
        let fit = fit_line(&ts, &ls)?;
        report.set_stat("tem_decay_rate", fit.slope);
        report.fits.insert("tem_ln_mean_sq_vs_t_tail".into(), fit);
    } else {
        report.set_note(
            "tem_decay_rate",
            "second moment reached zero; no tail fit (trivial equilibrium)",
        );
    }
    report.set_note(
        "em_overflow_policy",
        "non-finite EM second moments are reported as inf",
    );
    report.tables.push(moments);
    if !params.path_particles.is_empty() {
        report.tables.push(paths);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_double_well, builtin_vol32};

    fn params(x0: f64) -> StabilityParams {
        StabilityParams {
            particles: 200,
            dt: 0.05,
            horizon: 5.0,
            x0: vec![x0],
            seed: 1,
            truncate_initial: true,
            path_particles: vec![0, 3],
        }
    }

    #[test]
    fn zero_start_stays_at_zero_for_both_schemes() {
        let model = builtin_vol32();
        let report =
            stability_experiment(&model, &model.default_rule().unwrap(), &params(0.0)).unwrap();
        let t = report.table("moments").unwrap();
        for col in ["tem_mean_sq", "tem_max_norm", "em_mean_sq", "em_max_norm"] {
            assert!(t.floats(col).unwrap().iter().all(|&v| v == 0.0), "{col}");
        }
    }

    #[test]
    fn tem_decays_with_negative_rate_and_stays_finite() {
        let model = builtin_vol32();
        let report =
            stability_experiment(&model, &model.default_rule().unwrap(), &params(3.0)).unwrap();
        let rate = report.stat("tem_decay_rate").unwrap();
        assert!(rate < 0.0, "{rate}");
        let tem = report
            .table("moments")
            .unwrap()
            .floats("tem_mean_sq")
            .unwrap();
        assert!(tem.iter().all(|v| v.is_finite()));
        assert!(report.flags["tem_all_finite"]);
    }

    #[test]
    fn requires_equilibrium_at_origin() {
        let model = builtin_double_well();
        assert!(
            stability_experiment(&model, &model.default_rule().unwrap(), &params(1.0)).is_err()
        );
    }
}
