use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TemError};
use crate::measure::{w2_default, EmpiricalMeasure};
use crate::model::ModelSpec;
use crate::noise::{mix_seed, NoisePlan};
use crate::report::{time_label, Cell, ExperimentKind, ExperimentReport, Table};
use crate::scheme::{simulate, InitSpec, Observers, SimConfig};
use crate::truncation::TruncationRule;

/// Fixed histogram grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            bins: 200,
            lo: -3.0,
            hi: 3.0,
        }
    }
}

/// Density histogram of the first coordinate plus (below, above) out-of-range counts.
pub fn histogram(mu: &EmpiricalMeasure, spec: HistogramSpec) -> (Vec<f64>, usize, usize) {
    let width = (spec.hi - spec.lo) / spec.bins as f64;
    let mut counts = vec![0usize; spec.bins];
    let (mut below, mut above) = (0, 0);
    for p in mu.points() {
        let x = p[0];
        if x < spec.lo {
            below += 1;
        } else if x > spec.hi {
            above += 1;
        } else {
            let idx = (((x - spec.lo) / width) as usize).min(spec.bins - 1);
            counts[idx] += 1;
        }
    }
    let norm = 1.0 / (mu.len() as f64 * width);
    (
        counts.into_iter().map(|c| c as f64 * norm).collect(),
        below,
        above,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantParams {
    pub particles: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub inits: Vec<InitSpec>,
    pub seed: u64,
    pub truncate_initial: bool,
    /// Index into `inits` that is rerun with an independent seed to measure the
    /// sampling noise floor of terminal distances.
    pub noise_floor_init: usize,
    pub histogram: HistogramSpec,
}

/// Short label used in table columns.
pub fn init_label(init: &InitSpec) -> String {
    match init {
        InitSpec::Constant { x0 } => {
            let parts: Vec<String> = x0.iter().map(|v| time_label(*v)).collect();
            format!("const_{}", parts.join("_"))
        }
        InitSpec::Normal { mean, sd } => {
            format!("normal_{}_{}", time_label(*mean), time_label(*sd))
        }
        InitSpec::Samples { .. } => "samples".to_string(),
    }
}

const NOISE_FLOOR_TAG: u64 = 0xF100D;

/// Long-time snapshots from several initial laws: W2 convergence in time for each
/// init, W2 between terminal snapshots across inits, and the two-seed noise floor.
pub fn invariant_measure_experiment(
    model: &ModelSpec,
    rule: &TruncationRule,
    params: &InvariantParams,
) -> Result<ExperimentReport> {
    if model.contraction.is_none() {
        return Err(TemError::config(
            "model.contraction",
            "invariant-measure study needs contraction parameters",
        ));
    }
    if params.times.is_empty() || params.inits.is_empty() {
        return Err(TemError::config(
            "T_list",
            "need at least one time and one init",
        ));
    }
    if params.noise_floor_init >= params.inits.len() {
        return Err(TemError::config("noise_floor_init", "index out of range"));
    }
    let mut times = params.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let horizon = *times.last().expect("non-empty");

    let observers = Observers {
        snapshot_times: times.clone(),
        ..Observers::default()
    };
    let run = |init: &InitSpec, seed: u64| -> Result<Vec<EmpiricalMeasure>> {
        let plan = NoisePlan::new(seed, params.dt, model.dim_noise)?;
        let config = SimConfig {
            particles: params.particles,
            dt: params.dt,
            horizon,
            init: init.clone(),
            truncate_initial: params.truncate_initial,
        };
        let out = simulate(model, Some(rule), &config, &plan, &observers)?;
        Ok(out.snapshots.into_iter().map(|s| s.measure).collect())
    };
    let mut jobs: Vec<(InitSpec, u64)> = params
        .inits
        .iter()
        .enumerate()
        .map(|(i, init)| (init.clone(), mix_seed(params.seed, i as u64 + 1)))
        .collect();
    jobs.push((
        params.inits[params.noise_floor_init].clone(),
        mix_seed(params.seed, NOISE_FLOOR_TAG),
    ));
    let mut snapshots: Vec<Vec<EmpiricalMeasure>> = jobs
        .par_iter()
        .map(|(init, seed)| run(init, *seed))
        .collect::<Result<_>>()?;
    let floor_run = snapshots.pop().expect("noise floor run");
    let labels: Vec<String> = params.inits.iter().map(init_label).collect();

    let mut report = ExperimentReport::new(
        ExperimentKind::Invariant,
        params.seed,
        serde_json::to_value(params)?,
    );

    let mut matrix = Table::new("w2_matrix", &["init", "t_i", "t_j", "w2"]);
    let mut successive = Table::new("w2_time", &["init", "t_from", "t_to", "w2"]);
    for (label, snaps) in labels.iter().zip(&snapshots) {
        for (i, a) in snaps.iter().enumerate() {
            for (j, b) in snaps.iter().enumerate() {
                let w = w2_default(a, b)?.value;
                matrix.push(vec![
                    Cell::from(label.as_str()),
                    times[i].into(),
                    times[j].into(),
                    w.into(),
                ]);
                if j == i + 1 {
                    successive.push(vec![
                        Cell::from(label.as_str()),
                        times[i].into(),
                        times[j].into(),
                        w.into(),
                    ]);
                }
            }
        }
    }

    let mut cross = Table::new("w2_inits", &["init_a", "init_b", "w2"]);
    let mut max_cross: f64 = 0.0;
    for a in 0..snapshots.len() {
        for b in a + 1..snapshots.len() {
            let w = w2_default(snapshots[a].last().unwrap(), snapshots[b].last().unwrap())?.value;
            max_cross = max_cross.max(w);
            cross.push(vec![
                Cell::from(labels[a].as_str()),
                labels[b].as_str().into(),
                w.into(),
            ]);
        }
    }
    let noise_floor = w2_default(
        snapshots[params.noise_floor_init].last().unwrap(),
        floor_run.last().unwrap(),
    )?
    .value;

    for (ti, &t) in times.iter().enumerate() {
        let mut columns = vec!["bin_lo".to_string(), "bin_hi".to_string()];
        columns.extend(labels.iter().cloned());
        let mut table = Table {
            name: format!("histogram_{}", time_label(t)),
            columns,
            rows: Vec::new(),
        };
        let hs: Vec<(Vec<f64>, usize, usize)> = snapshots
            .iter()
            .map(|s| histogram(&s[ti], params.histogram))
            .collect();
        let spec = params.histogram;
        let width = (spec.hi - spec.lo) / spec.bins as f64;
        for b in 0..spec.bins {
            let mut row = vec![
                Cell::from(spec.lo + b as f64 * width),
                (spec.lo + (b + 1) as f64 * width).into(),
            ];
            row.extend(hs.iter().map(|h| Cell::from(h.0[b])));
            table.push(row);
        }
        let outside: usize = hs.iter().map(|h| h.1 + h.2).sum();
        report.set_stat(
            &format!("histogram_outside[{}]", time_label(t)),
            outside as f64,
        );
        report.tables.push(table);
    }

    report.set_stat("noise_floor", noise_floor);
    report.set_stat("max_cross_init_w2", max_cross);
    report.set_stat("cross_over_floor", max_cross / noise_floor);
    report.set_note(
        "histogram",
        format!(
            "{} uniform bins over [{}, {}]",
            params.histogram.bins, params.histogram.lo, params.histogram.hi
        ),
    );
    report.set_note("noise_floor_init", labels[params.noise_floor_init].clone());
    report.tables.insert(0, cross);
    report.tables.insert(0, successive);
    report.tables.insert(0, matrix);
    Ok(report)
}

/// Looks up `W2(snapshot(t_i), snapshot(t_j))` for one init in an invariant report.
pub fn snapshot_distance(report: &ExperimentReport, init: &str, t_i: f64, t_j: f64) -> Option<f64> {
    let table = report.table("w2_matrix")?;
    table
        .rows
        .iter()
        .find_map(|r| match (&r[0], &r[1], &r[2], &r[3]) {
            (Cell::Text(l), Cell::Float(a), Cell::Float(b), Cell::Float(w))
                if l == init && (a - t_i).abs() < 1e-12 && (b - t_j).abs() < 1e-12 =>
            {
                Some(*w)
            }
            _ => None,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_normalises_to_one() {
        let mu = EmpiricalMeasure::from_scalars(&[-2.9, -0.01, 0.0, 1.5, 2.999, 3.0]).unwrap();
        let spec = HistogramSpec::default();
        let (density, below, above) = histogram(&mu, spec);
        let width = (spec.hi - spec.lo) / spec.bins as f64;
        let mass: f64 = density.iter().map(|d| d * width).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert_eq!((below, above), (0, 0));
        let (_, below, above) =
            histogram(&EmpiricalMeasure::from_scalars(&[-5.0, 4.0]).unwrap(), spec);
        assert_eq!((below, above), (1, 1));
    }

    #[test]
    fn labels() {
        assert_eq!(init_label(&InitSpec::constant(-5.0)), "const_-5");
        assert_eq!(init_label(&InitSpec::standard_normal()), "normal_0_1");
    }
}
