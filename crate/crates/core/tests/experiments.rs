use tem_core::experiments::invariant::snapshot_distance;
use tem_core::experiments::*;
use tem_core::model::{
    builtin_double_well, builtin_vol32, check_contraction, check_dissipativity, linear_sanity,
    search_dissipativity, Probe, ProbePair,
};
use tem_core::scheme::InitSpec;
use tem_core::{EmpiricalMeasure, MeasureStats, RunConfig};

#[test]
fn linear_model_converges_at_least_at_half_order() {
    let model = linear_sanity();
    let report = convergence_experiment(
        &model,
        &model.default_rule().unwrap(),
        &ConvergenceParams {
            particles: 300,
            dts: (6..=9).map(|k| 2f64.powi(-k)).collect(),
            ref_dt: 2f64.powi(-13),
            horizon: 1.0,
            init: InitSpec::constant(1.0),
            seed: 31,
            truncate_initial: true,
        },
    )
    .unwrap();
    let slope = report.stat("slope").unwrap();
    assert!(slope >= 0.5 - 0.15, "slope {slope}");
    assert!(report.stat("residual_std_error").is_some());
}

#[test]
fn invariant_report_is_symmetric_and_inits_merge() {
    let model = builtin_double_well();
    let params = InvariantParams {
        particles: 2000,
        dt: 0.01,
        times: vec![0.4, 1.0, 15.0, 20.0, 30.0],
        inits: vec![
            InitSpec::constant(1.0),
            InitSpec::constant(-5.0),
            InitSpec::standard_normal(),
        ],
        seed: 12,
        truncate_initial: true,
        noise_floor_init: 2,
        histogram: HistogramSpec::default(),
    };
    let report =
        invariant_measure_experiment(&model, &model.default_rule().unwrap(), &params).unwrap();
    for label in ["const_1", "const_-5", "normal_0_1"] {
        for &a in &params.times {
            assert_eq!(snapshot_distance(&report, label, a, a), Some(0.0));
            for &b in &params.times {
                let ab = snapshot_distance(&report, label, a, b).unwrap();
                let ba = snapshot_distance(&report, label, b, a).unwrap();
                assert_eq!(ab.to_bits(), ba.to_bits());
            }
        }
    }
    let cross = report.table("w2_inits").unwrap().floats("w2").unwrap();
    assert_eq!(cross.len(), 3);
    assert!(cross.iter().all(|&w| w < 0.1), "{cross:?}");
    let floor = report.stat("noise_floor").unwrap();
    assert!(floor > 0.0 && floor < 0.1);
    // Histogram tables hold densities over the fixed 200-bin grid.
    let h = report.table("histogram_30").unwrap();
    assert_eq!(h.rows.len(), 200);
    assert_eq!(
        h.columns,
        ["bin_lo", "bin_hi", "const_1", "const_-5", "normal_0_1"]
    );
}

fn probe(x: f64, atoms: &[f64]) -> Probe {
    Probe {
        x: vec![x],
        mu: EmpiricalMeasure::from_scalars(atoms).unwrap(),
    }
}

#[test]
fn double_well_grid_admits_dissipativity_parameters() {
    let model = builtin_double_well();
    let probes: Vec<Probe> = (-3..=3)
        .flat_map(|x| [-1.0, 0.0, 1.0].map(|m| probe(x as f64, &[m])))
        .collect();
    let grid: Vec<f64> = (0..=12).map(|k| k as f64 * 0.5).collect();
    let cs: Vec<f64> = (0..=8).map(|k| k as f64 * 0.125).collect();
    let (params, report) = search_dissipativity(&model, &probes, &grid, &grid, &cs).unwrap();
    assert!(report.consistent());
    // g(0, d0) = 1/2 forces c >= 1/4 at the probe x = 0, mu = d0.
    assert_eq!(params.c, 0.25);
    assert!(check_dissipativity(&model, &probes).unwrap().consistent());
}

#[test]
fn vol32_declared_constants_hold_on_probes() {
    let model = builtin_vol32();
    let xs: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.25).collect();
    let probes: Vec<Probe> = xs
        .iter()
        .flat_map(|&x| [probe(x, &[x]), probe(x, &[0.0]), probe(x, &[-1.0, 1.0])])
        .collect();
    assert!(check_dissipativity(&model, &probes).unwrap().consistent());
    let pairs: Vec<ProbePair> = xs
        .iter()
        .zip(xs.iter().rev())
        .map(|(&a, &b)| ProbePair {
            first: probe(a, &[a, 0.0]),
            second: probe(b, &[b, 0.5]),
        })
        .collect();
    assert!(check_contraction(&model, &pairs).unwrap().consistent());
}

#[test]
fn vol32_has_an_equilibrium_at_the_origin() {
    let model = builtin_vol32();
    let origin = MeasureStats::dirac(&[0.0]);
    assert_eq!(model.drift(&[0.0], &origin), vec![0.0]);
    assert_eq!(model.diffusion(&[0.0], &origin), vec![0.0]);
    // The double well's diffusion does not vanish there.
    assert_eq!(builtin_double_well().diffusion(&[0.0], &origin), vec![0.5]);
}

#[test]
fn reports_are_reproducible_from_their_echoed_config() {
    let cfg = RunConfig::from_json_str(
        r#"{"experiment": "chaos", "model": "double_well", "M_list": [8, 16, 32],
            "M_ref": 128, "replications": 3, "dt": 0.0625, "T": 0.5, "seed": 2}"#,
        &[],
    )
    .unwrap();
    let first = cfg.run(None).unwrap();
    let echoed = RunConfig::from_json_str(&first.to_json_string().unwrap(), &[]).unwrap();
    let second = echoed.run(None).unwrap();
    assert_eq!(
        first.to_json_string().unwrap(),
        second.to_json_string().unwrap()
    );
    for (a, b) in first.tables.iter().zip(&second.tables) {
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
    }
}
