//! Time stepping of the interacting particle system: truncated Euler-Maruyama
//! (TEM) and the classical Euler-Maruyama (EM) baseline.
//!
//! Each step is two phases: a sequential pass over the states producing the
//! measure statistics, then an independent per-particle update that may run in
//! parallel. Results do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TemError};
use crate::measure::{norm_sq, EmpiricalMeasure, MeasureStats};
use crate::model::ModelSpec;
use crate::noise::{mix_seed, NoisePlan, NormalStream, PAR_CHUNK};
use crate::truncation::{project_in_place, TruncationRule};

/// Particle states `Y^{i,M}_{t_k}` at step `k`; time is `k * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    states: Vec<f64>,
    dim: usize,
    pub step_index: u64,
    pub dt: f64,
}

impl ParticleEnsemble {
    pub fn new(states: Vec<f64>, dim: usize, dt: f64) -> Result<Self> {
        if dim == 0 || states.is_empty() || !states.len().is_multiple_of(dim) {
            return Err(TemError::Domain(
                "ensemble needs M >= 1 whole d-vectors".into(),
            ));
        }
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(TemError::config(
                "dt",
                format!("step size must lie in (0, 1], got {dt}"),
            ));
        }
        Ok(ParticleEnsemble {
            states,
            dim,
            step_index: 0,
            dt,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::from_flat(self.dim, self.states.clone()).expect("ensemble is non-empty")
    }

    pub fn stats(&self) -> MeasureStats {
        MeasureStats::from_states(&self.states, self.dim)
    }

    /// Empirical second moment `(1/M) sum |Y^i|^2`.
    pub fn mean_square(&self) -> f64 {
        self.stats().second_moment
    }

    pub fn max_norm(&self) -> f64 {
        self.states
            .chunks_exact(self.dim)
            .map(|p| norm_sq(p).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.states.iter().all(|v| v.is_finite())
    }

    /// Projects every particle onto the ball of radius `r`.
    pub fn project_all(&mut self, r: f64) {
        for p in self.states.chunks_exact_mut(self.dim) {
            project_in_place(p, r);
        }
    }
}

fn check_dims(ens: &ParticleEnsemble, model: &ModelSpec, increments: &[f64]) -> Result<()> {
    if ens.dim != model.dim_state {
        return Err(TemError::Domain(format!(
            "ensemble dimension {} does not match model dimension {}",
            ens.dim, model.dim_state
        )));
    }
    if increments.len() != ens.len() * model.dim_noise {
        return Err(TemError::Domain(format!(
            "expected {} Brownian increments, got {}",
            ens.len() * model.dim_noise,
            increments.len()
        )));
    }
    Ok(())
}

/// Explicit update `y + f(y, mu) dt + g(y, mu) dB` for every particle, followed by
/// the optional projection. Returns the smallest particle index whose pre-projection
/// state is non-finite.
fn euler_update(
    ens: &mut ParticleEnsemble,
    model: &ModelSpec,
    increments: &[f64],
    radius: Option<f64>,
) -> Option<usize> {
    let stats = ens.stats();
    let (d, m, dt) = (ens.dim, model.dim_noise, ens.dt);
    let chunk = PAR_CHUNK * d;
    let first_bad = ens
        .states
        .par_chunks_mut(chunk)
        .zip(increments.par_chunks(PAR_CHUNK * m))
        .enumerate()
        .map(|(block, (states, dbs))| {
            let mut f = vec![0.0; d];
            let mut g = vec![0.0; d * m];
            let mut bad = None;
            for (j, (y, db)) in states
                .chunks_exact_mut(d)
                .zip(dbs.chunks_exact(m))
                .enumerate()
            {
                model.drift_into(y, &stats, &mut f);
                model.diffusion_into(y, &stats, &mut g);
                for r in 0..d {
                    let noise: f64 = g[r * m..(r + 1) * m]
                        .iter()
                        .zip(db)
                        .map(|(a, b)| a * b)
                        .sum();
                    y[r] += f[r] * dt + noise;
                }
                if bad.is_none() && !y.iter().all(|v| v.is_finite()) {
                    bad = Some(block * PAR_CHUNK + j);
                }
                if let Some(r) = radius {
                    project_in_place(y, r);
                }
            }
            bad
        })
        .flatten()
        .min();
    ens.step_index += 1;
    first_bad
}

/// One TEM step driven by explicit Brownian increments (M x m, row-major).
pub fn tem_step_with(
    ens: &mut ParticleEnsemble,
    model: &ModelSpec,
    rule: &TruncationRule,
    increments: &[f64],
) -> Result<()> {
    check_dims(ens, model, increments)?;
    let radius = rule.radius(ens.dt)?;
    let step = ens.step_index;
    match euler_update(ens, model, increments, Some(radius)) {
        Some(particle) => Err(TemError::NumericOverflow { particle, step }),
        None => {
            debug_assert!(ens.max_norm() <= radius);
            Ok(())
        }
    }
}

/// One EM step; non-finite states are kept. Returns the first non-finite particle, if any.
pub fn em_step_with(
    ens: &mut ParticleEnsemble,
    model: &ModelSpec,
    increments: &[f64],
) -> Result<Option<usize>> {
    check_dims(ens, model, increments)?;
    Ok(euler_update(ens, model, increments, None))
}

/// Stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Tem,
    Em,
}

/// Initial law of the particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitSpec {
    /// Every particle starts at `x0`.
    Constant { x0: Vec<f64> },
    /// I.i.d. coordinates `N(mean, sd^2)`.
    Normal { mean: f64, sd: f64 },
    /// The first M rows of a point cloud.
    Samples {
        #[serde(skip)]
        cloud: Option<EmpiricalMeasure>,
        #[serde(default)]
        path: Option<String>,
    },
}

/// Tag mixed into the master seed for the initial-condition streams.
const INIT_TAG: u64 = 0x494E_4954;

impl InitSpec {
    pub fn constant(x0: f64) -> Self {
        InitSpec::Constant { x0: vec![x0] }
    }

    pub fn standard_normal() -> Self {
        InitSpec::Normal { mean: 0.0, sd: 1.0 }
    }

    /// Draws the M initial states. Depends only on `(seed, particle index)`.
    pub fn draw(&self, particles: usize, dim: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            InitSpec::Constant { x0 } => {
                if x0.len() != dim {
                    return Err(TemError::config(
                        "init.x0",
                        format!("expected {dim} coordinates, got {}", x0.len()),
                    ));
                }
                Ok(x0.repeat(particles))
            }
            InitSpec::Normal { mean, sd } => {
                if !(*sd >= 0.0) {
                    return Err(TemError::config(
                        "init.sd",
                        "standard deviation must be >= 0",
                    ));
                }
                let init_seed = mix_seed(seed, INIT_TAG);
                Ok((0..particles)
                    .into_par_iter()
                    .with_min_len(PAR_CHUNK)
                    .flat_map_iter(|i| {
                        let mut s = NormalStream::new(init_seed, i as u64);
                        (0..dim).map(move |_| mean + sd * s.next_normal())
                    })
                    .collect())
            }
            InitSpec::Samples { cloud, path } => {
                let loaded;
                let cloud = match (cloud, path) {
                    (Some(c), _) => c,
                    (None, Some(p)) => {
                        loaded = EmpiricalMeasure::load_csv(std::path::Path::new(p))?;
                        &loaded
                    }
                    (None, None) => {
                        return Err(TemError::config("init.path", "sample init needs a file"))
                    }
                };
                if cloud.dim() != dim {
                    return Err(TemError::config("init.path", "sample dimension mismatch"));
                }
                if cloud.len() < particles {
                    return Err(TemError::config(
                        "init.path",
                        format!("{} samples for {particles} particles", cloud.len()),
                    ));
                }
                Ok(cloud.as_flat()[..particles * dim].to_vec())
            }
        }
    }
}

/// What to record during a simulation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Observers {
    /// Record (t, mean_sq, max_norm) every this many steps (and at the final step).
    #[serde(default)]
    pub moments_every: Option<u64>,
    /// Times at which to snapshot the whole ensemble; must lie on the grid.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Particles whose trajectories are written out.
    #[serde(default)]
    pub path_particles: Vec<usize>,
    /// Stride for path records; defaults to `moments_every` or 1.
    #[serde(default)]
    pub paths_every: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub step: u64,
    pub t: f64,
    pub mean_sq: f64,
    pub max_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRow {
    pub step: u64,
    pub t: f64,
    pub particle: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: u64,
    pub t: f64,
    pub measure: EmpiricalMeasure,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub scheme: Scheme,
    pub steps: u64,
    pub moments: Vec<MomentRow>,
    pub paths: Vec<PathRow>,
    pub snapshots: Vec<Snapshot>,
    pub final_ensemble: ParticleEnsemble,
    /// First step after which some state was non-finite (EM only).
    pub overflow_step: Option<u64>,
}

/// Parameters of one particle simulation.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub particles: usize,
    pub dt: f64,
    pub horizon: f64,
    pub init: InitSpec,
    pub truncate_initial: bool,
}

/// Number of steps `T / dt`, which must be an integer.
pub fn step_count(horizon: f64, dt: f64) -> Result<u64> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(TemError::config(
            "T",
            "horizon must be a finite nonnegative time",
        ));
    }
    if !(dt > 0.0 && dt <= 1.0) {
        return Err(TemError::config(
            "dt",
            format!("step size must lie in (0, 1], got {dt}"),
        ));
    }
    grid_index(horizon, dt).ok_or_else(|| {
        TemError::config(
            "T",
            format!("T = {horizon} is not an integer multiple of dt = {dt}"),
        )
    })
}

fn grid_index(t: f64, dt: f64) -> Option<u64> {
    let k = (t / dt).round();
    if k >= 0.0 && (k * dt - t).abs() <= 1e-9 * t.max(dt) {
        Some(k as u64)
    } else {
        None
    }
}

/// Replaces a non-finite second moment by the `+inf` sentinel.
fn sentinel(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Runs `T / dt` steps of TEM (`rule = Some`) or EM (`rule = None`).
///
/// Brownian increments come from `noise` aggregated to `dt`; initial states come
/// from `config.init` keyed by `noise.master_seed`.
pub fn simulate(
    model: &ModelSpec,
    rule: Option<&TruncationRule>,
    config: &SimConfig,
    noise: &NoisePlan,
    observers: &Observers,
) -> Result<SimOutput> {
    if config.particles == 0 {
        return Err(TemError::config("M", "need at least one particle"));
    }
    if noise.dim_noise != model.dim_noise {
        return Err(TemError::config(
            "noise",
            "noise dimension does not match the model",
        ));
    }
    let steps = step_count(config.horizon, config.dt)?;
    let d = model.dim_state;
    let init = config.init.draw(config.particles, d, noise.master_seed)?;
    let mut ens = ParticleEnsemble::new(init, d, config.dt)?;
    let radius = match rule {
        Some(r) => Some(r.radius(config.dt)?),
        None => None,
    };
    if let (Some(r), true) = (radius, config.truncate_initial) {
        ens.project_all(r);
    }
    let mut source = noise.source(config.particles, config.dt)?;

    let mut snapshot_steps = Vec::with_capacity(observers.snapshot_times.len());
    for &t in &observers.snapshot_times {
        let k = grid_index(t, config.dt).ok_or_else(|| {
            TemError::config(
                "observers.snapshot_times",
                format!("t = {t} is off the grid"),
            )
        })?;
        if k > steps {
            return Err(TemError::config(
                "observers.snapshot_times",
                format!("t = {t} exceeds T = {}", config.horizon),
            ));
        }
        snapshot_steps.push(k);
    }
    if let Some(&bad) = observers
        .path_particles
        .iter()
        .find(|&&i| i >= config.particles)
    {
        return Err(TemError::config(
            "observers.path_particles",
            format!("particle {bad} out of range"),
        ));
    }
    let moments_every = observers.moments_every.filter(|&e| e > 0);
    let paths_every = observers.paths_every.or(moments_every).unwrap_or(1).max(1);

    let scheme = if rule.is_some() {
        Scheme::Tem
    } else {
        Scheme::Em
    };
    let mut out = SimOutput {
        scheme,
        steps,
        moments: Vec::new(),
        paths: Vec::new(),
        snapshots: Vec::new(),
        final_ensemble: ens.clone(),
        overflow_step: None,
    };
    let mut increments = vec![0.0; config.particles * model.dim_noise];

    let record = |ens: &ParticleEnsemble, out: &mut SimOutput, overflowed: bool| {
        let k = ens.step_index;
        let t = ens.time();
        if moments_every.is_some_and(|e| k.is_multiple_of(e) || k == steps) {
            let (mean_sq, max_norm) = if overflowed {
                (f64::INFINITY, f64::INFINITY)
            } else {
                (sentinel(ens.mean_square()), sentinel(ens.max_norm()))
            };
            out.moments.push(MomentRow {
                step: k,
                t,
                mean_sq,
                max_norm,
            });
        }
        if !observers.path_particles.is_empty() && (k.is_multiple_of(paths_every) || k == steps) {
            for &i in &observers.path_particles {
                out.paths.push(PathRow {
                    step: k,
                    t,
                    particle: i,
                    value: ens.particle(i)[0],
                });
            }
        }
        for &s in snapshot_steps.iter().filter(|&&s| s == k) {
            out.snapshots.push(Snapshot {
                step: s,
                t,
                measure: ens.measure(),
            });
        }
    };

    record(&ens, &mut out, false);
    let mut overflowed = false;
    for _ in 0..steps {
        if overflowed {
            // Keep the time grid of the report; states are no longer meaningful.
            ens.step_index += 1;
            record(&ens, &mut out, true);
            continue;
        }
        source.fill_next(&mut increments);
        match rule {
            Some(r) => tem_step_with(&mut ens, model, r, &increments)?,
            None => {
                let bad = em_step_with(&mut ens, model, &increments)?;
                if bad.is_some() || !ens.mean_square().is_finite() {
                    overflowed = true;
                    out.overflow_step = Some(ens.step_index);
                }
            }
        }
        record(&ens, &mut out, overflowed);
    }
    out.final_ensemble = ens;
    Ok(out)
}

/// Fine/coarse RMSE study on shared Brownian paths.
#[derive(Debug, Clone)]
pub struct RmseRow {
    pub dt: f64,
    pub rmse: f64,
}

/// Runs the reference TEM solution at `reference_dt` and each coarse solution on
/// the aggregated increments, returning
/// `RMSE(dt) = sqrt((1/M) sum_i |Y_T^{i,dt} - Y_T^{i,ref}|^2)` per coarse step.
pub fn coupled_rmse(
    model: &ModelSpec,
    rule: &TruncationRule,
    config: &SimConfig,
    coarse_dts: &[f64],
    reference_dt: f64,
    seed: u64,
) -> Result<Vec<RmseRow>> {
    let plan = NoisePlan::new(seed, reference_dt, model.dim_noise)?;
    for &dt in coarse_dts {
        plan.level_for(dt)?;
        step_count(config.horizon, dt)?;
    }
    let run = |dt: f64| -> Result<ParticleEnsemble> {
        let cfg = SimConfig {
            dt,
            ..config.clone()
        };
        Ok(simulate(model, Some(rule), &cfg, &plan, &Observers::default())?.final_ensemble)
    };
    let mut dts = vec![reference_dt];
    dts.extend_from_slice(coarse_dts);
    let finals: Vec<ParticleEnsemble> = dts
        .par_iter()
        .map(|&dt| run(dt))
        .collect::<Result<Vec<_>>>()?;
    let reference = finals[0].measure();
    finals[1..]
        .iter()
        .zip(coarse_dts)
        .map(|(ens, &dt)| {
            let rmse = crate::measure::w2_matched(&ens.measure(), &reference)?.value;
            Ok(RmseRow { dt, rmse })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_double_well, builtin_vol32, zero_dynamics, FnCoefficients};
    use crate::truncation::{polynomial_rule, DEFAULT_KAPPA};
    use std::sync::Arc;

    fn vol32_rule() -> TruncationRule {
        polynomial_rule(1.0, 2.0, 8.0, DEFAULT_KAPPA).unwrap()
    }

    #[test]
    fn zero_dynamics_is_identity() {
        let model = zero_dynamics(1);
        let rule = vol32_rule();
        let mut ens = ParticleEnsemble::new(vec![0.5, -0.25, 0.0], 1, 0.25).unwrap();
        let before = ens.states().to_vec();
        for _ in 0..4 {
            tem_step_with(&mut ens, &model, &rule, &[0.3, -1.0, 2.0]).unwrap();
        }
        assert_eq!(ens.states(), &before[..]);
        assert_eq!(ens.step_index, 4);
        assert_eq!(ens.time(), 1.0);
        em_step_with(&mut ens, &model, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(ens.states(), &before[..]);
    }

    #[test]
    fn vol32_single_step_by_hand() {
        // Y = 1, dt = 1, dB = 0: Ybar = 1 + (1(-3) + 1) = -1; radius(1) = 1.
        let scalar_step = |y: f64, mean: f64, dt: f64, db: f64| {
            y + (y * (-2.0 - y.abs()) + mean) * dt + 0.5 * y.abs().powf(1.5) * db
        };
        let ybar = scalar_step(1.0, 1.0, 1.0, 0.0);
        assert_eq!(ybar, -1.0);
        let mut ens = ParticleEnsemble::new(vec![1.0], 1, 1.0).unwrap();
        tem_step_with(&mut ens, &builtin_vol32(), &vol32_rule(), &[0.0]).unwrap();
        assert_eq!(ens.states(), &[ybar.clamp(-1.0, 1.0)]);
    }

    #[test]
    fn saturation_hits_radius_exactly() {
        let rule = vol32_rule();
        let dt = 0.125;
        let r = rule.radius(dt).unwrap();
        let mut ens = ParticleEnsemble::new(vec![r, -r], 1, dt).unwrap();
        // Large noise pushes both particles out of the ball.
        tem_step_with(&mut ens, &builtin_vol32(), &rule, &[50.0, -50.0]).unwrap();
        assert_eq!(ens.states(), &[r, -r]);
    }

    #[test]
    fn linear_decay_matches_explicit_euler() {
        let coeffs = FnCoefficients::new(
            |x: &[f64], _: &MeasureStats, out: &mut [f64]| out[0] = -x[0],
            |_: &[f64], _: &MeasureStats, out: &mut [f64]| out[0] = 0.0,
        );
        let model = ModelSpec::new("decay", 1, 1, 1.0, 1.0, Arc::new(coeffs)).unwrap();
        let mut ens = ParticleEnsemble::new(vec![1.0], 1, 0.5).unwrap();
        for _ in 0..2 {
            tem_step_with(&mut ens, &model, &vol32_rule(), &[0.7]).unwrap();
        }
        assert_eq!(ens.states(), &[0.25]);
    }

    #[test]
    fn em_agrees_with_tem_inside_ball() {
        let model = builtin_double_well();
        let rule = polynomial_rule(2.0, 3.0, 12.0, DEFAULT_KAPPA).unwrap();
        let init = vec![0.1, -0.3, 0.5, 0.0];
        let db = [0.05, -0.02, 0.01, 0.03];
        let mut a = ParticleEnsemble::new(init.clone(), 1, 0.01).unwrap();
        let mut b = ParticleEnsemble::new(init, 1, 0.01).unwrap();
        tem_step_with(&mut a, &model, &rule, &db).unwrap();
        assert_eq!(em_step_with(&mut b, &model, &db).unwrap(), None);
        assert_eq!(a, b);
    }

    #[test]
    fn overflow_reports_particle() {
        let coeffs = FnCoefficients::new(
            |x: &[f64], _: &MeasureStats, out: &mut [f64]| {
                out[0] = if x[0] > 0.5 { f64::INFINITY } else { 0.0 }
            },
            |_: &[f64], _: &MeasureStats, out: &mut [f64]| out[0] = 0.0,
        );
        let model = ModelSpec::new("blowup", 1, 1, 1.0, 1.0, Arc::new(coeffs)).unwrap();
        let mut ens = ParticleEnsemble::new(vec![0.0, 0.9, 0.7], 1, 0.5).unwrap();
        let err = tem_step_with(&mut ens, &model, &vol32_rule(), &[0.0; 3]).unwrap_err();
        assert!(matches!(
            err,
            TemError::NumericOverflow {
                particle: 1,
                step: 0
            }
        ));
        let mut ens = ParticleEnsemble::new(vec![0.0, 0.9, 0.7], 1, 0.5).unwrap();
        assert_eq!(em_step_with(&mut ens, &model, &[0.0; 3]).unwrap(), Some(1));
    }

    #[test]
    fn horizon_zero_records_initial_only() {
        let model = builtin_vol32();
        let plan = NoisePlan::new(5, 0.05, 1).unwrap();
        let cfg = SimConfig {
            particles: 4,
            dt: 0.05,
            horizon: 0.0,
            init: InitSpec::constant(18.0),
            truncate_initial: true,
        };
        let obs = Observers {
            moments_every: Some(1),
            snapshot_times: vec![0.0],
            ..Observers::default()
        };
        let out = simulate(&model, Some(&vol32_rule()), &cfg, &plan, &obs).unwrap();
        assert_eq!(out.steps, 0);
        assert_eq!(out.moments.len(), 1);
        assert_eq!(out.snapshots.len(), 1);
        let r = vol32_rule().radius(0.05).unwrap();
        assert_eq!(out.moments[0].max_norm, r);
    }

    #[test]
    fn off_grid_horizon_rejected() {
        assert!(step_count(1.0, 0.3).is_err());
        assert_eq!(step_count(10.0, 0.05).unwrap(), 200);
        assert_eq!(step_count(1.0, 2f64.powi(-16)).unwrap(), 65536);
    }

    #[test]
    fn identical_reference_gives_zero_rmse() {
        let model = builtin_vol32();
        let cfg = SimConfig {
            particles: 16,
            dt: 2f64.powi(-6),
            horizon: 0.25,
            init: InitSpec::constant(1.0),
            truncate_initial: true,
        };
        let rows = coupled_rmse(
            &model,
            &vol32_rule(),
            &cfg,
            &[2f64.powi(-6)],
            2f64.powi(-6),
            3,
        )
        .unwrap();
        assert_eq!(rows[0].rmse, 0.0);
        assert!(coupled_rmse(&model, &vol32_rule(), &cfg, &[0.03], 2f64.powi(-6), 3).is_err());
    }
}
