//! McKean-Vlasov coefficient models `f(x, mu)`, `g(x, mu)`.
//!
//! Coefficients see the measure only through [`MeasureStats`] (mean and raw second
//! moment), so one O(M) pass per step serves every particle.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Result, TemError};
use crate::measure::{norm_sq, EmpiricalMeasure, MeasureStats};
use crate::truncation::{polynomial_rule, TruncationRule, DEFAULT_KAPPA};

/// Drift and diffusion of an MV-SDE. Implementations must be pure.
pub trait Coefficients: Send + Sync {
    /// Writes `f(x, mu)` (length d) into `out`.
    fn drift(&self, x: &[f64], mu: &MeasureStats, out: &mut [f64]);
    /// Writes `g(x, mu)` as a row-major d x m matrix into `out`.
    fn diffusion(&self, x: &[f64], mu: &MeasureStats, out: &mut [f64]);
}

/// Parameters `(lambda1, lambda2, c)` of
/// `2 x.f(x,mu) + |g(x,mu)|^2 <= -lambda1 |x|^2 + lambda2 mu(|.|^2) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dissipativity {
    pub lambda1: f64,
    pub lambda2: f64,
    pub c: f64,
}

/// Parameters `(lambda1, lambda2)` of the one-sided contraction condition
/// `2 (x1-x2).(f1-f2) + |g1-g2|^2 <= -lambda1 |x1-x2|^2 + lambda2 W2^2(mu1, mu2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contraction {
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim_state: usize,
    pub dim_noise: usize,
    pub alpha: f64,
    pub trunc_constant: f64,
    /// Growth constant `L` of the polynomial control `phi(u) = 2L(1 + u^alpha)`.
    pub growth_l: f64,
    pub dissipativity: Option<Dissipativity>,
    pub contraction: Option<Contraction>,
    coefficients: Arc<dyn Coefficients>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("alpha", &self.alpha)
            .field("trunc_constant", &self.trunc_constant)
            .field("growth_l", &self.growth_l)
            .field("dissipativity", &self.dissipativity)
            .field("contraction", &self.contraction)
            .finish_non_exhaustive()
    }
}

/// Serializable parameter summary of a model.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub name: String,
    pub dim_state: usize,
    pub dim_noise: usize,
    pub alpha: f64,
    pub trunc_constant: f64,
    pub growth_l: f64,
    pub dissipativity: Option<Dissipativity>,
    pub contraction: Option<Contraction>,
    pub description: String,
}

impl ModelSpec {
    /// Registers a model. Fails unless `K >= |f(0, delta_0)| v |g(0, delta_0)|^2`.
    pub fn new(
        name: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        alpha: f64,
        trunc_constant: f64,
        coefficients: Arc<dyn Coefficients>,
    ) -> Result<Self> {
        let name = name.into();
        if dim_state == 0 || dim_noise == 0 {
            return Err(TemError::config(
                "model",
                "state and noise dimensions must be positive",
            ));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(TemError::config(
                "model.alpha",
                "alpha must be a finite nonnegative real",
            ));
        }
        if !(trunc_constant > 0.0) {
            return Err(TemError::config(
                "model.K",
                "trunc_constant must be positive",
            ));
        }
        let spec = ModelSpec {
            name,
            dim_state,
            dim_noise,
            alpha,
            trunc_constant,
            growth_l: trunc_constant / 4.0,
            dissipativity: None,
            contraction: None,
            coefficients,
        };
        let origin = vec![0.0; dim_state];
        let at_origin = MeasureStats::dirac(&origin);
        let f0 = norm_sq(&spec.drift(&origin, &at_origin)).sqrt();
        let g0 = norm_sq(&spec.diffusion(&origin, &at_origin));
        if trunc_constant < f0.max(g0) {
            return Err(TemError::config(
                "model.K",
                format!(
                    "trunc_constant {trunc_constant} is below |f(0,d0)| v |g(0,d0)|^2 = {}",
                    f0.max(g0)
                ),
            ));
        }
        Ok(spec)
    }

    /// Overrides the default `L = K/4`; `L < K/2` keeps every `dt <= 1` admissible.
    pub fn with_growth_l(mut self, l: f64) -> Result<Self> {
        if !(l > 0.0) {
            return Err(TemError::config("truncation.L", "L must be positive"));
        }
        self.growth_l = l;
        Ok(self)
    }

    /// Polynomial truncation rule built from the model's `alpha`, `L`, `K`.
    pub fn default_rule(&self) -> Result<TruncationRule> {
        polynomial_rule(
            self.alpha,
            self.growth_l,
            self.trunc_constant,
            DEFAULT_KAPPA,
        )
    }

    /// Whether `f` or `g` changes with the measure, probed on a small grid of
    /// states against point masses at different locations.
    pub fn depends_on_measure(&self) -> bool {
        let d = self.dim_state;
        let laws: Vec<MeasureStats> = [-2.0, 0.0, 1.5]
            .iter()
            .map(|&v| MeasureStats::dirac(&vec![v; d]))
            .collect();
        [-1.0, 0.0, 0.5, 2.0].iter().any(|&v| {
            let x = vec![v; d];
            let (f0, g0) = (self.drift(&x, &laws[0]), self.diffusion(&x, &laws[0]));
            laws[1..]
                .iter()
                .any(|mu| self.drift(&x, mu) != f0 || self.diffusion(&x, mu) != g0)
        })
    }

    pub fn with_dissipativity(mut self, d: Dissipativity) -> Result<Self> {
        if !(d.lambda1 > d.lambda2 && d.lambda2 >= 0.0 && d.c >= 0.0) {
            return Err(TemError::config(
                "model.dissipativity",
                "need lambda1 > lambda2 >= 0 and c >= 0",
            ));
        }
        self.dissipativity = Some(d);
        Ok(self)
    }

    pub fn with_contraction(mut self, c: Contraction) -> Result<Self> {
        if !(c.lambda1 > c.lambda2 && c.lambda2 >= 0.0) {
            return Err(TemError::config(
                "model.contraction",
                "need lambda1 > lambda2 >= 0",
            ));
        }
        self.contraction = Some(c);
        Ok(self)
    }

    pub fn coefficients(&self) -> &Arc<dyn Coefficients> {
        &self.coefficients
    }

    pub fn drift_into(&self, x: &[f64], mu: &MeasureStats, out: &mut [f64]) {
        self.coefficients.drift(x, mu, out)
    }

    pub fn diffusion_into(&self, x: &[f64], mu: &MeasureStats, out: &mut [f64]) {
        self.coefficients.diffusion(x, mu, out)
    }

    pub fn drift(&self, x: &[f64], mu: &MeasureStats) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state];
        self.drift_into(x, mu, &mut out);
        out
    }

    pub fn diffusion(&self, x: &[f64], mu: &MeasureStats) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state * self.dim_noise];
        self.diffusion_into(x, mu, &mut out);
        out
    }

    /// `f(x, mu)` against a full empirical measure.
    pub fn drift_at(&self, x: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
        self.drift(x, &mu.stats())
    }

    pub fn diffusion_at(&self, x: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
        self.diffusion(x, &mu.stats())
    }

    pub fn summary(&self, description: &str) -> ModelSummary {
        ModelSummary {
            name: self.name.clone(),
            dim_state: self.dim_state,
            dim_noise: self.dim_noise,
            alpha: self.alpha,
            trunc_constant: self.trunc_constant,
            growth_l: self.growth_l,
            dissipativity: self.dissipativity,
            contraction: self.contraction,
            description: description.to_string(),
        }
    }
}

/// Coefficients backed by closures, for user-registered models.
pub struct FnCoefficients<F, G> {
    drift: F,
    diffusion: G,
}

impl<F, G> FnCoefficients<F, G>
where
    F: Fn(&[f64], &MeasureStats, &mut [f64]) + Send + Sync,
    G: Fn(&[f64], &MeasureStats, &mut [f64]) + Send + Sync,
{
    pub fn new(drift: F, diffusion: G) -> Self {
        FnCoefficients { drift, diffusion }
    }
}

impl<F, G> Coefficients for FnCoefficients<F, G>
where
    F: Fn(&[f64], &MeasureStats, &mut [f64]) + Send + Sync,
    G: Fn(&[f64], &MeasureStats, &mut [f64]) + Send + Sync,
{
    fn drift(&self, x: &[f64], mu: &MeasureStats, out: &mut [f64]) {
        (self.drift)(x, mu, out)
    }

    fn diffusion(&self, x: &[f64], mu: &MeasureStats, out: &mut [f64]) {
        (self.diffusion)(x, mu, out)
    }
}

/// Scalar mean-field models of the form `f(x, mu) = s * core(x) + c * mean(mu)`.
#[derive(Debug, Clone, Copy)]
struct ScalarMeanField {
    kind: ScalarKind,
    drift_scale: f64,
    interaction: f64,
}

#[derive(Debug, Clone, Copy)]
enum ScalarKind {
    /// `core(x) = x(-2-|x|)`, `g = |x|^{3/2}/2`.
    Vol32,
    /// `core(x) = 2x(-1-x^2)`, `g = (1-x^2)/2`.
    DoubleWell,
}

impl Coefficients for ScalarMeanField {
    fn drift(&self, x: &[f64], mu: &MeasureStats, out: &mut [f64]) {
        let x = x[0];
        let core = match self.kind {
            ScalarKind::Vol32 => x * (-2.0 - x.abs()),
            ScalarKind::DoubleWell => 2.0 * x * (-1.0 - x * x),
        };
        out[0] = self.drift_scale * core + self.interaction * mu.mean[0];
    }

    fn diffusion(&self, x: &[f64], _mu: &MeasureStats, out: &mut [f64]) {
        let x = x[0];
        out[0] = match self.kind {
            ScalarKind::Vol32 => x.abs().powf(1.5) / 2.0,
            ScalarKind::DoubleWell => (1.0 - x * x) / 2.0,
        };
    }
}

/// Mean-field 3/2 stochastic volatility model:
/// `f(x,mu) = x(-2-|x|) + mean(mu)`, `g(x,mu) = |x|^{3/2}/2`, alpha = 1, K = 8.
pub fn builtin_vol32() -> ModelSpec {
    let coeffs = ScalarMeanField {
        kind: ScalarKind::Vol32,
        drift_scale: 1.0,
        interaction: 1.0,
    };
    ModelSpec::new("vol32", 1, 1, 1.0, 8.0, Arc::new(coeffs))
        .and_then(|m| {
            m.with_dissipativity(Dissipativity {
                lambda1: 3.0,
                lambda2: 1.0,
                c: 0.0,
            })
        })
        .and_then(|m| {
            m.with_contraction(Contraction {
                lambda1: 3.0,
                lambda2: 1.0,
            })
        })
        .expect("vol32 constants are valid")
}

/// Mean-field stochastic double-well dynamics:
/// `f(x,mu) = 2x(-1-x^2) + mean(mu)`, `g(x,mu) = (1-x^2)/2`, alpha = 2, K = 12.
pub fn builtin_double_well() -> ModelSpec {
    double_well_variant("double_well", 1.0, 1.0)
}

/// Double-well dynamics with the mean-field term removed; particles are i.i.d.
pub fn double_well_interaction_free() -> ModelSpec {
    double_well_variant("double_well_free", 1.0, 0.0)
}

/// Double-well dynamics with the confining drift multiplied by `drift_scale >= 1`.
pub fn double_well_scaled(drift_scale: f64) -> Result<ModelSpec> {
    if !(drift_scale >= 1.0) {
        return Err(TemError::config("drift_scale", "must be >= 1"));
    }
    let coeffs = ScalarMeanField {
        kind: ScalarKind::DoubleWell,
        drift_scale,
        interaction: 1.0,
    };
    // A larger drift scale keeps the same (lambda1, lambda2, c) admissible, and
    // |f| grows by drift_scale, so alpha stays 2 and K scales with it.
    ModelSpec::new(
        format!("double_well_x{drift_scale}"),
        1,
        1,
        2.0,
        12.0 * drift_scale,
        Arc::new(coeffs),
    )?
    .with_dissipativity(Dissipativity {
        lambda1: 3.0,
        lambda2: 1.0,
        c: 0.25,
    })?
    .with_contraction(Contraction {
        lambda1: 3.0,
        lambda2: 1.0,
    })
}

fn double_well_variant(name: &str, drift_scale: f64, interaction: f64) -> ModelSpec {
    let coeffs = ScalarMeanField {
        kind: ScalarKind::DoubleWell,
        drift_scale,
        interaction,
    };
    // g(0, d0) = 1/2, so the dissipativity constant c must absorb |g(0)|^2 = 1/4.
    ModelSpec::new(name, 1, 1, 2.0, 12.0, Arc::new(coeffs))
        .and_then(|m| {
            m.with_dissipativity(Dissipativity {
                lambda1: 3.0,
                lambda2: 1.0,
                c: 0.25,
            })
        })
        .and_then(|m| {
            m.with_contraction(Contraction {
                lambda1: 3.0,
                lambda2: 1.0,
            })
        })
        .expect("double-well constants are valid")
}

/// Linear sanity model `f = -x`, `g = 0.1` with no measure dependence.
pub fn linear_sanity() -> ModelSpec {
    let coeffs = FnCoefficients::new(
        |x: &[f64], _: &MeasureStats, out: &mut [f64]| out[0] = -x[0],
        |_: &[f64], _: &MeasureStats, out: &mut [f64]| out[0] = 0.1,
    );
    ModelSpec::new("linear", 1, 1, 1.0, 1.0, Arc::new(coeffs))
        .and_then(|m| {
            m.with_dissipativity(Dissipativity {
                lambda1: 2.0,
                lambda2: 0.0,
                c: 0.01,
            })
        })
        .and_then(|m| {
            m.with_contraction(Contraction {
                lambda1: 2.0,
                lambda2: 0.0,
            })
        })
        .expect("linear constants are valid")
}

/// `f = 0`, `g = 0` in dimension `dim`.
pub fn zero_dynamics(dim: usize) -> ModelSpec {
    let coeffs = FnCoefficients::new(
        |_: &[f64], _: &MeasureStats, out: &mut [f64]| out.fill(0.0),
        |_: &[f64], _: &MeasureStats, out: &mut [f64]| out.fill(0.0),
    );
    ModelSpec::new("zero", dim, dim, 1.0, 1.0, Arc::new(coeffs)).expect("zero model is valid")
}

const BUILTINS: &[(&str, &str)] = &[
    (
        "vol32",
        "mean-field 3/2 stochastic volatility: f = x(-2-|x|) + E X, g = |x|^1.5 / 2",
    ),
    (
        "double_well",
        "mean-field stochastic double well: f = 2x(-1-x^2) + E X, g = (1-x^2) / 2",
    ),
    (
        "double_well_free",
        "double well without the mean-field term (i.i.d. particles)",
    ),
    ("linear", "linear sanity model: f = -x, g = 0.1"),
    ("zero", "trivial dynamics: f = 0, g = 0"),
];

/// Looks up a built-in model by its CLI name.
pub fn model_by_name(name: &str) -> Result<ModelSpec> {
    match name {
        "vol32" => Ok(builtin_vol32()),
        "double_well" => Ok(builtin_double_well()),
        "double_well_free" => Ok(double_well_interaction_free()),
        "linear" => Ok(linear_sanity()),
        "zero" => Ok(zero_dynamics(1)),
        other => Err(TemError::UnknownModel(other.to_string())),
    }
}

pub fn list_models() -> Vec<ModelSummary> {
    BUILTINS
        .iter()
        .map(|(name, desc)| model_by_name(name).expect("builtin").summary(desc))
        .collect()
}

/// A probe point `(x, mu)` for the assumption checkers.
#[derive(Debug, Clone)]
pub struct Probe {
    pub x: Vec<f64>,
    pub mu: EmpiricalMeasure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginReport {
    /// Largest left-minus-right margin over the probe set; `<= 0` is consistent.
    pub worst_margin: f64,
    pub worst_probe: usize,
    pub probes: usize,
}

impl MarginReport {
    pub fn consistent(&self) -> bool {
        self.worst_margin <= 0.0
    }
}

/// Evaluates `2 x.f + |g|^2 + lambda1 |x|^2 - lambda2 mu(|.|^2) - c` on each probe.
pub fn dissipativity_margins(
    model: &ModelSpec,
    params: Dissipativity,
    probes: &[Probe],
) -> Vec<f64> {
    probes
        .iter()
        .map(|p| {
            let stats = p.mu.stats();
            let f = model.drift(&p.x, &stats);
            let g = model.diffusion(&p.x, &stats);
            let x_dot_f: f64 = p.x.iter().zip(&f).map(|(a, b)| a * b).sum();
            2.0 * x_dot_f + norm_sq(&g) + params.lambda1 * norm_sq(&p.x)
                - params.lambda2 * stats.second_moment
                - params.c
        })
        .collect()
}

fn worst(margins: &[f64]) -> Result<MarginReport> {
    let (worst_probe, worst_margin) = margins
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| TemError::config("probes", "at least one probe is required"))?;
    Ok(MarginReport {
        worst_margin,
        worst_probe,
        probes: margins.len(),
    })
}

/// Probes the model's declared dissipativity parameters on sampled points.
pub fn check_dissipativity(model: &ModelSpec, probes: &[Probe]) -> Result<MarginReport> {
    let params = model.dissipativity.ok_or_else(|| {
        TemError::config(
            "model.dissipativity",
            "model declares no dissipativity parameters",
        )
    })?;
    worst(&dissipativity_margins(model, params, probes))
}

/// Searches the grid for the first `(lambda1, lambda2, c)` with `lambda1 > lambda2`
/// whose worst margin is nonpositive, preferring small `c` then large `lambda1 - lambda2`.
pub fn search_dissipativity(
    model: &ModelSpec,
    probes: &[Probe],
    lambda1_grid: &[f64],
    lambda2_grid: &[f64],
    c_grid: &[f64],
) -> Option<(Dissipativity, MarginReport)> {
    let mut cs = c_grid.to_vec();
    cs.sort_by(f64::total_cmp);
    for &c in &cs {
        let mut best: Option<(Dissipativity, MarginReport)> = None;
        for &lambda1 in lambda1_grid {
            for &lambda2 in lambda2_grid {
                if !(lambda1 > lambda2 && lambda2 >= 0.0) {
                    continue;
                }
                let params = Dissipativity {
                    lambda1,
                    lambda2,
                    c,
                };
                let report = worst(&dissipativity_margins(model, params, probes)).ok()?;
                let gap = lambda1 - lambda2;
                if report.consistent()
                    && best
                        .as_ref()
                        .is_none_or(|(b, _)| gap > b.lambda1 - b.lambda2)
                {
                    best = Some((params, report));
                }
            }
        }
        if best.is_some() {
            return best;
        }
    }
    None
}

/// A pair of probes for the contraction condition.
#[derive(Debug, Clone)]
pub struct ProbePair {
    pub first: Probe,
    pub second: Probe,
}

/// Evaluates the contraction inequality margin on probe pairs, using the exact
/// (d = 1) or matched-coupling W2 between the two probe measures.
pub fn check_contraction(model: &ModelSpec, pairs: &[ProbePair]) -> Result<MarginReport> {
    let params = model.contraction.ok_or_else(|| {
        TemError::config(
            "model.contraction",
            "model declares no contraction parameters",
        )
    })?;
    let mut margins = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let (a, b) = (&pair.first, &pair.second);
        let (sa, sb) = (a.mu.stats(), b.mu.stats());
        let df: Vec<f64> = model
            .drift(&a.x, &sa)
            .iter()
            .zip(model.drift(&b.x, &sb))
            .map(|(u, v)| u - v)
            .collect();
        let dg: Vec<f64> = model
            .diffusion(&a.x, &sa)
            .iter()
            .zip(model.diffusion(&b.x, &sb))
            .map(|(u, v)| u - v)
            .collect();
        let dx: Vec<f64> = a.x.iter().zip(&b.x).map(|(u, v)| u - v).collect();
        let w2 = crate::measure::w2_default(&a.mu, &b.mu)?.value;
        let dx_dot_df: f64 = dx.iter().zip(&df).map(|(u, v)| u * v).sum();
        margins.push(
            2.0 * dx_dot_df + norm_sq(&dg) + params.lambda1 * norm_sq(&dx)
                - params.lambda2 * w2 * w2,
        );
    }
    worst(&margins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirac(v: f64) -> MeasureStats {
        MeasureStats::dirac(&[v])
    }

    #[test]
    fn default_rules_match_closed_form_radii() {
        let dt: f64 = 1.0 / 64.0;
        let r = builtin_vol32().default_rule().unwrap().radius(dt).unwrap();
        assert!((r - (2.0 * dt.powf(-1.0 / 3.0) - 1.0)).abs() < 1e-12);
        let r = builtin_double_well()
            .default_rule()
            .unwrap()
            .radius(dt)
            .unwrap();
        assert!((r - (2.0 * dt.powf(-1.0 / 3.0) - 1.0).sqrt()).abs() < 1e-12);
        for name in ["linear", "zero", "double_well_free"] {
            model_by_name(name)
                .unwrap()
                .default_rule()
                .unwrap()
                .radius(1.0)
                .unwrap();
        }
    }

    #[test]
    fn measure_dependence_probe() {
        assert!(builtin_vol32().depends_on_measure());
        assert!(builtin_double_well().depends_on_measure());
        assert!(!double_well_interaction_free().depends_on_measure());
        assert!(!linear_sanity().depends_on_measure());
    }

    #[test]
    fn vol32_examples() {
        let m = builtin_vol32();
        assert_eq!(m.drift(&[1.0], &dirac(1.0)), vec![-2.0]);
        assert_eq!(m.drift(&[0.0], &dirac(0.0)), vec![0.0]);
        assert_eq!(m.diffusion(&[0.0], &dirac(0.0)), vec![0.0]);
        let sym = EmpiricalMeasure::from_scalars(&[1.0, -1.0]).unwrap();
        assert_eq!(m.drift_at(&[2.0], &sym), vec![-8.0]);
        assert_eq!((m.alpha, m.trunc_constant), (1.0, 8.0));
    }

    #[test]
    fn double_well_examples() {
        let m = builtin_double_well();
        assert_eq!(m.drift(&[1.0], &dirac(0.0)), vec![-4.0]);
        assert_eq!(m.diffusion(&[1.0], &dirac(-3.0)), vec![0.0]);
        assert_eq!(m.drift(&[-1.0], &dirac(1.0)), vec![5.0]);
        assert_eq!(m.drift(&[0.0], &dirac(0.0)), vec![0.0]);
        // g(0, d0) = 1/2 for this model; K = 12 still dominates |g(0,d0)|^2.
        assert_eq!(m.diffusion(&[0.0], &dirac(0.0)), vec![0.5]);
        assert_eq!((m.alpha, m.trunc_constant), (2.0, 12.0));
    }

    #[test]
    fn drifts_are_odd_for_centred_measures() {
        let centred = EmpiricalMeasure::from_scalars(&[-2.0, 0.5, 1.5]).unwrap();
        for m in [builtin_vol32(), builtin_double_well()] {
            for x in [0.1, 0.7, 1.0, 2.5, 13.0] {
                let plus = m.drift_at(&[x], &centred)[0];
                let minus = m.drift_at(&[-x], &centred)[0];
                assert_eq!(plus, -minus, "{} at {x}", m.name);
            }
        }
    }

    #[test]
    fn construction_enforces_trunc_constant() {
        let coeffs = FnCoefficients::new(
            |_: &[f64], _: &MeasureStats, out: &mut [f64]| out[0] = 3.0,
            |_: &[f64], _: &MeasureStats, out: &mut [f64]| out[0] = 0.0,
        );
        let err = ModelSpec::new("shifted", 1, 1, 1.0, 2.0, Arc::new(coeffs)).unwrap_err();
        assert!(matches!(err, TemError::Config { ref field, .. } if field == "model.K"));
    }

    #[test]
    fn vol32_probe_margin() {
        let m = builtin_vol32();
        let probe = Probe {
            x: vec![1.0],
            mu: EmpiricalMeasure::from_scalars(&[1.0]).unwrap(),
        };
        let report = check_dissipativity(&m, &[probe]).unwrap();
        assert!((report.worst_margin - (-1.75)).abs() < 1e-15);
        assert!(report.consistent());
    }

    #[test]
    fn origin_probe_is_consistent() {
        let m = builtin_vol32();
        let probe = Probe {
            x: vec![0.0],
            mu: EmpiricalMeasure::from_scalars(&[0.0]).unwrap(),
        };
        assert!(check_dissipativity(&m, &[probe]).unwrap().worst_margin <= 0.0);
    }

    #[test]
    fn missing_parameters_is_config_error() {
        let m = zero_dynamics(1);
        assert!(matches!(
            check_dissipativity(&m, &[]),
            Err(TemError::Config { .. })
        ));
        assert!(matches!(
            check_contraction(&m, &[]),
            Err(TemError::Config { .. })
        ));
    }

    #[test]
    fn lookup_by_name() {
        assert_eq!(model_by_name("vol32").unwrap().name, "vol32");
        assert_eq!(model_by_name("double_well").unwrap().name, "double_well");
        assert!(matches!(
            model_by_name("nope"),
            Err(TemError::UnknownModel(_))
        ));
        let names: Vec<_> = list_models().into_iter().map(|s| s.name).collect();
        assert!(names.contains(&"vol32".to_string()));
        assert!(names.contains(&"double_well".to_string()));
    }
}
