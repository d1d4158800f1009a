//! JSON run configurations: parsing, dotted overrides, defaults, validation and dispatch.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, TemError};
use crate::experiments::*;
use crate::model::{model_by_name, ModelSpec};
use crate::noise::dyadic_level;
use crate::report::{ExperimentKind, ExperimentReport};
use crate::scheme::{InitSpec, Observers, Scheme};
use crate::truncation::{polynomial_rule, rate_kappa, TruncationRule, DEFAULT_KAPPA};

/// Truncation overrides; unset entries fall back to the model's constants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    /// Defaults to 1/3, or to `q alpha / (2(p - q))` when `q` and `p` are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Project the initial states onto the truncation ball (default true).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate_initial: Option<bool>,
}

/// Target law of the i.i.d. rate probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerConfig {
    Normal {
        mean: f64,
        sd: f64,
    },
    Constant {
        x0: f64,
    },
    /// Terminal law of the configured model (which must ignore the measure),
    /// simulated with the run's `dt`, `T` and `init`.
    ModelLaw,
}

/// A run configuration. Field names follow the JSON keys; everything except
/// `seed` has a per-experiment default, and the resolved values are echoed in
/// `report.json` so a report can be rerun as a config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationConfig>,
    #[serde(default, rename = "M", skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dts: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_dt: Option<f64>,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, rename = "T_list", skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, rename = "M_list", skip_serializing_if = "Option::is_none")]
    pub m_list: Option<Vec<usize>>,
    #[serde(default, rename = "M_ref", skip_serializing_if = "Option::is_none")]
    pub m_ref: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inits: Option<Vec<InitSpec>>,
    /// Deterministic start of the stability study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observers: Option<Observers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_particles: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_floor_init: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    /// Output directory; never echoed, so reports do not depend on where they are written.
    #[serde(default, skip_serializing)]
    pub out: Option<String>,
}

/// Sets `key` (dotted path, e.g. `truncation.K`) to `raw`, parsed as JSON when
/// possible and as a string otherwise.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(TemError::config(
            key,
            "override key must be a dotted field path",
        ));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert(Value::Object(Default::default()));
    }
    unreachable!("key has at least one segment")
}

/// Parses `key=value`.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| TemError::config(arg, "override must look like key=value"))
}

/// Error for a serde failure, naming the offending field when serde reports one.
fn parse_error(e: serde_json::Error) -> TemError {
    let msg = e.to_string();
    let field = ["unknown field `", "missing field `", "unknown variant `"]
        .iter()
        .find_map(|p| msg.split(p).nth(1).and_then(|r| r.split('`').next()))
        .unwrap_or("config")
        .to_string();
    TemError::config(field, msg)
}

impl RunConfig {
    /// Builds a config from JSON. A `report.json` is accepted too: its `config`
    /// echo is used.
    pub fn from_value(mut doc: Value, overrides: &[(String, String)]) -> Result<Self> {
        if doc.get("config").is_some_and(Value::is_object) && doc.get("kind").is_some() {
            doc = doc["config"].take();
        }
        if !doc.is_object() {
            return Err(TemError::config(
                "config",
                "top level must be a JSON object",
            ));
        }
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        serde_json::from_value(doc).map_err(parse_error)
    }

    pub fn from_json_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(parse_error)?;
        Self::from_value(doc, overrides)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        model_by_name(self.model.as_deref().unwrap_or("vol32"))
    }

    /// Truncation rule from the model constants and the `truncation` block.
    pub fn rule(&self, model: &ModelSpec) -> Result<TruncationRule> {
        let t = self.truncation.clone().unwrap_or_default();
        let alpha = t.alpha.unwrap_or(model.alpha);
        let kappa = match (t.kappa, t.q, t.p) {
            (Some(k), _, _) => k,
            (None, Some(q), Some(p)) => rate_kappa(q, p, alpha)?,
            (None, None, None) => DEFAULT_KAPPA,
            _ => {
                return Err(TemError::config(
                    "truncation.p",
                    "give both q and p to derive kappa, or kappa directly",
                ))
            }
        };
        polynomial_rule(
            alpha,
            t.l.unwrap_or(model.growth_l),
            t.k.unwrap_or(model.trunc_constant),
            kappa,
        )
    }

    fn truncate_initial(&self) -> bool {
        self.truncation
            .as_ref()
            .and_then(|t| t.truncate_initial)
            .unwrap_or(true)
    }

    /// Fills every unset field with the default for `kind` and validates the result.
    pub fn resolve(&self, kind: Option<ExperimentKind>) -> Result<RunConfig> {
        let kind = match (kind, self.experiment) {
            (Some(a), Some(b)) if a != b => {
                return Err(TemError::config(
                    "experiment",
                    format!(
                        "config is for `{}` but `{}` was requested",
                        b.as_str(),
                        a.as_str()
                    ),
                ))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(TemError::config("experiment", "no experiment kind given")),
        };
        if self.seed.is_none() {
            return Err(TemError::config(
                "seed",
                "a seed is required so that every run is reproducible",
            ));
        }
        let mut c = self.clone();
        c.experiment = Some(kind);
        let model_name = c.model.get_or_insert_with(|| "vol32".to_string()).clone();
        let model = model_by_name(&model_name)?;
        let default_init = if model_name == "vol32" {
            InitSpec::constant(1.0)
        } else {
            InitSpec::standard_normal()
        };
        let mut truncation = c.truncation.take().unwrap_or_default();
        truncation.truncate_initial.get_or_insert(true);
        c.truncation = Some(truncation);
        match kind {
            ExperimentKind::Convergence => {
                c.particles.get_or_insert(500);
                c.dts
                    .get_or_insert_with(|| (10..=14).map(|k| 2f64.powi(-k)).collect());
                c.ref_dt.get_or_insert(2f64.powi(-16));
                c.horizon.get_or_insert(1.0);
                c.init.get_or_insert(default_init);
            }
            ExperimentKind::Stability => {
                c.particles.get_or_insert(2000);
                c.dt.get_or_insert(0.05);
                c.horizon.get_or_insert(10.0);
                c.x0.get_or_insert_with(|| vec![18.0; model.dim_state]);
                c.path_particles.get_or_insert_with(|| (0..5).collect());
            }
            ExperimentKind::Moments => {
                c.particles.get_or_insert(1000);
                c.dt.get_or_insert(0.05);
                c.horizon.get_or_insert(50.0);
                c.init.get_or_insert(default_init);
            }
            ExperimentKind::Invariant => {
                c.particles.get_or_insert(2000);
                c.dt.get_or_insert(0.01);
                c.times
                    .get_or_insert_with(|| vec![0.2, 0.4, 1.0, 10.0, 15.0, 20.0, 30.0]);
                let inits = c.inits.get_or_insert_with(|| {
                    vec![
                        InitSpec::constant(1.0),
                        InitSpec::constant(-5.0),
                        InitSpec::standard_normal(),
                    ]
                });
                let last = inits.len().saturating_sub(1);
                c.noise_floor_init.get_or_insert(last);
                c.histogram.get_or_insert_with(HistogramSpec::default);
            }
            ExperimentKind::Chaos => {
                let m_list = c
                    .m_list
                    .get_or_insert_with(|| vec![32, 64, 128, 256, 512])
                    .clone();
                let max_m = m_list.iter().copied().max().unwrap_or(0);
                c.m_ref.get_or_insert(4 * max_m);
                c.dt.get_or_insert(2f64.powi(-7));
                c.horizon.get_or_insert(1.0);
                c.init.get_or_insert(InitSpec::standard_normal());
                c.replications.get_or_insert(100);
            }
            ExperimentKind::Fournier => {
                let sampler = c
                    .sampler
                    .get_or_insert(SamplerConfig::Normal { mean: 0.0, sd: 1.0 })
                    .clone();
                c.m_list
                    .get_or_insert_with(|| (6..=12).map(|k| 1usize << k).collect());
                c.replications.get_or_insert(200);
                c.q.get_or_insert(2.0);
                c.reference_size.get_or_insert(DEFAULT_REFERENCE_SIZE);
                if sampler == SamplerConfig::ModelLaw {
                    c.dt.get_or_insert(2f64.powi(-7));
                    c.horizon.get_or_insert(1.0);
                    c.init.get_or_insert(default_init);
                }
            }
            ExperimentKind::Simulate => {
                c.particles.get_or_insert(1000);
                c.dt.get_or_insert(2f64.powi(-7));
                c.horizon.get_or_insert(1.0);
                c.init.get_or_insert(default_init);
                c.scheme.get_or_insert(Scheme::Tem);
                c.observers.get_or_insert_with(|| Observers {
                    moments_every: Some(1),
                    ..Observers::default()
                });
            }
        }
        c.validate(kind, &model)?;
        Ok(c)
    }

    fn validate(&self, kind: ExperimentKind, model: &ModelSpec) -> Result<()> {
        let rule = self.rule(model)?;
        let positive = |field: &str, v: Option<usize>| match v {
            Some(0) => Err(TemError::config(field, "must be positive")),
            _ => Ok(()),
        };
        positive("M", self.particles)?;
        positive("replications", self.replications)?;
        positive("reference_size", self.reference_size)?;
        if let Some(dt) = self.dt {
            rule.radius(dt)?;
        }
        if let Some(t) = self.horizon {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(TemError::config("T", "horizon must be finite and >= 0"));
            }
        }
        for (field, list) in [
            ("dts", self.dts.as_ref().map(Vec::len)),
            ("T_list", self.times.as_ref().map(Vec::len)),
            ("M_list", self.m_list.as_ref().map(Vec::len)),
            ("inits", self.inits.as_ref().map(Vec::len)),
        ] {
            if list == Some(0) {
                return Err(TemError::config(field, "list must not be empty"));
            }
        }
        if let Some(m_list) = &self.m_list {
            if m_list.contains(&0) {
                return Err(TemError::config(
                    "M_list",
                    "particle counts must be positive",
                ));
            }
        }
        if kind == ExperimentKind::Convergence {
            let ref_dt = self.ref_dt.expect("resolved");
            rule.radius(ref_dt).map_err(|e| field_error(e, "ref_dt"))?;
            for &dt in self.dts.as_deref().unwrap_or_default() {
                rule.radius(dt)?;
                dyadic_level(dt, ref_dt).map_err(|e| field_error(e, "dts"))?;
            }
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != model.dim_state {
                return Err(TemError::config(
                    "x0",
                    format!("expected {} coordinates", model.dim_state),
                ));
            }
        }
        if kind == ExperimentKind::Fournier
            && self.sampler == Some(SamplerConfig::ModelLaw)
            && model.depends_on_measure()
        {
            return Err(TemError::config(
                "sampler",
                format!(
                    "model `{}` interacts through the measure; its particles are not i.i.d.",
                    model.name
                ),
            ));
        }
        Ok(())
    }

    /// Resolves, runs and returns the report, with the resolved config echoed.
    pub fn run(&self, kind: Option<ExperimentKind>) -> Result<ExperimentReport> {
        let c = self.resolve(kind)?;
        let model = c.model_spec()?;
        let rule = c.rule(&model)?;
        let seed = c.seed.expect("resolved");
        let truncate_initial = c.truncate_initial();
        let init = || c.init.clone().expect("resolved");
        let start = Instant::now();
        let mut report = match c.experiment.expect("resolved") {
            ExperimentKind::Convergence => convergence_experiment(
                &model,
                &rule,
                &ConvergenceParams {
                    particles: c.particles.expect("resolved"),
                    dts: c.dts.clone().expect("resolved"),
                    ref_dt: c.ref_dt.expect("resolved"),
                    horizon: c.horizon.expect("resolved"),
                    init: init(),
                    seed,
                    truncate_initial,
                },
            )?,
            ExperimentKind::Stability => stability_experiment(
                &model,
                &rule,
                &StabilityParams {
                    particles: c.particles.expect("resolved"),
                    dt: c.dt.expect("resolved"),
                    horizon: c.horizon.expect("resolved"),
                    x0: c.x0.clone().expect("resolved"),
                    seed,
                    truncate_initial,
                    path_particles: c.path_particles.clone().expect("resolved"),
                },
            )?,
            ExperimentKind::Moments => moment_bound_experiment(
                &model,
                &rule,
                &MomentBoundParams {
                    particles: c.particles.expect("resolved"),
                    dt: c.dt.expect("resolved"),
                    horizon: c.horizon.expect("resolved"),
                    init: init(),
                    seed,
                    truncate_initial,
                },
            )?,
            ExperimentKind::Invariant => invariant_measure_experiment(
                &model,
                &rule,
                &InvariantParams {
                    particles: c.particles.expect("resolved"),
                    dt: c.dt.expect("resolved"),
                    times: c.times.clone().expect("resolved"),
                    inits: c.inits.clone().expect("resolved"),
                    seed,
                    truncate_initial,
                    noise_floor_init: c.noise_floor_init.expect("resolved"),
                    histogram: c.histogram.expect("resolved"),
                },
            )?,
            ExperimentKind::Chaos => chaos_experiment(
                &model,
                &rule,
                &ChaosParams {
                    m_list: c.m_list.clone().expect("resolved"),
                    m_ref: c.m_ref.expect("resolved"),
                    dt: c.dt.expect("resolved"),
                    horizon: c.horizon.expect("resolved"),
                    init: init(),
                    replications: c.replications.expect("resolved"),
                    seed,
                    truncate_initial,
                },
            )?,
            ExperimentKind::Fournier => {
                let params = FournierParams {
                    m_list: c.m_list.clone().expect("resolved"),
                    replications: c.replications.expect("resolved"),
                    q: c.q.expect("resolved"),
                    dim: model.dim_state,
                    reference_size: c.reference_size.expect("resolved"),
                    seed,
                };
                match c.sampler.clone().expect("resolved") {
                    SamplerConfig::Normal { mean, sd } => {
                        fournier_rate_probe(&NormalSampler { mean, sd }, &params)?
                    }
                    SamplerConfig::Constant { x0 } => {
                        fournier_rate_probe(&ConstantSampler(x0), &params)?
                    }
                    SamplerConfig::ModelLaw => fournier_rate_probe(
                        &ModelLawSampler {
                            model: &model,
                            rule: &rule,
                            dt: c.dt.expect("resolved"),
                            horizon: c.horizon.expect("resolved"),
                            init: init(),
                            truncate_initial,
                        },
                        &params,
                    )?,
                }
            }
            ExperimentKind::Simulate => simulate_experiment(
                &model,
                &rule,
                &SimulateParams {
                    particles: c.particles.expect("resolved"),
                    dt: c.dt.expect("resolved"),
                    horizon: c.horizon.expect("resolved"),
                    init: init(),
                    seed,
                    scheme: c.scheme.expect("resolved"),
                    truncate_initial,
                    observers: c.observers.clone().expect("resolved"),
                },
            )?,
        };
        report.wall_clock_secs = start.elapsed().as_secs_f64();
        report.config = serde_json::to_value(&c)?;
        Ok(report)
    }
}

/// Re-labels the field of a configuration-type error.
fn field_error(e: TemError, field: &str) -> TemError {
    match e {
        TemError::NonDyadic { coarse, fine, .. } => TemError::NonDyadic {
            field: field.to_string(),
            coarse,
            fine,
        },
        TemError::Config { message, .. } => TemError::config(field, message),
        other => other,
    }
}
