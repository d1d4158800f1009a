use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tem_core::model::list_models;
use tem_core::{ExperimentKind, RunConfig, TemError};

/// Truncated Euler-Maruyama particle experiments for McKean-Vlasov SDEs.
#[derive(Parser)]
#[command(name = "tem", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Strong convergence order in the step size (RMSE vs a fine reference).
    Convergence(RunArgs),
    /// TEM vs EM on shared noise from a large deterministic start.
    Stability(RunArgs),
    /// Running maximum of the empirical second moment over a long horizon.
    Moments(RunArgs),
    /// Long-time snapshots from several initial laws.
    Invariant(RunArgs),
    /// Mean W2^2 between M-particle and large-M terminal laws.
    Chaos(RunArgs),
    /// Mean W_q^q of i.i.d. empirical measures against the target law.
    Fournier(RunArgs),
    /// Single run with moment, path and snapshot observers.
    Simulate(RunArgs),
    /// Run the experiment named in the config, or the one given here.
    Run {
        kind: Option<String>,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Built-in models and their constants.
    ListModels {
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config (a report.json is accepted too).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Report directory [default: the config's `out`, else reports/<kind>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Field override, e.g. `--set truncation.K=10` or `--set M=200` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Exit status and error record class.
fn classify(e: &TemError) -> (u8, &'static str, Option<String>) {
    match e {
        TemError::Config { field, .. } => (2, "config", Some(field.clone())),
        TemError::DegenerateGrowth => (2, "config", Some("truncation.alpha".into())),
        TemError::Json(_) => (2, "config", None),
        TemError::UnknownModel(_) => (3, "unknown_model", Some("model".into())),
        TemError::NonDyadic { field, .. } => (4, "non_dyadic", Some(field.clone())),
        TemError::StepSizeTooLarge { .. } => (5, "step_size", Some("dt".into())),
        TemError::NumericOverflow { .. } => (6, "numeric", None),
        TemError::Io(_) | TemError::Csv(_) => (7, "io", None),
        TemError::Domain(_) | TemError::Unsupported(_) => (8, "domain", None),
    }
}

fn fail(e: &TemError) -> ExitCode {
    let (code, kind, field) = classify(e);
    let record = json!({
        "error": kind,
        "field": field,
        "message": e.to_string(),
        "exit_code": code,
    });
    eprintln!("{record}");
    ExitCode::from(code)
}

fn run(kind: Option<ExperimentKind>, args: RunArgs) -> Result<(), TemError> {
    let mut overrides = args
        .overrides
        .iter()
        .map(|s| tem_core::config::parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let config = match &args.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None => RunConfig::from_value(json!({}), &overrides)?,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| TemError::config("threads", e.to_string()))?;
    let report = pool.install(|| config.run(kind))?;
    let out = args
        .out
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("reports").join(report.kind.as_str()));
    report.write_dir(&out)?;
    let summary = json!({
        "kind": report.kind.as_str(),
        "out": out.display().to_string(),
        "tables": report.tables.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
        "stats": serde_json::from_str::<serde_json::Value>(&report.to_json_string()?)?["stats"],
        "flags": report.flags,
        "wall_clock_secs": report.wall_clock_secs,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn print_models(as_json: bool) -> Result<(), TemError> {
    let models = list_models();
    if as_json {
        println!("{}", serde_json::to_string_pretty(&models)?);
        return Ok(());
    }
    for m in models {
        let diss = m.dissipativity.map_or("-".to_string(), |d| {
            format!("({}, {}, {})", d.lambda1, d.lambda2, d.c)
        });
        let contr = m.contraction.map_or("-".to_string(), |c| {
            format!("({}, {})", c.lambda1, c.lambda2)
        });
        println!(
            "{:<17} d={} m={} alpha={} L={} K={} dissipativity={} contraction={}\n    {}",
            m.name,
            m.dim_state,
            m.dim_noise,
            m.alpha,
            m.growth_l,
            m.trunc_constant,
            diss,
            contr,
            m.description
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convergence(a) => run(Some(ExperimentKind::Convergence), a),
        Command::Stability(a) => run(Some(ExperimentKind::Stability), a),
        Command::Moments(a) => run(Some(ExperimentKind::Moments), a),
        Command::Invariant(a) => run(Some(ExperimentKind::Invariant), a),
        Command::Chaos(a) => run(Some(ExperimentKind::Chaos), a),
        Command::Fournier(a) => run(Some(ExperimentKind::Fournier), a),
        Command::Simulate(a) => run(Some(ExperimentKind::Simulate), a),
        Command::Run { kind, args } => match kind.as_deref().map(|k| {
            ExperimentKind::parse(k).ok_or_else(|| {
                TemError::config("experiment", format!("unknown experiment kind `{k}`"))
            })
        }) {
            Some(Err(e)) => Err(e),
            Some(Ok(k)) => run(Some(k), args),
            None => run(None, args),
        },
        Command::ListModels { json } => print_models(json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
